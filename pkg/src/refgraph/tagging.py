"""Deterministic part-of-speech tagging for referring expressions.

The bundled tagger needs no external NLP runtime: a closed-class word list,
a noun lexicon seeded with common referents, and suffix heuristics cover the
short noun-heavy queries this pipeline sees. Anything smarter (a spaCy
wrapper, say) can be swapped in through the PosTagger protocol.
"""

from __future__ import annotations

import re
from typing import Protocol, Sequence

__all__ = ["PosTagger", "LexiconTagger", "word_tokenize"]

_WORD_RE = re.compile(r"[A-Za-z][A-Za-z'\-]*|\d+")


def word_tokenize(text: str) -> list[str]:
    """Split text into word tokens, dropping punctuation."""
    return _WORD_RE.findall(text)


class PosTagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> list[tuple[str, str]]:
        """Return (token, tag) pairs using coarse universal-style tags."""
        ...


_PRONOUNS = frozenset(
    """i you he she it we they me him her us them mine yours his hers ours theirs
    one ones someone anyone something anything itself himself herself themselves""".split()
)

_DETERMINERS = frozenset(
    """a an the this that these those some any no every each either neither both
    all another""".split()
)

_ADPOSITIONS = frozenset(
    """on in at of to from with without near by under underneath over above below
    behind beside besides between beyond into onto off up down across through
    against along around inside outside next toward towards upon among amongst
    past during within""".split()
)

_CONJUNCTIONS = frozenset("and or but nor".split())

_AUXILIARIES = frozenset(
    """is are was were be been being am has have had do does did can could will
    would shall should may might must not n't""".split()
)

_VERBS = frozenset(
    """wear hold stand sit walk run eat ride carry hang lean point smile jump
    park sleep kneel squat reach stare gaze""".split()
)

_ADJECTIVES = frozenset(
    """left right top bottom middle center centre front back rear upper lower
    leftmost rightmost topmost bottommost far farthest furthest close closest
    nearest big bigger biggest small smaller smallest large larger largest
    little tall taller tallest short shorter shortest long longer longest
    young younger youngest old older oldest new newer newest red blue green
    yellow black white brown pink purple gray grey golden silver tan beige
    dark darker darkest light lighter lightest bright striped plaid checkered
    wooden metal plastic empty full open closed first second third fourth
    fifth last only same different weird skinny fat thin thick tiny huge""".split()
)

_ADVERBS = frozenset("very really quite almost partially half mostly".split())

_NUMBER_WORDS = frozenset("two three four five six seven eight nine ten zero".split())

# COCO category tokens plus referents that dominate grounding queries.
_NOUNS = frozenset(
    """person bicycle car motorcycle airplane bus train truck boat traffic
    hydrant sign meter bench bird cat dog horse sheep cow elephant bear zebra
    giraffe backpack umbrella handbag tie suitcase frisbee skis ski snowboard
    sports ball kite baseball bat glove skateboard surfboard tennis racket
    bottle wine glass cup fork knife spoon bowl banana apple sandwich orange
    broccoli carrot hot hotdog pizza donut doughnut cake chair couch potted
    plant bed dining table toilet tv television laptop mouse remote keyboard
    cell phone microwave oven toaster sink refrigerator book clock vase
    scissors teddy toothbrush drier dryer hair
    man men woman women guy guys girl girls boy boys kid kids child children
    lady ladies baby babies dude people player players skier surfer rider
    driver batter catcher pitcher
    thing stuff object item area part side corner edge piece slice half
    food animal fruit vegetable drink meat bread cheese egg salad soup
    water sky grass tree trees bush field mountain hill beach sand snow
    building house wall floor ground street road sidewalk fence roof door
    window shelf shelves lamp picture mirror plate napkin tray basket
    jacket shirt t-shirt tshirt sweater hat cap helmet dress pants shorts
    jeans coat scarf suit uniform shoe shoes sock socks boot boots
    bag box sofa desk counter cabinet drawer pillow blanket towel curtain
    pot pan container mug jar board pole post wire rope sign
    flower flowers leaf leaves branch stick rock stone
    hand hands arm arms leg legs head face foot feet ear ears eye eyes nose
    tail wing wheel wheels engine window seat handle button screen
    puppy kitten lamb calf foal chick""".split()
)

_NOUN_SUFFIXES = ("tion", "sion", "ness", "ment", "ship", "hood", "ity")


class LexiconTagger:
    """Lexicon-first tagger with suffix fallbacks; unknown content words default to NOUN."""

    def tag(self, tokens: Sequence[str]) -> list[tuple[str, str]]:
        return [(tok, self._tag_one(tok)) for tok in tokens]

    def _tag_one(self, token: str) -> str:
        low = token.lower()
        if low.isdigit():
            return "NUM"
        if low in _PRONOUNS:
            return "PRON"
        if low in _DETERMINERS:
            return "DET"
        if low in _ADPOSITIONS:
            return "ADP"
        if low in _CONJUNCTIONS:
            return "CCONJ"
        if low in _AUXILIARIES or low in _VERBS:
            return "VERB"
        if low in _NUMBER_WORDS:
            return "NUM"
        if low in _ADJECTIVES:
            return "ADJ"
        if low in _ADVERBS:
            return "ADV"
        if low in _NOUNS:
            return "NOUN"
        if len(low) > 4:
            if low.endswith(("ing", "ed")):
                return "VERB"
            if low.endswith("ly"):
                return "ADV"
            if low.endswith(_NOUN_SUFFIXES):
                return "NOUN"
            if low.endswith("est"):
                return "ADJ"
        if token[:1].isupper():
            return "PROPN"
        return "NOUN"
