"""Static word-embedding tables: legacy binary loader, phrase embedding, cosine similarity."""

from __future__ import annotations

import string
from pathlib import Path
from typing import BinaryIO, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "EmbeddingError",
    "EmbeddingFormatError",
    "EmbeddingTable",
    "load_embedding_table",
    "write_embedding_table",
    "tokenize",
    "embed_phrase",
    "cosine",
    "similarity",
]


class EmbeddingError(ValueError):
    """Invalid vector arithmetic (zero vector, dimension mismatch)."""


class EmbeddingFormatError(EmbeddingError):
    """Malformed or truncated embedding file."""


class EmbeddingTable:
    """Immutable token -> float32 vector map with a declared dimension."""

    def __init__(self, vectors: Mapping[str, np.ndarray], dim: int):
        if dim <= 0:
            raise EmbeddingError(f"dimension must be positive, got {dim}")
        self.dim = dim
        self._vectors: dict[str, np.ndarray] = {}
        for token, vec in vectors.items():
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (dim,):
                raise EmbeddingError(f"vector for {token!r} has shape {arr.shape}, expected ({dim},)")
            arr = arr.copy()
            arr.setflags(write=False)
            self._vectors[token] = arr

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token: str) -> bool:
        return token in self._vectors

    def lookup(self, token: str) -> np.ndarray | None:
        return self._vectors.get(token)

    @property
    def vocabulary(self) -> Iterable[str]:
        return self._vectors.keys()


def _read_token(fh: BinaryIO) -> str:
    """Read one space-terminated token, skipping newline padding between entries."""
    chars = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise EmbeddingFormatError("file ended inside a token")
        if ch in (b"\n", b"\r") and not chars:
            continue
        if ch == b" ":
            return bytes(chars).decode("utf-8")
        chars += ch


def load_embedding_table(path: str | Path, limit: int | None = None) -> EmbeddingTable:
    """Load a legacy binary embedding file.

    Layout: an ASCII header line "<vocab_size> <dim>", then per entry a
    space-terminated token followed by dim little-endian float32 values and
    an optional newline. `limit` keeps only the first entries, which in
    frequency-sorted files are the most common words.
    """
    path = Path(path)
    with path.open("rb") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingFormatError(f"malformed header {header!r}")
        try:
            vocab_size, dim = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise EmbeddingFormatError(f"malformed header {header!r}") from exc
        if vocab_size < 0 or dim <= 0:
            raise EmbeddingFormatError(f"invalid header sizes: vocab={vocab_size} dim={dim}")

        count = vocab_size if limit is None else min(limit, vocab_size)
        block = dim * 4
        vectors: dict[str, np.ndarray] = {}
        for i in range(count):
            try:
                token = _read_token(fh)
            except EmbeddingFormatError as exc:
                raise EmbeddingFormatError(f"entry {i}: {exc} (header promised {vocab_size})") from exc
            raw = fh.read(block)
            if len(raw) < block:
                raise EmbeddingFormatError(
                    f"entry {i} ({token!r}): truncated vector block, got {len(raw)} of {block} bytes"
                )
            vectors[token] = np.frombuffer(raw, dtype="<f4")
    return EmbeddingTable(vectors, dim)


def write_embedding_table(path: str | Path, vectors: Mapping[str, Sequence[float]]) -> None:
    """Write vectors in the same binary layout load_embedding_table reads.

    Exists for fixtures and for exporting trimmed tables; the dimension is
    taken from the first vector.
    """
    items = list(vectors.items())
    if not items:
        raise EmbeddingError("refusing to write an empty table")
    dim = len(items[0][1])
    with Path(path).open("wb") as fh:
        fh.write(f"{len(items)} {dim}\n".encode("ascii"))
        for token, vec in items:
            arr = np.asarray(vec, dtype="<f4")
            if arr.shape != (dim,):
                raise EmbeddingError(f"vector for {token!r} has shape {arr.shape}, expected ({dim},)")
            fh.write(token.encode("utf-8") + b" ")
            fh.write(arr.tobytes())
            fh.write(b"\n")


def tokenize(phrase: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation."""
    tokens = [tok.strip(string.punctuation) for tok in phrase.lower().split()]
    return [tok for tok in tokens if tok]


def embed_phrase(table: EmbeddingTable, phrase: str) -> np.ndarray | None:
    """Embed a phrase as the mean of its in-vocabulary token vectors.

    A single-token phrase returns the stored vector itself (bit-for-bit);
    None marks a fully out-of-vocabulary phrase. Raises on empty phrases.
    """
    tokens = tokenize(phrase)
    if not tokens:
        raise EmbeddingError(f"cannot embed empty phrase {phrase!r}")
    found = [table.lookup(tok) for tok in tokens]
    found = [vec for vec in found if vec is not None]
    if not found:
        return None
    if len(found) == 1:
        return found[0]
    return np.mean(np.stack(found).astype(np.float64), axis=0)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two non-zero vectors of equal dimension."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise EmbeddingError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine undefined for zero vectors")
    return float(np.dot(av, bv) / (na * nb))


def similarity(table: EmbeddingTable, text_a: str, text_b: str) -> float:
    """Phrase similarity with the out-of-vocabulary policy applied.

    Either side being fully out of vocabulary yields 0, so an unknown name
    can never clear a selection threshold on its own.
    """
    ea = embed_phrase(table, text_a)
    eb = embed_phrase(table, text_b)
    if ea is None or eb is None:
        return 0.0
    return cosine(ea, eb)
