"""Caption tokenization, sentence vectors, and word-masking ablations.

Two sources of sentence vectors share one contract (a fixed-length float
vector per caption):

* :func:`encode_toy`: signed feature hashing of tokens with FNV-1a 64,
  L2-normalized.  Bucket is ``h % dim``; sign is ``+1`` when bit 63 of ``h``
  is clear, else ``-1``.
* :class:`EmbeddingFile`: externally precomputed vectors (e.g. transformer
  [CLS] states) in JSON Lines, ``{"dim": D}`` header followed by
  ``{"id": ..., "v": [...]}`` lines.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyCaption, FormatError, MissingEmbedding, ValidationError
from .rng import fnv1a64

DEFAULT_DIM = 768
UNK = "UNK"

_SPLIT = re.compile(r"[^0-9a-z]+")

DEFAULT_COLORS = frozenset("""
    red orange yellow green blue purple pink brown black white gray grey
    violet cyan magenta gold golden silver beige tan navy maroon teal
    turquoise olive lime
""".split())


@dataclass(frozen=True)
class TextEmbedding:
    values: np.ndarray
    source: str = "toy-hash"

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Lexicon:
    name: str
    words: frozenset

    def __post_init__(self):
        if not self.words:
            raise ValidationError(f"lexicon {self.name!r} is empty")
        bad = [w for w in self.words if not w or any(c.isspace() for c in w)]
        if bad:
            raise ValidationError(f"lexicon {self.name!r} has invalid tokens: {bad[:3]}")

    def __contains__(self, token):
        return token in self.words

    @classmethod
    def load(cls, path, name=None) -> "Lexicon":
        words = set()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.split("#", 1)[0].strip().lower()
            if line:
                words.add(line)
        return cls(name or Path(path).stem, frozenset(words))


COLOR_LEXICON = Lexicon("color", DEFAULT_COLORS)


def tokenize(caption: str) -> list:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _SPLIT.split(caption.lower()) if t]


def encode_toy(tokens, dim: int = DEFAULT_DIM) -> TextEmbedding:
    if not tokens:
        raise EmptyCaption("cannot encode an empty token list")
    v = np.zeros(dim)
    for tok in tokens:
        h = fnv1a64(tok)
        v[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(v)
    if norm == 0.0:
        # every bucket cancelled; fall back to the first token's bucket
        h = fnv1a64(tokens[0])
        v[h % dim] = -1.0 if h >> 63 else 1.0
        norm = 1.0
    return TextEmbedding(v / norm, "toy-hash")


def mask_words(tokens, lexicon: Lexicon | None) -> list:
    """Replace every token found in ``lexicon`` by ``"UNK"``."""
    if lexicon is None:
        return list(tokens)
    return [UNK if t in lexicon.words else t for t in tokens]


class EmbeddingFile:
    """Precomputed sentence vectors keyed by sample id."""

    def __init__(self, vectors: dict, dim: int):
        self.dim = dim
        self.vectors = vectors

    @classmethod
    def load(cls, path) -> "EmbeddingFile":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines:
            raise FormatError(f"{path}: empty embedding file")
        try:
            header = json.loads(lines[0])
            dim = int(header["dim"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise FormatError(f"{path}:1: first line must be {{\"dim\": int}}") from None
        vectors = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid, v = str(rec["id"]), rec["v"]
            except (json.JSONDecodeError, KeyError, TypeError):
                raise FormatError(f"{path}:{lineno}: malformed embedding line") from None
            if len(v) != dim:
                raise ValidationError(f"{path}:{lineno}: vector for {sid!r} has length {len(v)}, expected {dim}")
            vectors[sid] = np.asarray(v, dtype=np.float64)
        return cls(vectors, dim)

    def lookup(self, sid: str) -> TextEmbedding:
        try:
            return TextEmbedding(self.vectors[sid], "external-file")
        except KeyError:
            raise MissingEmbedding(f"no embedding for id {sid!r}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"dim": self.dim}) + "\n")
            for sid, v in self.vectors.items():
                fh.write(json.dumps({"id": sid, "v": [float(x) for x in v]}) + "\n")


def load_external(path, sid: str) -> TextEmbedding:
    return EmbeddingFile.load(path).lookup(sid)


class ToyEncoder:
    """Caption -> vector through tokenize, optional masking, and encode_toy."""

    def __init__(self, dim: int = DEFAULT_DIM, mask: Lexicon | None = None):
        self.dim = dim
        self.mask = mask

    def __call__(self, caption: str, sid: str | None = None) -> TextEmbedding:
        return encode_toy(mask_words(tokenize(caption), self.mask), self.dim)


class FileEncoder:
    """Looks vectors up by sample id; masking ablations are not applicable."""

    def __init__(self, table: EmbeddingFile):
        self.table = table
        self.dim = table.dim
        self.mask = None

    def __call__(self, caption: str, sid: str | None = None) -> TextEmbedding:
        return self.table.lookup(sid)
