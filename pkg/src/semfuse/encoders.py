"""Toy text encoder and image-feature provider.

The text side looks tokens up in a shared embedding table and maps them into
the image feature space with a small MLP, one row per token. The image side
either loads a stored feature grid or synthesizes one deterministically; it
stands in for a frozen vision encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, VocabError
from .tensor import Parameter, Tensor, embedding_lookup, gelu, matmul, scaled_normal
from .tensorio import read_tensor

PAD, BOS, EOS = 0, 1, 2
_RESERVED = ("[pad]", "[bos]", "[eos]")


class Vocabulary:
    """Ordered token strings; ids 0..2 are reserved for pad/bos/eos."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) != len(set(tokens)):
            raise VocabError("duplicate token strings")
        if len(tokens) < 4:
            raise VocabError("vocabulary needs at least 4 tokens")
        if tuple(tokens[:3]) != _RESERVED:
            raise VocabError(f"first three tokens must be {_RESERVED}")
        self.tokens = tokens
        self._ids = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    def encode(self, tokens) -> list:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids) -> list:
        out = []
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise VocabError(f"token id {i} out of range")
            out.append(self.tokens[i])
        return out

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        return cls(list(_RESERVED) + list(words))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text().splitlines())

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")


class TextEncoder:
    """Per-token MLP from embedding space into the image feature space."""

    def __init__(self, embedding: Parameter, dim: int, rng: np.random.Generator,
                 depth: int = 2, hidden: int | None = None):
        if depth not in (1, 2):
            raise ShapeError("encoder depth must be 1 or 2")
        emb_dim = embedding.data.shape[1]
        hidden = hidden if hidden is not None else dim
        self.embedding = embedding
        self.depth = depth
        if depth == 1:
            self.w1 = Parameter(scaled_normal(rng, (emb_dim, dim)),
                                "encoder.w1", "projector")
            self.b1 = Parameter(np.zeros(dim), "encoder.b1", "projector")
            self.w2 = None
            self.b2 = None
        else:
            self.w1 = Parameter(scaled_normal(rng, (emb_dim, hidden)),
                                "encoder.w1", "projector")
            self.b1 = Parameter(np.zeros(hidden), "encoder.b1", "projector")
            self.w2 = Parameter(scaled_normal(rng, (hidden, dim)),
                                "encoder.w2", "projector")
            self.b2 = Parameter(np.zeros(dim), "encoder.b2", "projector")

    def params(self):
        ps = [self.w1, self.b1]
        if self.depth == 2:
            ps += [self.w2, self.b2]
        return ps

    def encode(self, ids) -> Tensor:
        """Token ids -> (L, D) text features. Position-free: rows permute with ids."""
        ids = list(ids)
        if len(ids) == 0:
            raise ShapeError("cannot encode an empty sequence")
        vocab_size = self.embedding.data.shape[0]
        for i in ids:
            if not 0 <= i < vocab_size:
                raise VocabError(f"token id {i} outside table of size {vocab_size}")
        x = embedding_lookup(self.embedding, ids)
        x = matmul(x, self.w1) + self.b1
        if self.depth == 2:
            x = matmul(gelu(x), self.w2) + self.b2
        return x


@dataclass
class FeatureMap:
    """Square patch-feature grid produced by the (stand-in) vision encoder."""

    grid: Tensor

    def __post_init__(self):
        if self.grid.ndim != 3:
            raise ShapeError(f"feature map must be rank 3, got rank {self.grid.ndim}")
        if self.grid.data.shape[0] != self.grid.data.shape[1]:
            raise ShapeError(f"feature map must be square, got {self.grid.shape}")
        if not np.isfinite(self.grid.data).all():
            raise ShapeError("feature map contains non-finite entries")

    @property
    def side(self) -> int:
        return self.grid.data.shape[0]

    @property
    def dim(self) -> int:
        return self.grid.data.shape[2]


@dataclass(frozen=True)
class SyntheticImageSpec:
    side: int
    dim: int
    seed: int


def provide_image(source) -> FeatureMap:
    """Load a stored feature grid, or synthesize one from (side, dim, seed)."""
    if isinstance(source, SyntheticImageSpec):
        rng = np.random.default_rng(source.seed)
        return FeatureMap(Tensor(rng.standard_normal((source.side, source.side, source.dim))))
    return FeatureMap(Tensor(read_tensor(source)))


def sinusoid_rows(length: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """Fixed sinusoidal position table: row i encodes position i."""
    pos = np.arange(length)[:, None]
    idx = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (idx // 2)) / dim)
    table = np.where(idx % 2 == 0, np.sin(angles), np.cos(angles))
    return scale * table
