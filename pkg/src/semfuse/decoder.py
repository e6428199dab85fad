"""Toy causal decoder standing in for the language model.

Consumes a visual-token prefix followed by text token embeddings. Visual
tokens attend freely among themselves and are visible everywhere; text
positions attend causally, so logits at text position i depend only on the
prefix and text positions <= i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import sinusoid_rows
from .errors import CapacityError, DegenerateInputError, ShapeError, VocabError
from .attention import AttentionWeights, cross_attention
from .tensor import (
    Parameter,
    Tensor,
    concat_rows,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    nll_rows,
    scaled_normal,
    slice_rows,
)


@dataclass(frozen=True)
class LMConfig:
    layers: int = 2
    heads: int = 2
    dim: int = 16
    vocab_size: int = 64
    max_seq_len: int = 128
    ffn_width: int = 32

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ShapeError("vocabulary must hold at least the reserved tokens")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ShapeError(f"width {self.dim} not divisible by {self.heads} heads")


def prefix_causal_mask(prefix_len: int, text_len: int) -> np.ndarray:
    """Visibility matrix: prefix sees prefix; text sees prefix and itself causally."""
    total = prefix_len + text_len
    allow = np.zeros((total, total), dtype=bool)
    allow[:, :prefix_len] = True
    for i in range(prefix_len, total):
        allow[i, prefix_len:i + 1] = True
    return allow


class _LMLayer:
    def __init__(self, cfg: LMConfig, rng, prefix: str):
        d = cfg.dim
        self.attn = AttentionWeights.create(d, rng, f"{prefix}.attn", "lm")
        self.ln1_g = Parameter(np.ones(d), f"{prefix}.ln1.g", "lm")
        self.ln1_b = Parameter(np.zeros(d), f"{prefix}.ln1.b", "lm")
        self.ln2_g = Parameter(np.ones(d), f"{prefix}.ln2.g", "lm")
        self.ln2_b = Parameter(np.zeros(d), f"{prefix}.ln2.b", "lm")
        self.ffn_w1 = Parameter(scaled_normal(rng, (d, cfg.ffn_width)),
                                f"{prefix}.ffn.w1", "lm")
        self.ffn_b1 = Parameter(np.zeros(cfg.ffn_width), f"{prefix}.ffn.b1", "lm")
        self.ffn_w2 = Parameter(scaled_normal(rng, (cfg.ffn_width, d)),
                                f"{prefix}.ffn.w2", "lm")
        self.ffn_b2 = Parameter(np.zeros(d), f"{prefix}.ffn.b2", "lm")

    def params(self):
        return self.attn.params() + [
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
            self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
        ]

    def forward(self, x: Tensor, heads: int, mask: np.ndarray) -> Tensor:
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        sa, _ = cross_attention(h, h, h, heads, self.attn, mask=mask)
        x = x + sa
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        ff = matmul(gelu(matmul(h, self.ffn_w1) + self.ffn_b1), self.ffn_w2) + self.ffn_b2
        return x + ff


class ToyDecoderLM:
    """Decoder-only transformer over [visual prefix; text tokens]."""

    def __init__(self, cfg: LMConfig, embedding: Parameter, rng: np.random.Generator):
        if embedding.data.shape != (cfg.vocab_size, cfg.dim):
            raise ShapeError(
                f"embedding table {embedding.data.shape} does not match config "
                f"({cfg.vocab_size}, {cfg.dim})")
        self.cfg = cfg
        self.embedding = embedding
        self.layers = [_LMLayer(cfg, rng, f"lm.layer{i}") for i in range(cfg.layers)]
        self.final_g = Parameter(np.ones(cfg.dim), "lm.final.g", "lm")
        self.final_b = Parameter(np.zeros(cfg.dim), "lm.final.b", "lm")
        self.head_w = Parameter(scaled_normal(rng, (cfg.dim, cfg.vocab_size)),
                                "lm.head.w", "lm")
        self.head_b = Parameter(np.zeros(cfg.vocab_size), "lm.head.b", "lm")
        self._pos = sinusoid_rows(cfg.max_seq_len, cfg.dim)

    def params(self):
        ps = [p for layer in self.layers for p in layer.params()]
        return ps + [self.final_g, self.final_b, self.head_w, self.head_b]

    def decode_logits(self, visual: Tensor | None, text_ids) -> Tensor:
        """Next-token logits for every text position: (L_text, vocab)."""
        text_ids = list(text_ids)
        if len(text_ids) == 0:
            raise ShapeError("need at least one text token")
        for i in text_ids:
            if not 0 <= i < self.cfg.vocab_size:
                raise VocabError(f"token id {i} outside vocabulary")
        prefix_len = 0
        if visual is not None:
            if visual.ndim != 2 or visual.data.shape[1] != self.cfg.dim:
                raise ShapeError(f"visual prefix must be (P, {self.cfg.dim})")
            prefix_len = visual.data.shape[0]
        total = prefix_len + len(text_ids)
        if total > self.cfg.max_seq_len:
            raise CapacityError(
                f"sequence of {total} tokens exceeds capacity {self.cfg.max_seq_len}")
        emb = embedding_lookup(self.embedding, text_ids)
        x = emb if visual is None else concat_rows([visual, emb])
        x = x + self._pos[:total]
        mask = prefix_causal_mask(prefix_len, len(text_ids))
        for layer in self.layers:
            x = layer.forward(x, self.cfg.heads, mask)
        x = layer_norm(x, self.final_g, self.final_b)
        text_part = slice_rows(x, prefix_len, total) if prefix_len else x
        return matmul(text_part, self.head_w) + self.head_b

    def greedy_decode(self, visual: Tensor | None, prompt_ids, eos_id: int,
                      max_new: int = 8) -> list:
        """Greedily extend the prompt until eos or the step limit; returns new ids."""
        ids = list(prompt_ids)
        out = []
        for _ in range(max_new):
            logits = self.decode_logits(visual, ids)
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == eos_id:
                break
            out.append(nxt)
            ids.append(nxt)
        return out


def nll_loss(logits: Tensor, targets, mask) -> Tensor:
    """Mean NLL over unmasked positions; prompt and pad positions are excluded."""
    m = np.asarray(mask, dtype=bool)
    if logits.ndim != 2 or m.shape != (logits.data.shape[0],):
        raise ShapeError("mask must have one entry per logit row")
    if not m.any():
        raise DegenerateInputError("all positions are masked out")
    return nll_rows(logits, targets, m)
