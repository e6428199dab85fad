"""Cross-modal fusion decoder and the gated residual combination.

The decoder treats text rows as queries and multi-scale image rows as keys
and values. Its output is folded back onto the per-patch visual tokens
through a projection plus a tanh-gated projected summary, so a zero gate
reproduces the plain projected visual tokens exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionWeights, cross_attention
from .encoders import FeatureMap
from .errors import ShapeError
from .pyramid import MultiScaleFeatures
from .tensor import (
    Parameter,
    Tensor,
    gelu,
    layer_norm,
    matmul,
    mean_rows,
    reshape,
    scaled_normal,
    tanh,
)

GATE_BETA_INIT = 0.2


@dataclass(frozen=True)
class FusionConfig:
    layers: int = 12
    heads: int = 4
    dim: int = 64
    ffn_width: int = 128

    def __post_init__(self):
        if self.layers < 1:
            raise ShapeError("fusion needs at least one layer")
        if self.heads < 1 or self.dim % self.heads != 0:
            raise ShapeError(f"width {self.dim} not divisible by {self.heads} heads")


class _DecoderLayer:
    def __init__(self, cfg: FusionConfig, rng, prefix: str):
        d = cfg.dim
        self.self_attn = AttentionWeights.create(d, rng, f"{prefix}.self", "fusion")
        self.cross_attn = AttentionWeights.create(d, rng, f"{prefix}.cross", "fusion")
        self.ln1_g = Parameter(np.ones(d), f"{prefix}.ln1.g", "fusion")
        self.ln1_b = Parameter(np.zeros(d), f"{prefix}.ln1.b", "fusion")
        self.ln2_g = Parameter(np.ones(d), f"{prefix}.ln2.g", "fusion")
        self.ln2_b = Parameter(np.zeros(d), f"{prefix}.ln2.b", "fusion")
        self.ln3_g = Parameter(np.ones(d), f"{prefix}.ln3.g", "fusion")
        self.ln3_b = Parameter(np.zeros(d), f"{prefix}.ln3.b", "fusion")
        self.ffn_w1 = Parameter(scaled_normal(rng, (d, cfg.ffn_width)),
                                f"{prefix}.ffn.w1", "fusion")
        self.ffn_b1 = Parameter(np.zeros(cfg.ffn_width), f"{prefix}.ffn.b1", "fusion")
        self.ffn_w2 = Parameter(scaled_normal(rng, (cfg.ffn_width, d)),
                                f"{prefix}.ffn.w2", "fusion")
        self.ffn_b2 = Parameter(np.zeros(d), f"{prefix}.ffn.b2", "fusion")

    def params(self):
        ps = self.self_attn.params() + self.cross_attn.params()
        ps += [self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b, self.ln3_g, self.ln3_b,
               self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2]
        return ps

    def forward(self, x: Tensor, memory: Tensor, heads: int):
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        sa, _ = cross_attention(h, h, h, heads, self.self_attn)
        x = x + sa
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        ca, attn = cross_attention(h, memory, memory, heads, self.cross_attn)
        x = x + ca
        h = layer_norm(x, self.ln3_g, self.ln3_b)
        ff = matmul(gelu(matmul(h, self.ffn_w1) + self.ffn_b1), self.ffn_w2) + self.ffn_b2
        return x + ff, attn


class FusionDecoder:
    """Pre-norm transformer decoder: text queries attend over image memory."""

    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers = [_DecoderLayer(cfg, rng, f"fusion.layer{i}") for i in range(cfg.layers)]

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def fuse(self, text_feats: Tensor, memory: MultiScaleFeatures):
        """(L, D) text rows + (M, D) image rows -> ((L, D) fused, per-layer attention).

        Attention arrays have shape (heads, L, M) and expose the cross-attention
        weights of every layer.
        """
        mem = memory.matrix
        if text_feats.ndim != 2 or text_feats.data.shape[1] != self.cfg.dim:
            raise ShapeError(
                f"text features must be (L, {self.cfg.dim}), got {text_feats.shape}")
        if mem.data.shape[1] != self.cfg.dim:
            raise ShapeError(
                f"memory width {mem.data.shape[1]} != fusion width {self.cfg.dim}")
        x = text_feats
        attn_maps = []
        for layer in self.layers:
            x, attn = layer.forward(x, mem, self.cfg.heads)
            attn_maps.append(attn)
        return x, attn_maps


@dataclass
class ConditionedVisualFeatures:
    """Per-patch visual tokens modulated by the question."""

    matrix: Tensor

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ShapeError("conditioned visual features must be 2-D")


class GateState:
    """Learnable scalar gate plus the two projection layers it mixes."""

    def __init__(self, dim: int, rng: np.random.Generator,
                 beta_init: float = GATE_BETA_INIT):
        # proj starts near identity so the conditioned tokens begin close to
        # the raw visual tokens; proj_g carries the gated text summary
        self.beta = Parameter(np.array(beta_init), "gate.beta", "gate")
        self.proj_w = Parameter(np.eye(dim) + 0.05 * rng.standard_normal((dim, dim)),
                                "gate.proj.w", "projector")
        self.proj_b = Parameter(np.zeros(dim), "gate.proj.b", "projector")
        self.proj_g_w = Parameter(scaled_normal(rng, (dim, dim)),
                                  "gate.proj_g.w", "projector")
        self.proj_g_b = Parameter(np.zeros(dim), "gate.proj_g.b", "projector")

    def params(self):
        return [self.beta, self.proj_w, self.proj_b, self.proj_g_w, self.proj_g_b]


def gate_combine(fmap: FeatureMap, fused: Tensor, gate: GateState) -> ConditionedVisualFeatures:
    """Project the flattened visual grid and add the tanh-gated fused summary.

    The fused text-length rows are mean-pooled to one vector, projected, and
    broadcast onto every visual token. With a zero gate the output equals the
    projected visual tokens exactly.
    """
    n, d = fmap.side, fmap.dim
    if fused.ndim != 2 or fused.data.shape[1] != d:
        raise ShapeError(f"fused features must be (L, {d}), got {fused.shape}")
    flat = reshape(fmap.grid, (n * n, d))
    vis = matmul(flat, gate.proj_w) + gate.proj_b
    summary = matmul(mean_rows(fused), gate.proj_g_w) + gate.proj_g_b
    gated = summary * tanh(gate.beta)
    return ConditionedVisualFeatures(vis + gated)
