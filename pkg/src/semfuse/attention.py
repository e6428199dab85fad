"""Multi-head scaled dot-product cross attention built on the tensor ops."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError
from .tensor import (
    Parameter,
    Tensor,
    concat_cols,
    matmul,
    scaled_normal,
    slice_cols,
    softmax_temp,
    transpose,
)

_MASK_OFF = -1e30


class AttentionWeights:
    """Query/key/value/output projections for one attention block.

    Keys carry no bias: a constant added to every key shifts each score row
    uniformly, which the softmax cancels, so the parameter would be inert.
    """

    def __init__(self, wq, bq, wk, wv, bv, wo, bo):
        self.wq, self.bq = wq, bq
        self.wk = wk
        self.wv, self.bv = wv, bv
        self.wo, self.bo = wo, bo

    @classmethod
    def create(cls, dim: int, rng: np.random.Generator, prefix: str,
               group: str) -> "AttentionWeights":
        def w(tag):
            return Parameter(scaled_normal(rng, (dim, dim)), f"{prefix}.{tag}.w", group)

        def b(tag):
            return Parameter(np.zeros(dim), f"{prefix}.{tag}.b", group)

        return cls(w("q"), b("q"), w("k"), w("v"), b("v"), w("o"), b("o"))

    def params(self):
        return [self.wq, self.bq, self.wk, self.wv, self.bv, self.wo, self.bo]


def cross_attention(queries: Tensor, keys: Tensor, values: Tensor, heads: int,
                    weights: AttentionWeights, mask: np.ndarray | None = None):
    """Attend queries over keys/values and return (output, attention weights).

    The attention array has shape (heads, L, M); every row is a softmax over
    the M key positions, so the output rows are convex combinations of the
    projected value rows. ``mask`` is a boolean (L, M) visibility matrix.
    """
    if queries.ndim != 2 or keys.ndim != 2 or values.ndim != 2:
        raise ShapeError("attention operands must be 2-D")
    L, d = queries.data.shape
    M, dk = keys.data.shape
    if dk != d or values.data.shape != (M, dk):
        raise ShapeError(
            f"attention widths disagree: queries {queries.shape}, keys {keys.shape}, "
            f"values {values.shape}")
    if L < 1 or M < 1:
        raise ShapeError("attention needs at least one query and one key")
    if heads < 1 or d % heads != 0:
        raise ShapeError(f"width {d} is not divisible by {heads} heads")
    head_dim = d // heads
    scale = 1.0 / math.sqrt(head_dim)

    q = matmul(queries, weights.wq) + weights.bq
    k = matmul(keys, weights.wk)
    v = matmul(values, weights.wv) + weights.bv

    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (L, M):
            raise ShapeError(f"mask must be ({L}, {M}), got {mask.shape}")
        bias = np.where(mask, 0.0, _MASK_OFF)

    outs = []
    attn_rows = np.empty((heads, L, M))
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        scores = matmul(qh, transpose(kh)) * scale
        if bias is not None:
            scores = scores + bias
        attn = softmax_temp(scores, 1.0)
        attn_rows[h] = attn.data
        outs.append(matmul(attn, vh))
    merged = outs[0] if heads == 1 else concat_cols(outs)
    out = matmul(merged, weights.wo) + weights.bo
    return out, attn_rows
