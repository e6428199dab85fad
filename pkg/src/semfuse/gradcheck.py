"""Central-difference verification of every analytic backward rule."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import semantic
from .attention import AttentionWeights, cross_attention
from .errors import EvaluationError, ParameterError
from .pooling import multiscale_pool
from .pyramid import pool_block
from .tensor import (
    Parameter,
    Tensor,
    cosine_sim,
    embedding_lookup,
    gelu,
    kl_div,
    layer_norm,
    matmul,
    mean_rows,
    mul,
    nll_rows,
    softmax_temp,
    stack_scalars,
    tanh,
    vsum,
)


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               analytic_scale: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must rebuild its graph from the current parameter values on every
    call. ``analytic_scale`` multiplies selected analytic gradients and exists
    for fault injection in self-tests.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ParameterError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    params = list(params)
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise EvaluationError("function under test must return a finite scalar")
    out.backward()
    analytic = []
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        if analytic_scale and p in analytic_scale:
            g = g * analytic_scale[p]
        analytic.append(g.reshape(-1))

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise EvaluationError("function under test became non-finite")
            num = (hi - lo) / (2.0 * eps)
            denom = max(abs(ana[i]), abs(num), 1e-8)
            worst = max(worst, abs(ana[i] - num) / denom)
    return worst


def _leaf(rng, shape, name="x"):
    return Parameter(rng.standard_normal(shape), name, "projector")


def _check_add(rng):
    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (3, 4), "b")
    return lambda: vsum(mul(a + b, rng_fixed(a.data.shape))), [a, b]


def rng_fixed(shape):
    # fixed mixing weights so reductions exercise non-uniform gradients
    return Tensor(np.linspace(0.3, 1.7, int(np.prod(shape))).reshape(shape))


def _check_mul(rng):
    a, b = _leaf(rng, (3, 4), "a"), _leaf(rng, (4,), "b")
    return lambda: vsum(mul(a, b)), [a, b]


def _check_matmul(rng):
    a, b = _leaf(rng, (3, 5), "a"), _leaf(rng, (5, 2), "b")
    return lambda: vsum(mul(matmul(a, b), rng_fixed((3, 2)))), [a, b]


def _check_gelu(rng):
    a = _leaf(rng, (4, 3), "a")
    return lambda: vsum(mul(gelu(a), rng_fixed(a.data.shape))), [a]


def _check_tanh(rng):
    a = _leaf(rng, (6,), "a")
    return lambda: vsum(mul(tanh(a), rng_fixed(a.data.shape))), [a]


def _check_layer_norm(rng):
    x = _leaf(rng, (4, 6), "x")
    g = _leaf(rng, (6,), "g")
    b = _leaf(rng, (6,), "b")
    return lambda: vsum(mul(layer_norm(x, g, b), rng_fixed(x.data.shape))), [x, g, b]


def _check_softmax(rng):
    a = _leaf(rng, (7,), "a")
    return lambda: vsum(mul(softmax_temp(a, 0.7), rng_fixed((7,)))), [a]


def _check_cosine(rng):
    a, b = _leaf(rng, (8,), "a"), _leaf(rng, (8,), "b")
    return lambda: cosine_sim(a, b), [a, b]


def _check_kl(rng):
    a, b = _leaf(rng, (5,), "a"), _leaf(rng, (5,), "b")
    return lambda: kl_div(softmax_temp(a, 1.0), softmax_temp(b, 1.0)), [a, b]


def _check_mean_rows(rng):
    a = _leaf(rng, (5, 3), "a")
    return lambda: vsum(mul(mean_rows(a), rng_fixed((3,)))), [a]


def _check_embedding(rng):
    table = _leaf(rng, (6, 4), "table")
    ids = [0, 3, 3, 5]
    return lambda: vsum(mul(embedding_lookup(table, ids), rng_fixed((4, 4)))), [table]


def _check_stack(rng):
    a, b, c = _leaf(rng, (), "a"), _leaf(rng, (), "b"), _leaf(rng, (), "c")
    return lambda: vsum(mul(stack_scalars([a, b, c]), rng_fixed((3,)))), [a, b, c]


def _check_attention(rng):
    d, heads = 8, 2
    q = _leaf(rng, (3, d), "q")
    k = _leaf(rng, (5, d), "k")
    w = AttentionWeights.create(d, rng, "chk", "fusion")

    def f():
        out, _ = cross_attention(q, k, k, heads, w)
        return vsum(mul(out, rng_fixed((3, d))))

    return f, [q, k] + w.params()


def _check_pool_block(rng):
    a = _leaf(rng, (3, 2, 4), "a")
    return lambda: vsum(mul(pool_block(a), rng_fixed((4,)))), [a]


def _check_multiscale_pool(rng):
    a = _leaf(rng, (4, 4, 3), "a")
    return lambda: vsum(mul(multiscale_pool(a, 3), rng_fixed((21, 3)))), [a]


def _check_nll(rng):
    logits = _leaf(rng, (4, 6), "logits")
    targets = [1, 5, 0, 2]
    mask = [True, False, True, True]
    return lambda: nll_rows(logits, targets, mask), [logits]


def _check_semantic_chain(rng):
    # anchor -> cosine -> temperature softmax -> KL, the full queue pipeline
    anchor_v = _leaf(rng, (6,), "anchor_v")
    anchor_t = _leaf(rng, (6,), "anchor_t")
    entries = [Tensor(rng.standard_normal(6)) for _ in range(4)]
    queue = semantic.TextQueue(entries, tau=0.5)

    def f():
        pv = semantic.semantic_distribution(anchor_v, queue)
        pt = semantic.semantic_distribution(anchor_t, queue)
        return semantic.semantic_loss(pv, pt)

    return f, [anchor_v, anchor_t]


OP_CHECKS = {
    "add": _check_add,
    "mul": _check_mul,
    "matmul": _check_matmul,
    "gelu": _check_gelu,
    "tanh": _check_tanh,
    "layer_norm": _check_layer_norm,
    "softmax_temp": _check_softmax,
    "cosine_sim": _check_cosine,
    "kl_div": _check_kl,
    "mean_rows": _check_mean_rows,
    "embedding_lookup": _check_embedding,
    "stack_scalars": _check_stack,
    "cross_attention": _check_attention,
    "pool_block": _check_pool_block,
    "multiscale_pool": _check_multiscale_pool,
    "nll": _check_nll,
    "semantic_chain": _check_semantic_chain,
}


def check_registered_ops(seed: int = 0, eps: float = 1e-5) -> dict:
    """Run grad_check over every registered op; returns name -> max rel error."""
    results = {}
    for offset, (name, builder) in enumerate(OP_CHECKS.items()):
        rng = np.random.default_rng(seed + offset)
        f, params = builder(rng)
        results[name] = grad_check(f, params, eps)
    return results
