"""Aggregate cross-attention weights onto the spatial block grid and export.

Per layer: average the attention over heads and query positions, credit each
multi-scale key row to every finest-scale block it covers, and normalize the
result to a probability mass over the finest grid. A uniform attention model
therefore exports the constant 1 / (blocks per side)^2.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ShapeError
from .pyramid import block_count


def spatial_mass(attn: np.ndarray, scales: int) -> np.ndarray:
    """(heads, L, M) attention -> (nb, nb) normalized mass on the finest grid."""
    if attn.ndim != 3:
        raise ShapeError("attention must be (heads, L, M)")
    m = attn.shape[2]
    if m != block_count(scales):
        raise ShapeError(f"{m} key rows do not match {scales} scales "
                         f"({block_count(scales)} expected)")
    weights = attn.mean(axis=(0, 1))
    nb = 2 ** (scales - 1)
    grid = np.zeros((nb, nb))
    row = 0
    for s in range(1, scales + 1):
        nb_s = 2 ** (s - 1)
        f = nb // nb_s
        for ti in range(nb_s):
            for tj in range(nb_s):
                grid[ti * f:(ti + 1) * f, tj * f:(tj + 1) * f] += weights[row]
                row += 1
    total = grid.sum()
    return grid / total if total > 0 else grid


def layer_masses(attn_maps, scales: int) -> list:
    return [spatial_mass(a, scales) for a in attn_maps]


def mean_mass(attn_maps, scales: int) -> np.ndarray:
    per_layer = layer_masses(attn_maps, scales)
    mean = np.mean(per_layer, axis=0)
    return mean / mean.sum()


def write_mass_csv(path, mass: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in mass:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_pgm(path, mass: np.ndarray) -> None:
    """8-bit grayscale PGM, min-max normalized per map."""
    lo, hi = float(mass.min()), float(mass.max())
    if hi > lo:
        scaled = np.round((mass - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(mass)
    pixels = scaled.astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P5" or parts[2] != b"255":
        raise ShapeError(f"{path}: not an 8-bit P5 PGM written by this tool")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def export_attention(out_dir, attn_maps, scales: int) -> dict:
    """Write per-layer and mean maps as CSV + PGM; returns name -> mass array."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    exported = {}
    for i, mass in enumerate(layer_masses(attn_maps, scales)):
        name = f"attention_layer{i}"
        write_mass_csv(out_dir / f"{name}.csv", mass)
        write_pgm(out_dir / f"{name}.pgm", mass)
        exported[name] = mass
    mean = mean_mass(attn_maps, scales)
    write_mass_csv(out_dir / "attention_mean.csv", mean)
    write_pgm(out_dir / "attention_mean.pgm", mean)
    exported["attention_mean"] = mean
    return exported
