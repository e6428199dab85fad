"""Seeded synthetic VQA task over planted feature patterns.

Every map carries a fixed positional code (the stand-in vision encoder is
position-aware), a class pattern planted in a target block, and distractor
blocks with class patterns drawn independently of the answer. The question
names the target block, so the answer is statistically independent of
everything outside that block: answering requires looking where the
question points, and attention must resolve the named block by its
positional code rather than by pattern salience.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .encoders import Vocabulary
from .errors import ParameterError, PartitionError

CLASS_NAMES = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta",
               "eta", "theta", "iota", "kappa")
QUESTION_WORDS = ("what", "pattern", "in", "block", "is", "shows")
POS_CHANNELS = 4


@dataclass(frozen=True)
class TaskConfig:
    grid: int = 8
    dim: int = 16
    scales: int = 3
    classes: int = 6
    distractors: int = 2
    queue_k: int = 8
    closed_fraction: float = 0.25
    noise: float = 0.25
    signal: float = 2.0
    pos_amplitude: float = 1.0

    def __post_init__(self):
        if self.classes < 2 or self.classes > len(CLASS_NAMES):
            raise ParameterError(f"classes must lie in [2, {len(CLASS_NAMES)}]")
        if POS_CHANNELS + self.classes > self.dim:
            raise ParameterError(
                f"dim {self.dim} too small for {self.classes} classes plus "
                f"{POS_CHANNELS} position channels")
        if self.grid % self.blocks_per_side != 0:
            raise PartitionError(
                f"grid {self.grid} not divisible by {self.blocks_per_side} "
                f"(finest scale of {self.scales})")
        if self.distractors > self.blocks_per_side**2 - 1:
            raise ParameterError("more distractors than spare blocks")
        if self.queue_k < 2:
            raise ParameterError("queue needs at least 2 captions")
        if not 0.0 <= self.closed_fraction <= 1.0:
            raise ParameterError("closed_fraction must lie in [0, 1]")

    @property
    def blocks_per_side(self) -> int:
        return 2 ** (self.scales - 1)

    @property
    def block_cells(self) -> int:
        return self.grid // self.blocks_per_side


@dataclass
class SyntheticSample:
    sample_id: int
    grid: np.ndarray
    question_ids: list
    answer_ids: list
    caption_ids: list = field(repr=False)
    planted: tuple = (0, 0)
    qtype: str = "open"
    target_class: int = 0


def block_token(bi: int, bj: int) -> str:
    return f"b{bi}_{bj}"


def build_vocab(cfg: TaskConfig) -> Vocabulary:
    words = list(QUESTION_WORDS) + ["yes", "no"]
    words += list(CLASS_NAMES[:cfg.classes])
    nb = cfg.blocks_per_side
    words += [block_token(i, j) for i in range(nb) for j in range(nb)]
    return Vocabulary.from_words(words)


def position_code(cfg: TaskConfig) -> np.ndarray:
    """Per-cell positional channels, constant within each finest-scale block."""
    nb = cfg.blocks_per_side
    code = np.zeros((cfg.grid, cfg.grid, cfg.dim))
    for bi in range(nb):
        for bj in range(nb):
            ang_i = 2.0 * np.pi * (bi + 0.5) / nb
            ang_j = 2.0 * np.pi * (bj + 0.5) / nb
            vec = cfg.pos_amplitude * np.array(
                [np.sin(ang_i), np.cos(ang_i), np.sin(ang_j), np.cos(ang_j)])
            r0, c0 = bi * cfg.block_cells, bj * cfg.block_cells
            code[r0:r0 + cfg.block_cells, c0:c0 + cfg.block_cells, :POS_CHANNELS] = vec
    return code


def class_channel(cfg: TaskConfig, class_id: int) -> int:
    return POS_CHANNELS + class_id


def _plant(grid: np.ndarray, cfg: TaskConfig, block: tuple, class_id: int):
    bi, bj = block
    r0, c0 = bi * cfg.block_cells, bj * cfg.block_cells
    grid[r0:r0 + cfg.block_cells, c0:c0 + cfg.block_cells,
         class_channel(cfg, class_id)] += cfg.signal


def make_synthetic_dataset(n: int, cfg: TaskConfig, vocab: Vocabulary,
                           seed: int) -> list:
    """Generate n seed-deterministic samples with captions for the text queue.

    Distractor classes are drawn uniformly over all classes, independent of
    the target class, so the map outside the planted block carries no
    information about the answer.
    """
    if n < 1:
        raise ParameterError("need at least one sample")
    rng = np.random.default_rng(seed)
    nb = cfg.blocks_per_side
    pos = position_code(cfg)
    all_blocks = [(i, j) for i in range(nb) for j in range(nb)]
    samples = []
    for sid in range(n):
        grid = cfg.noise * rng.standard_normal((cfg.grid, cfg.grid, cfg.dim)) + pos
        picks = rng.choice(len(all_blocks), size=1 + cfg.distractors, replace=False)
        target = all_blocks[int(picks[0])]
        target_class = int(rng.integers(cfg.classes))
        _plant(grid, cfg, target, target_class)
        for p in picks[1:]:
            _plant(grid, cfg, all_blocks[int(p)], int(rng.integers(cfg.classes)))

        btok = block_token(*target)
        cname = CLASS_NAMES[target_class]
        closed = bool(rng.random() < cfg.closed_fraction)
        if closed:
            answer_yes = bool(rng.random() < 0.5)
            named = cname if answer_yes else CLASS_NAMES[
                int((target_class + 1 + rng.integers(cfg.classes - 1)) % cfg.classes)]
            question = ["is", named, "block", btok]
            answer = ["yes" if answer_yes else "no"]
        else:
            question = ["what", "pattern", "block", btok]
            answer = [cname]

        captions = [["block", btok, "shows", cname]]
        while len(captions) < cfg.queue_k:
            rb = all_blocks[int(rng.integers(len(all_blocks)))]
            rc = CLASS_NAMES[int(rng.integers(cfg.classes))]
            if rb == target and rc == cname:
                continue
            captions.append(["block", block_token(*rb), "shows", rc])

        samples.append(SyntheticSample(
            sample_id=sid,
            grid=grid,
            question_ids=vocab.encode(question),
            answer_ids=vocab.encode(answer),
            caption_ids=[vocab.encode(c) for c in captions],
            planted=target,
            qtype="closed" if closed else "open",
            target_class=target_class,
        ))
    return samples


def question_with_block(sample: SyntheticSample, vocab: Vocabulary,
                        block: tuple) -> list:
    """The sample's question with its named block replaced."""
    ids = list(sample.question_ids)
    ids[-1] = vocab.id_of(block_token(*block))
    return ids


def detect_block_classes(grid: np.ndarray, cfg: TaskConfig) -> dict:
    """Brute-force detector: block -> class ids whose block mean clears half
    the planted amplitude. Used by tests and the leakage oracle."""
    nb = cfg.blocks_per_side
    found = {}
    for bi in range(nb):
        for bj in range(nb):
            r0, c0 = bi * cfg.block_cells, bj * cfg.block_cells
            block = grid[r0:r0 + cfg.block_cells, c0:c0 + cfg.block_cells, :]
            means = block.mean(axis=(0, 1))
            classes = {
                c for c in range(cfg.classes)
                if means[class_channel(cfg, c)] > cfg.signal / 2.0
            }
            if classes:
                found[(bi, bj)] = classes
    return found


def zero_block(grid: np.ndarray, cfg: TaskConfig, block: tuple) -> np.ndarray:
    """Copy of the map with one block's cells zeroed (ablation helper)."""
    out = grid.copy()
    bi, bj = block
    r0, c0 = bi * cfg.block_cells, bj * cfg.block_cells
    out[r0:r0 + cfg.block_cells, c0:c0 + cfg.block_cells, :] = 0.0
    return out
