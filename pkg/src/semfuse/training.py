"""Two-stage training harness: staged freezing, loss curves, checkpoints."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import FeatureMap
from .errors import CheckpointError, EvaluationError, ParameterError
from .metrics import EvalRecord
from .model import VqaModel
from .optim import AdamW
from .tensor import PARAMETER_GROUPS, Tensor
from .tensorio import read_tensor, write_tensor

CURVE_COLUMNS = ("step", "l_total", "l_sem", "l_nll")


@dataclass(frozen=True)
class StageConfig:
    """One training stage: loss weight, schedule, and which groups move."""

    lambda_sem: float
    lr: float
    epochs: int
    trainable_groups: tuple
    seed: int = 0
    batch_size: int = 16
    max_steps: int = 0  # 0 = run all epochs

    def __post_init__(self):
        if self.lambda_sem < 0:
            raise ParameterError("lambda must be >= 0")
        if not self.lr > 0:
            raise ParameterError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.max_steps < 0:
            raise ParameterError("epochs and batch_size must be >= 1")
        if not self.trainable_groups:
            raise ParameterError("at least one trainable parameter group")
        for g in self.trainable_groups:
            if g not in PARAMETER_GROUPS:
                raise ParameterError(f"unknown parameter group {g!r}")


@dataclass
class StageResult:
    curve: list = field(default_factory=list)
    steps: int = 0
    aborted: bool = False
    abort_reason: str = ""


def _batch_mean(nodes):
    total = nodes[0]
    for node in nodes[1:]:
        total = total + node
    return total * (1.0 / len(nodes))


def run_stage(model: VqaModel, data, cfg: StageConfig) -> StageResult:
    """Run one stage over the dataset; only ``trainable_groups`` are updated.

    Semantic loss is always evaluated and logged; with lambda 0 it does not
    contribute gradients. On a non-finite loss or gradient the stage aborts
    and the parameters keep their last good values.
    """
    if not data:
        raise ParameterError("stage needs a nonempty dataset")
    trainable = model.params_in_groups(cfg.trainable_groups)
    opt = AdamW(trainable, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    result = StageResult()
    order = np.arange(len(data))
    for _ in range(cfg.epochs):
        rng.shuffle(order)
        for start in range(0, len(order), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            try:
                step_losses = _train_step(model, opt, batch, cfg.lambda_sem)
            except EvaluationError as exc:
                result.aborted = True
                result.abort_reason = str(exc)
                return result
            result.steps += 1
            result.curve.append((result.steps,) + step_losses)
            if cfg.max_steps and result.steps >= cfg.max_steps:
                return result
    return result


def _train_step(model, opt, batch, lambda_sem):
    model.zero_grad()
    sems, nlls = [], []
    for sample in batch:
        fmap = FeatureMap(Tensor(sample.grid))
        _, l_sem, l_nll = model.sample_losses(
            fmap, sample.question_ids, sample.answer_ids, sample.caption_ids,
            lambda_sem)
        sems.append(l_sem)
        nlls.append(l_nll)
    sem_mean = _batch_mean(sems)
    nll_mean = _batch_mean(nlls)
    loss = nll_mean if lambda_sem == 0 else sem_mean * lambda_sem + nll_mean
    if not np.isfinite(loss.data).all():
        raise EvaluationError("non-finite training loss")
    loss.backward()
    opt.step()
    sem_val = float(sem_mean.data)
    nll_val = float(nll_mean.data)
    return lambda_sem * sem_val + nll_val, sem_val, nll_val


def write_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for step, l_total, l_sem, l_nll in curve:
            writer.writerow([step, repr(l_total), repr(l_sem), repr(l_nll)])


def read_curve(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CURVE_COLUMNS:
        raise CheckpointError(f"{path}: not a loss curve file")
    return [(int(s), float(t), float(se), float(nl)) for s, t, se, nl in rows[1:]]


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(ckpt_dir, model: VqaModel, optimizer: AdamW | None = None,
                    meta: dict | None = None) -> None:
    """Directory of tensor files plus a manifest mapping name -> file/group/shape."""
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"params": {}, "optimizer": None, "meta": meta or {}}
    for p in model.params():
        fname = f"param.{p.name}.d2ct"
        write_tensor(ckpt_dir / fname, p.data)
        manifest["params"][p.name] = {
            "file": fname, "group": p.group, "shape": list(p.data.shape),
        }
    if optimizer is not None:
        state = optimizer.state_arrays()
        opt_entry = {"step": state.pop("step"), "files": {}}
        for key, arr in state.items():
            kind, name = key.split("::", 1)
            fname = f"opt.{kind}.{name}.d2ct"
            write_tensor(ckpt_dir / fname, arr)
            opt_entry["files"][key] = fname
        manifest["optimizer"] = opt_entry
    with open(ckpt_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(ckpt_dir, model: VqaModel, optimizer: AdamW | None = None) -> dict:
    """Restore parameters (and optimizer state); shapes must match the model."""
    ckpt_dir = Path(ckpt_dir)
    manifest_path = ckpt_dir / "manifest.json"
    if not manifest_path.exists():
        raise CheckpointError(f"{ckpt_dir}: no manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    entries = manifest.get("params", {})
    for p in model.params():
        entry = entries.get(p.name)
        if entry is None:
            raise CheckpointError(f"checkpoint is missing parameter {p.name!r}")
        if tuple(entry["shape"]) != p.data.shape:
            raise CheckpointError(
                f"parameter {p.name!r}: checkpoint shape {tuple(entry['shape'])} "
                f"!= model shape {p.data.shape}")
        if entry["group"] != p.group:
            raise CheckpointError(f"parameter {p.name!r}: group mismatch")
        p.data[...] = read_tensor(ckpt_dir / entry["file"])
    if optimizer is not None and manifest.get("optimizer"):
        opt_entry = manifest["optimizer"]
        state = {"step": opt_entry["step"]}
        for key, fname in opt_entry["files"].items():
            state[key] = read_tensor(ckpt_dir / fname)
        optimizer.load_state_arrays(state)
    return manifest.get("meta", {})


# -- evaluation helpers ------------------------------------------------------


def predict_records(model: VqaModel, samples) -> list:
    """Greedy-decode an answer for every sample."""
    records = []
    for sample in samples:
        fmap = FeatureMap(Tensor(sample.grid))
        out_ids = model.answer_greedy(fmap, sample.question_ids)
        records.append(EvalRecord(
            record_id=sample.sample_id,
            qtype=sample.qtype,
            candidate=model.vocab.decode(out_ids),
            reference=model.vocab.decode(sample.answer_ids),
        ))
    return records
