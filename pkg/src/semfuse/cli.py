"""Command-line entry point.

Verbs: gradcheck, synth, train, eval, export-attention. Exit codes: 0 on
success, 1 when a check or training run fails, 2 for usage errors, 3 for
I/O problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .config import ExperimentConfig, load_config, save_config
from .encoders import FeatureMap
from .errors import (
    CheckpointError,
    ConfigError,
    FormatError,
    SemfuseError,
)
from .export import export_attention
from .gradcheck import check_registered_ops, grad_check
from .model import ModelConfig, VqaModel
from .synthdata import (
    SyntheticSample,
    TaskConfig,
    build_vocab,
    make_synthetic_dataset,
    question_with_block,
)
from .tensor import Tensor
from .tensorio import read_tensor, write_tensor
from .training import (
    load_checkpoint,
    predict_records,
    run_stage,
    save_checkpoint,
    write_curve,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfuse",
        description="Gated image-text fusion with a text-queue semantic loss, desk scale.")
    parser.add_argument("--config", help="experiment config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    sub.add_parser("synth", help="write a synthetic dataset to the output directory")
    sub.add_parser("train", help="run the two-stage training schedule")
    p_eval = sub.add_parser("eval", help="greedy-decode a dataset and score it")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_exp = sub.add_parser("export-attention", help="export fusion attention heatmaps")
    p_exp.add_argument("--checkpoint", required=True)
    p_exp.add_argument("--data", required=True)
    p_exp.add_argument("--sample", type=int, default=0)
    p_exp.add_argument("--block", help="rename the question's block token, e.g. b0_1")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed).validate()
    return cfg


def _fresh_model(cfg: ExperimentConfig):
    vocab = build_vocab(cfg.task_config())
    return VqaModel(cfg.model_config(), vocab, seed=cfg.run.seed)


# -- gradcheck ---------------------------------------------------------------


def _micro_setup(cfg: ExperimentConfig):
    g = cfg.gradcheck
    model_cfg = ModelConfig(
        dim=g.dim, grid=g.grid, scales=g.scales,
        fusion_layers=g.layers, fusion_heads=g.heads, fusion_ffn=2 * g.dim,
        lm_layers=g.layers, lm_heads=g.heads, lm_ffn=2 * g.dim,
        max_seq_len=g.grid**2 + 16, queue_tau=0.5)
    task_cfg = TaskConfig(
        grid=g.grid, dim=g.dim, scales=g.scales, classes=2,
        distractors=1, queue_k=g.queue_k, noise=0.25, signal=2.0)
    vocab = build_vocab(task_cfg)
    model = VqaModel(model_cfg, vocab, seed=cfg.run.seed)
    sample = make_synthetic_dataset(1, task_cfg, vocab, seed=cfg.run.seed + 7)[0]
    return model, sample


def cmd_gradcheck(cfg: ExperimentConfig, out_dir: Path) -> int:
    tol = cfg.gradcheck.tolerance
    eps = cfg.gradcheck.eps
    failures = []
    for name, err in check_registered_ops(seed=cfg.run.seed, eps=eps).items():
        ok = err < tol
        print(f"{'PASS' if ok else 'FAIL'} op {name}: max relative error {err:.3e}")
        if not ok:
            failures.append(name)

    model, sample = _micro_setup(cfg)
    fmap = FeatureMap(Tensor(sample.grid))

    def composite():
        total, _, _ = model.sample_losses(
            fmap, sample.question_ids, sample.answer_ids, sample.caption_ids, 1.0)
        return total

    scale = None
    if cfg.gradcheck.corrupt:
        target = model.param(cfg.gradcheck.corrupt)
        scale = {target: 2.0}
    err = grad_check(composite, model.params(), eps=eps, analytic_scale=scale)
    ok = err < tol
    print(f"{'PASS' if ok else 'FAIL'} composite objective: max relative error {err:.3e}")
    if not ok:
        failures.append("composite")
    if failures:
        print(f"gradcheck failed for: {', '.join(failures)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


# -- synth -------------------------------------------------------------------


def _dataset_dir_write(out_dir: Path, samples, vocab) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "maps").mkdir(exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    with open(out_dir / "samples.jsonl", "w") as fh:
        for s in samples:
            rel = f"maps/sample_{s.sample_id:05d}.d2ct"
            write_tensor(out_dir / rel, s.grid)
            fh.write(json.dumps({
                "id": s.sample_id, "type": s.qtype,
                "question": s.question_ids, "answer": s.answer_ids,
                "captions": s.caption_ids, "planted": list(s.planted),
                "target_class": s.target_class, "map": rel,
            }) + "\n")


def load_dataset_dir(data_dir) -> list:
    data_dir = Path(data_dir)
    samples = []
    with open(data_dir / "samples.jsonl") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            samples.append(SyntheticSample(
                sample_id=obj["id"], grid=read_tensor(data_dir / obj["map"]),
                question_ids=obj["question"], answer_ids=obj["answer"],
                caption_ids=obj["captions"], planted=tuple(obj["planted"]),
                qtype=obj["type"], target_class=obj["target_class"]))
    return samples


def cmd_synth(cfg: ExperimentConfig, out_dir: Path) -> int:
    task = cfg.task_config()
    vocab = build_vocab(task)
    train = make_synthetic_dataset(cfg.data.train_samples, task, vocab, cfg.train_seed)
    heldout = make_synthetic_dataset(cfg.data.eval_samples, task, vocab, cfg.eval_seed)
    _dataset_dir_write(out_dir / "train", train, vocab)
    _dataset_dir_write(out_dir / "heldout", heldout, vocab)
    save_config(out_dir / "config.resolved", cfg)
    print(f"wrote {len(train)} train and {len(heldout)} held-out samples to {out_dir}")
    return EXIT_OK


# -- train -------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    task = cfg.task_config()
    vocab = build_vocab(task)
    data = make_synthetic_dataset(cfg.data.train_samples, task, vocab, cfg.train_seed)
    model = VqaModel(cfg.model_config(), vocab, seed=cfg.run.seed)
    save_config(out_dir / "config.resolved", cfg)
    for index in (1, 2):
        stage_dir = out_dir / f"stage{index}"
        stage_dir.mkdir(exist_ok=True)
        result = run_stage(model, data, cfg.stage_config(index))
        write_curve(stage_dir / "loss.csv", result.curve)
        save_checkpoint(stage_dir / "checkpoint", model,
                        meta={"stage": index, "steps": result.steps,
                              "aborted": result.aborted})
        if result.aborted:
            print(f"stage {index} aborted after {result.steps} steps: "
                  f"{result.abort_reason}; last good checkpoint kept")
            return EXIT_CHECK_FAILED
        print(f"stage {index}: {result.steps} steps, "
              f"final l_total {result.curve[-1][1]:.4f}")
    return EXIT_OK


# -- eval ----------------------------------------------------------------------


def cmd_eval(cfg: ExperimentConfig, out_dir: Path, checkpoint: str, data_dir: str) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_dataset_dir(data_dir)
    model = _fresh_model(cfg)
    load_checkpoint(checkpoint, model)
    records = predict_records(model, samples)
    metrics_mod.write_records(out_dir / "predictions.jsonl", records)
    rows = metrics_mod.summarize(records)
    metrics_mod.write_summary(out_dir / "metrics.csv", rows)
    for metric, value, count in rows:
        print(f"{metric}: {value:.4f} ({count} records)")
    return EXIT_OK


# -- export-attention -----------------------------------------------------------


def cmd_export_attention(cfg: ExperimentConfig, out_dir: Path, checkpoint: str,
                         data_dir: str, sample_id: int, block: str | None) -> int:
    samples = load_dataset_dir(data_dir)
    by_id = {s.sample_id: s for s in samples}
    if sample_id not in by_id:
        raise ConfigError(f"sample {sample_id} not present in {data_dir}")
    sample = by_id[sample_id]
    model = _fresh_model(cfg)
    load_checkpoint(checkpoint, model)
    question = list(sample.question_ids)
    if block:
        bi, bj = _parse_block_token(block)
        question = question_with_block(sample, model.vocab, (bi, bj))
    fmap = FeatureMap(Tensor(sample.grid))
    attn_maps = model.attention_for(fmap, question)
    exported = export_attention(out_dir, attn_maps, cfg.model.scales)
    mean = exported["attention_mean"]
    peak = np.unravel_index(int(np.argmax(mean)), mean.shape)
    print(f"exported {len(exported)} maps to {out_dir}; "
          f"mean-map peak at block {peak}, planted block {sample.planted}")
    return EXIT_OK


def _parse_block_token(token: str):
    if not token.startswith("b") or "_" not in token:
        raise ConfigError(f"block token must look like b2_3, got {token!r}")
    bi, _, bj = token[1:].partition("_")
    try:
        return int(bi), int(bj)
    except ValueError as exc:
        raise ConfigError(f"bad block token {token!r}") from exc


# -- entry ----------------------------------------------------------------------


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        out_dir = Path(args.out)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, out_dir)
        if args.command == "synth":
            return cmd_synth(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.checkpoint, args.data)
        if args.command == "export-attention":
            return cmd_export_attention(cfg, out_dir, args.checkpoint, args.data,
                                        args.sample, args.block)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            FormatError, CheckpointError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SemfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
