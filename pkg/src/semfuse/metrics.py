"""Sequence-answer metrics: unigram BLEU, unigram ROUGE F1, exact-match accuracy."""

from __future__ import annotations

import csv
import json
import math
import string
from collections import Counter
from dataclasses import dataclass

from .errors import DegenerateInputError, FormatError

_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass
class EvalRecord:
    record_id: int
    qtype: str  # "closed" or "open"
    candidate: list
    reference: list

    def __post_init__(self):
        if self.qtype not in ("closed", "open"):
            raise DegenerateInputError(f"unknown question type {self.qtype!r}")
        if not self.reference:
            raise DegenerateInputError("reference answer must be nonempty")


def normalize_tokens(tokens) -> list:
    """Lowercase, strip punctuation, collapse whitespace; drops emptied tokens."""
    out = []
    for tok in tokens:
        for piece in tok.lower().translate(_PUNCT).split():
            out.append(piece)
    return out


def _clipped_overlap(candidate, reference) -> int:
    cand, ref = Counter(candidate), Counter(reference)
    return sum(min(c, ref[tok]) for tok, c in cand.items())


def bleu1(candidate, reference) -> float:
    """Clipped unigram precision times the brevity penalty."""
    if not reference:
        raise DegenerateInputError("reference must be nonempty")
    if not candidate:
        return 0.0
    precision = _clipped_overlap(candidate, reference) / len(candidate)
    brevity = min(1.0, math.exp(1.0 - len(reference) / len(candidate)))
    return precision * brevity


def rouge1_prf(candidate, reference) -> tuple:
    """(precision, recall, F1) over clipped unigram overlap."""
    if not reference:
        raise DegenerateInputError("reference must be nonempty")
    if not candidate:
        return 0.0, 0.0, 0.0
    overlap = _clipped_overlap(candidate, reference)
    if overlap == 0:
        return 0.0, 0.0, 0.0
    p = overlap / len(candidate)
    r = overlap / len(reference)
    return p, r, 2.0 * p * r / (p + r)


def rouge1(candidate, reference) -> float:
    return rouge1_prf(candidate, reference)[2]


def accuracy(records, qtype: str) -> float:
    """Fraction of records whose normalized candidate equals the reference."""
    pool = [r for r in records if r.qtype == qtype]
    if not pool:
        raise DegenerateInputError(f"no records of type {qtype!r}")
    hits = sum(
        1 for r in pool
        if normalize_tokens(r.candidate) == normalize_tokens(r.reference))
    return hits / len(pool)


def summarize(records) -> list:
    """(metric, value, count) rows: mean BLEU-1/ROUGE-1 plus per-type accuracy."""
    if not records:
        raise DegenerateInputError("no records to summarize")
    rows = [
        ("bleu1", sum(bleu1(r.candidate, r.reference) for r in records) / len(records),
         len(records)),
        ("rouge1", sum(rouge1(r.candidate, r.reference) for r in records) / len(records),
         len(records)),
    ]
    for qtype in ("closed", "open"):
        pool = [r for r in records if r.qtype == qtype]
        if pool:
            rows.append((f"acc_{qtype}", accuracy(records, qtype), len(pool)))
    rows.append(("acc_all", sum(
        1 for r in records
        if normalize_tokens(r.candidate) == normalize_tokens(r.reference)) / len(records),
        len(records)))
    return rows


# -- file formats -------------------------------------------------------------


def write_records(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.record_id, "type": r.qtype,
                "candidate": list(r.candidate), "reference": list(r.reference),
            }) + "\n")


def read_records(path) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(EvalRecord(
                    record_id=int(obj["id"]), qtype=obj["type"],
                    candidate=list(obj["candidate"]), reference=list(obj["reference"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return records


def write_summary(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value", "count"])
        for metric, value, count in rows:
            writer.writerow([metric, repr(float(value)), count])
