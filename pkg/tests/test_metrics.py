import math
from collections import Counter

import numpy as np
import pytest

from semfuse.errors import DegenerateInputError, FormatError
from semfuse.metrics import (
    EvalRecord,
    accuracy,
    bleu1,
    normalize_tokens,
    read_records,
    rouge1,
    rouge1_prf,
    summarize,
    write_records,
    write_summary,
)


def multiset_overlap(cand, ref):
    """Independent clipped-count oracle."""
    c, r = Counter(cand), Counter(ref)
    return sum((c & r).values())


class TestBleu1:
    def test_perfect_match(self):
        assert bleu1(["a", "b", "c"], ["a", "b", "c"]) == 1.0

    def test_brevity_penalty_hand_case(self):
        got = bleu1(["the", "cat"], ["the", "cat", "sat"])
        assert got == pytest.approx(math.exp(1.0 - 3.0 / 2.0), abs=1e-12)
        assert got == pytest.approx(0.606531, abs=1e-6)

    def test_disjoint_tokens(self):
        assert bleu1(["x", "y"], ["a", "b"]) == 0.0

    def test_empty_candidate_is_zero(self):
        assert bleu1([], ["a"]) == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(DegenerateInputError):
            bleu1(["a"], [])

    def test_clipping(self):
        # "the the the" vs "the cat": clipped count 1, precision 1/3
        got = bleu1(["the", "the", "the"], ["the", "cat"])
        assert got == pytest.approx(1.0 / 3.0, abs=1e-12)  # BP = 1 (c > r)

    def test_long_candidate_unpenalized(self):
        assert bleu1(["a", "b", "c", "d"], ["a", "b"]) == pytest.approx(0.5)


class TestRouge1:
    def test_perfect_match(self):
        assert rouge1(["a", "b"], ["a", "b"]) == 1.0

    def test_hand_case(self):
        p, r, f1 = rouge1_prf(["the", "cat"], ["the", "cat", "sat"])
        assert (p, r) == (1.0, pytest.approx(2.0 / 3.0))
        assert f1 == pytest.approx(0.8, abs=1e-12)
        assert rouge1(["the", "cat"], ["the", "cat", "sat"]) == pytest.approx(0.8)

    def test_disjoint(self):
        assert rouge1(["x"], ["a", "b"]) == 0.0

    def test_empty_candidate(self):
        assert rouge1([], ["a"]) == 0.0


class TestSharedProperties:
    def test_bounds_and_order_invariance(self):
        rng = np.random.default_rng(0)
        words = list("abcdefg")
        for _ in range(200):
            cand = [words[i] for i in rng.integers(0, 7, size=rng.integers(1, 9))]
            ref = [words[i] for i in rng.integers(0, 7, size=rng.integers(1, 9))]
            b, r = bleu1(cand, ref), rouge1(cand, ref)
            assert 0.0 <= b <= 1.0 and 0.0 <= r <= 1.0
            shuffled = list(cand)
            rng.shuffle(shuffled)
            assert bleu1(shuffled, ref) == pytest.approx(b, abs=1e-12)
            assert rouge1(shuffled, ref) == pytest.approx(r, abs=1e-12)

    def test_clipped_counts_match_multiset_oracle(self):
        rng = np.random.default_rng(1)
        words = list("abcd")
        for _ in range(300):
            cand = [words[i] for i in rng.integers(0, 4, size=rng.integers(1, 7))]
            ref = [words[i] for i in rng.integers(0, 4, size=rng.integers(1, 7))]
            overlap = multiset_overlap(cand, ref)
            bp = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
            assert bleu1(cand, ref) == pytest.approx(overlap / len(cand) * bp, abs=1e-12)


class TestAccuracy:
    def rec(self, i, qtype, cand, ref):
        return EvalRecord(record_id=i, qtype=qtype, candidate=cand, reference=ref)

    def test_all_correct(self):
        recs = [self.rec(i, "open", ["alpha"], ["alpha"]) for i in range(4)]
        assert accuracy(recs, "open") == 1.0

    def test_normalization_forgives_case_and_punctuation(self):
        recs = [self.rec(0, "closed", ["Yes."], ["yes"])]
        assert accuracy(recs, "closed") == 1.0
        assert normalize_tokens(["Yes."]) == ["yes"]
        assert normalize_tokens(["A  b", "C!"]) == ["a", "b", "c"]

    def test_two_of_three(self):
        recs = [
            self.rec(0, "open", ["a"], ["a"]),
            self.rec(1, "open", ["b"], ["a"]),
            self.rec(2, "open", ["a"], ["a"]),
        ]
        assert accuracy(recs, "open") == pytest.approx(2.0 / 3.0)

    def test_missing_type_rejected(self):
        recs = [self.rec(0, "open", ["a"], ["a"])]
        with pytest.raises(DegenerateInputError):
            accuracy(recs, "closed")

    def test_reference_must_be_nonempty(self):
        with pytest.raises(DegenerateInputError):
            EvalRecord(record_id=0, qtype="open", candidate=["a"], reference=[])


class TestFiles:
    def test_records_round_trip(self, tmp_path):
        recs = [
            EvalRecord(0, "open", ["alpha"], ["alpha"]),
            EvalRecord(1, "closed", ["yes"], ["no"]),
        ]
        write_records(tmp_path / "preds.jsonl", recs)
        again = read_records(tmp_path / "preds.jsonl")
        assert [(r.record_id, r.qtype, r.candidate, r.reference) for r in again] == \
               [(r.record_id, r.qtype, r.candidate, r.reference) for r in recs]

    def test_malformed_record_rejected(self, tmp_path):
        (tmp_path / "bad.jsonl").write_text('{"id": 0}\n')
        with pytest.raises(FormatError):
            read_records(tmp_path / "bad.jsonl")

    def test_summary_csv(self, tmp_path):
        recs = [
            EvalRecord(0, "open", ["alpha"], ["alpha"]),
            EvalRecord(1, "closed", ["yes"], ["yes"]),
        ]
        rows = summarize(recs)
        names = [r[0] for r in rows]
        assert names == ["bleu1", "rouge1", "acc_closed", "acc_open", "acc_all"]
        write_summary(tmp_path / "metrics.csv", rows)
        text = (tmp_path / "metrics.csv").read_text()
        assert text.splitlines()[0] == "metric,value,count"
        assert "acc_all" in text
