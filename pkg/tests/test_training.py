import numpy as np
import pytest

from semfuse.errors import CheckpointError, EvaluationError, ParameterError
from semfuse.model import ModelConfig, VqaModel
from semfuse.optim import AdamW
from semfuse.synthdata import TaskConfig, build_vocab, make_synthetic_dataset
from semfuse.tensor import Parameter
from semfuse.training import (
    StageConfig,
    load_checkpoint,
    predict_records,
    read_curve,
    run_stage,
    save_checkpoint,
    write_curve,
)

MODEL_CFG = ModelConfig(dim=8, grid=4, scales=2, fusion_layers=1, fusion_heads=1,
                        fusion_ffn=16, lm_layers=1, lm_heads=1, lm_ffn=16,
                        max_seq_len=32, queue_tau=0.5)
TASK_CFG = TaskConfig(grid=4, dim=8, scales=2, classes=2, distractors=1, queue_k=3,
                      closed_fraction=0.0, noise=0.2)


@pytest.fixture
def setup():
    vocab = build_vocab(TASK_CFG)
    model = VqaModel(MODEL_CFG, vocab, seed=0)
    data = make_synthetic_dataset(12, TASK_CFG, vocab, seed=5)
    return vocab, model, data


class TestAdamW:
    def test_zero_gradient_no_decay_is_identity(self):
        p = Parameter(np.array([1.5, -2.0]), "p", "lm")
        p.grad = np.zeros(2)
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        assert np.array_equal(p.data, [1.5, -2.0])

    def test_decoupled_decay_only(self):
        p = Parameter(np.array(1.0), "p", "lm")
        p.grad = np.array(0.0)
        opt = AdamW([p], lr=0.1, weight_decay=0.01)
        opt.step()
        assert float(p.data) == pytest.approx(0.999, abs=1e-15)

    def test_first_step_is_lr_sized(self):
        p = Parameter(np.array(0.0), "p", "lm")
        p.grad = np.array(1.0)
        opt = AdamW([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0)
        opt.step()
        assert float(p.data) == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)

    def test_nonfinite_gradient_aborts(self):
        p = Parameter(np.array(1.0), "p", "lm")
        p.grad = np.array(np.nan)
        opt = AdamW([p], lr=0.1)
        with pytest.raises(EvaluationError):
            opt.step()
        assert float(p.data) == 1.0  # untouched

    def test_hyperparameter_validation(self):
        p = Parameter(np.array(1.0), "p", "lm")
        with pytest.raises(ParameterError):
            AdamW([p], lr=0.0)
        with pytest.raises(ParameterError):
            AdamW([p], lr=0.1, betas=(1.0, 0.999))


class TestStageConfig:
    def test_validation(self):
        with pytest.raises(ParameterError):
            StageConfig(lambda_sem=-1.0, lr=1e-3, epochs=1, trainable_groups=("lm",))
        with pytest.raises(ParameterError):
            StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1, trainable_groups=())
        with pytest.raises(ParameterError):
            StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1, trainable_groups=("bogus",))


class TestRunStage:
    def test_frozen_groups_are_bit_identical(self, setup):
        _, model, data = setup
        frozen_before = {p.name: p.data.copy()
                         for p in model.params() if p.group == "lm"}
        live_before = {p.name: p.data.copy()
                       for p in model.params() if p.group != "lm"}
        cfg = StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1,
                          trainable_groups=("projector", "fusion", "gate", "embedding"),
                          seed=3, batch_size=4)
        run_stage(model, data, cfg)
        for p in model.params():
            if p.group == "lm":
                assert np.array_equal(p.data, frozen_before[p.name]), p.name
            else:
                assert not np.array_equal(p.data, live_before[p.name]), p.name

    def test_lambda_zero_logs_sem_but_ignores_it(self, setup):
        vocab, _, data = setup
        # same run with different captions: updates identical when lambda is 0
        data_b = [type(s)(s.sample_id, s.grid, s.question_ids, s.answer_ids,
                          list(reversed(s.caption_ids)), s.planted, s.qtype,
                          s.target_class) for s in data]
        cfg = StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1,
                          trainable_groups=("lm",), seed=3, batch_size=4)
        model_a = VqaModel(MODEL_CFG, vocab, seed=0)
        res_a = run_stage(model_a, data, cfg)
        model_b = VqaModel(MODEL_CFG, vocab, seed=0)
        res_b = run_stage(model_b, data_b, cfg)
        for pa, pb in zip(model_a.params(), model_b.params()):
            assert np.array_equal(pa.data, pb.data), pa.name
        assert all(row[2] > 0 for row in res_a.curve)  # sem logged
        assert [r[3] for r in res_a.curve] == [r[3] for r in res_b.curve]

    def test_lambda_consistency(self, setup):
        _, model, data = setup
        cfg = StageConfig(lambda_sem=0.7, lr=1e-3, epochs=2,
                          trainable_groups=("projector", "fusion", "gate",
                                            "embedding", "lm"),
                          seed=3, batch_size=4)
        result = run_stage(model, data, cfg)
        for step, l_total, l_sem, l_nll in result.curve:
            assert l_total == 0.7 * l_sem + l_nll  # exact float identity

    def test_reproducible_curves(self, setup):
        vocab, _, data = setup
        cfg = StageConfig(lambda_sem=1.0, lr=1e-3, epochs=2,
                          trainable_groups=("projector", "fusion", "gate",
                                            "embedding", "lm"),
                          seed=9, batch_size=4)
        curves = []
        for _ in range(2):
            model = VqaModel(MODEL_CFG, vocab, seed=4)
            curves.append(run_stage(model, data, cfg).curve)
        assert curves[0] == curves[1]

    def test_max_steps_caps_run(self, setup):
        _, model, data = setup
        cfg = StageConfig(lambda_sem=0.0, lr=1e-3, epochs=50,
                          trainable_groups=("lm",), seed=3, batch_size=4, max_steps=5)
        result = run_stage(model, data, cfg)
        assert result.steps == 5

    def test_abort_on_poisoned_parameters(self, setup):
        _, model, data = setup
        model.param("gate.beta").data[...] = np.inf
        cfg = StageConfig(lambda_sem=1.0, lr=1e-3, epochs=1,
                          trainable_groups=("gate",), seed=3, batch_size=4)
        result = run_stage(model, data, cfg)
        assert result.aborted
        assert result.steps == 0


class TestCheckpoint:
    def test_round_trip(self, setup, tmp_path):
        vocab, model, data = setup
        cfg = StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1,
                          trainable_groups=("lm",), seed=3, batch_size=4)
        run_stage(model, data, cfg)
        save_checkpoint(tmp_path / "ckpt", model, meta={"stage": 1})
        other = VqaModel(MODEL_CFG, vocab, seed=99)
        assert not np.array_equal(other.embedding.data, model.embedding.data)
        meta = load_checkpoint(tmp_path / "ckpt", other)
        assert meta == {"stage": 1}
        for pa, pb in zip(model.params(), other.params()):
            assert np.array_equal(pa.data, pb.data)

    def test_optimizer_state_round_trip(self, setup, tmp_path):
        vocab, model, data = setup
        trainable = model.params_in_groups(("lm",))
        opt = AdamW(trainable, lr=1e-3)
        cfg = StageConfig(lambda_sem=0.0, lr=1e-3, epochs=1,
                          trainable_groups=("lm",), seed=3, batch_size=4)
        run_stage(model, data, cfg)
        opt.m[0][...] = 0.25
        opt.t = 7
        save_checkpoint(tmp_path / "ckpt", model, optimizer=opt)
        model2 = VqaModel(MODEL_CFG, vocab, seed=1)
        opt2 = AdamW(model2.params_in_groups(("lm",)), lr=1e-3)
        load_checkpoint(tmp_path / "ckpt", model2, optimizer=opt2)
        assert opt2.t == 7
        assert np.array_equal(opt2.m[0], opt.m[0])

    def test_shape_mismatch_names_parameter(self, setup, tmp_path):
        vocab, model, _ = setup
        save_checkpoint(tmp_path / "ckpt", model)
        bigger = VqaModel(ModelConfig(dim=16, grid=4, scales=2, fusion_layers=1,
                                      fusion_heads=1, fusion_ffn=16, lm_layers=1,
                                      lm_heads=1, lm_ffn=16, max_seq_len=32),
                          vocab, seed=0)
        with pytest.raises(CheckpointError, match="embedding.table"):
            load_checkpoint(tmp_path / "ckpt", bigger)

    def test_missing_manifest(self, setup, tmp_path):
        _, model, _ = setup
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing", model)


def test_curve_csv_round_trip(tmp_path):
    curve = [(1, 2.5, 0.5, 2.0), (2, 1.25, 0.25, 1.0)]
    write_curve(tmp_path / "loss.csv", curve)
    assert read_curve(tmp_path / "loss.csv") == curve


def test_predict_records_shape(setup):
    vocab, model, data = setup
    records = predict_records(model, data[:3])
    assert len(records) == 3
    assert all(r.reference for r in records)
