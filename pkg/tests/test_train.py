import json

import numpy as np
import pytest

import oracles
from temporal_heads.data import Dataset, SynthSpec, synthesize
from temporal_heads.errors import ConfigError, DataError, GradCheckError, TrainingError
from temporal_heads.harness.baseline import FrameBaselineConfig
from temporal_heads.params import ParameterSet
from temporal_heads.tensor import Tensor
from temporal_heads.train import (AdamState, TrainConfig, TrainReport, adam_step, cross_entropy,
                                  fit, grad_check, relative_error)
from temporal_heads.tslstm import TsLstmConfig


def tiny_dataset(sigma=0.0, classes=2, per_class=8, seed=0):
    protos = ((0, 1), (1, 0)) if classes == 2 else None
    spec = SynthSpec(num_classes=classes, prototypes_per_class=protos, dim=6, length=9,
                     noise_sigma=sigma, train_per_class=per_class, test_per_class=2, seed=seed)
    return synthesize(spec)[0]


TINY = TsLstmConfig(num_segments=3, lstm_widths=(8,), num_classes=2)


def test_defaults_per_family():
    assert TrainConfig.for_family("tslstm").lr == 5e-5
    t = TrainConfig.for_family("tconv")
    assert (t.lr, t.weight_decay) == (1e-4, 0.1)
    assert TrainConfig().lr_decay_factor == 0.1 and TrainConfig().batch_size == 32


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_factor=1.0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1}, "tslstm")


def test_cross_entropy_uniform_is_log_c():
    assert float(cross_entropy(np.zeros((2, 7)), [0, 3]).data) == pytest.approx(np.log(7), abs=1e-15)


def test_cross_entropy_matches_loop():
    z = np.random.default_rng(0).normal(size=(3, 4))
    assert abs(float(cross_entropy(z, [0, 3, 1]).data) - oracles.cross_entropy(z, [0, 3, 1])) < 1e-12


def test_adam_zero_gradient_is_fixed_point():
    params = ParameterSet()
    params.add("w", np.array([1.0, -2.0]))
    state = AdamState()
    for _ in range(3):
        adam_step(params, {"w": np.zeros(2)}, state, TrainConfig(lr=0.1))
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])


def test_adam_first_step_moves_by_lr():
    params = ParameterSet()
    params.add("w", np.zeros(3))
    adam_step(params, {"w": np.array([0.3, -5.0, 1e-3])}, AdamState(), TrainConfig(lr=0.01))
    np.testing.assert_allclose(params["w"].data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_on_square_decreases_monotonically():
    params = ParameterSet()
    params.add("theta", np.array([1.0]))
    state, cfg = AdamState(), TrainConfig(lr=0.1)
    prev = 1.0
    for _ in range(10):
        theta = params["theta"].data
        adam_step(params, {"theta": 2 * theta}, state, cfg)
        assert abs(params["theta"].data[0]) < prev
        prev = abs(params["theta"].data[0])


def test_adam_decoupled_weight_decay():
    params = ParameterSet()
    params.add("w", np.array([2.0]))
    adam_step(params, {"w": np.zeros(1)}, AdamState(), TrainConfig(lr=0.1, weight_decay=0.5))
    assert params["w"].data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


def test_fit_is_deterministic():
    ds = tiny_dataset(sigma=0.1)
    cfg = TrainConfig.for_family("tslstm", lr=1e-2, max_epochs=3, batch_size=4, seed=7)
    a, b = fit(TINY, ds, cfg), fit(TINY, ds, cfg)
    assert a.losses == b.losses
    assert a.checksum == b.checksum
    assert fit(TINY, ds, TrainConfig.for_family("tslstm", lr=1e-2, max_epochs=3, batch_size=4, seed=8)).checksum != a.checksum


def test_zero_learning_rate_freezes_parameters():
    ds = tiny_dataset()
    cfg = TrainConfig(lr=0.0, max_epochs=3, batch_size=16, seed=1)
    initial = fit(TINY, ds, TrainConfig(lr=0.0, max_epochs=0, seed=1))
    report = fit(TINY, ds, cfg)
    assert report.checksum == initial.checksum
    # shuffling reorders the batch sum, so the trace is constant up to rounding
    np.testing.assert_allclose(report.losses, report.losses[0], rtol=1e-12, atol=0)


def test_tiny_tslstm_separates_order_swapped_pair():
    ds = tiny_dataset()
    report = fit(TINY, ds, TrainConfig(lr=1e-2, max_epochs=50, batch_size=8, seed=0))
    assert max(e.train_accuracy for e in report.epochs) == 1.0


def test_plateau_decays_learning_rate():
    ds = tiny_dataset()
    report = fit(TINY, ds, TrainConfig(lr=0.0, max_epochs=8, plateau_patience=2, seed=0))
    lrs = [e.lr for e in report.epochs]
    assert lrs == [0.0] * 8
    report = fit(FrameBaselineConfig(num_classes=2), ds,
                 TrainConfig(lr=1e-3, max_epochs=8, plateau_patience=2, seed=0))
    assert report.epochs[-1].lr < 1e-3
    assert all(b in (a, a * 0.1) for a, b in zip([e.lr for e in report.epochs], [e.lr for e in report.epochs][1:]))


def test_divergence_raises_with_epoch():
    ds = tiny_dataset()
    ds.x_train[0, 0, 0] = np.inf
    with pytest.raises(TrainingError) as info, np.errstate(invalid="ignore"):
        fit(FrameBaselineConfig(num_classes=2), ds, TrainConfig(lr=1e-3, max_epochs=2))
    assert info.value.epoch == 1


def test_empty_train_split():
    ds = Dataset(np.zeros((0, 4, 5)), np.zeros(0, int), np.zeros((0, 4, 5)), np.zeros(0, int), 2)
    with pytest.raises(DataError):
        fit(TINY, ds, TrainConfig())


def test_class_count_mismatch():
    with pytest.raises(ConfigError):
        fit(TsLstmConfig(num_segments=3, lstm_widths=(4,), num_classes=5), tiny_dataset(), TrainConfig())


def test_fc_only_gradient_check_is_tight():
    rng = np.random.default_rng(3)
    report = grad_check(FrameBaselineConfig(num_classes=3), (rng.normal(size=(2, 4, 5)), np.array([0, 2])))
    assert report.max_error < 1e-7
    assert report.worst_parameter.startswith("classifier")


def test_gradient_check_names_a_broken_parameter(monkeypatch):
    from temporal_heads.harness import baseline

    real = baseline.frame_logits

    def leaky(x, cfg, params):
        # the extra term depends on classifier.w but is hidden from backprop
        hidden = float((params["classifier.w"].data ** 2).sum())
        return real(x, cfg, params) + Tensor(np.array([hidden, 0.0, 0.0]))

    monkeypatch.setattr(baseline, "frame_logits", leaky)
    rng = np.random.default_rng(4)
    with pytest.raises(GradCheckError, match="classifier.w"):
        grad_check(FrameBaselineConfig(num_classes=3), (rng.normal(size=(2, 4, 5)), np.array([0, 2])))


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9]))[0] == pytest.approx(1e-4)
    assert relative_error(np.array([1.0]), np.array([1.0]))[0] == 0.0


def test_report_serialisation():
    report = fit(TINY, tiny_dataset(), TrainConfig(lr=1e-3, max_epochs=2, seed=0))
    doc = json.loads(report.to_json())
    back = TrainReport.from_dict(doc)
    assert back == report
    table = report.to_table().splitlines()
    assert table[0].split() == ["epoch", "loss", "train_acc", "eval_acc", "lr"]
    assert len(table) == 2 + 2 + 1
    assert all(0 <= e.eval_accuracy <= 1 for e in report.epochs)
