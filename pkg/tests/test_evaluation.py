#!/usr/bin/env python
# -*- coding: utf-8 -*-

import numpy as np
import pytest
import torch

from core.config import VARIANTS, ModelConfig, TrainConfig
from core.data.dataset import WindowBatch
from core.errors import InsufficientDataError, ShapeError, UnknownVariantError
from core.evaluation.ablation import check_variants, fit_and_score, per_area_deltas, run_ablation, run_grid
from core.evaluation.gradcheck import (
    GradCase,
    check_gradients,
    register_case,
    registered_layers,
    unregister_case,
)
from core.evaluation.metrics import (
    metrics,
    metrics_frame,
    per_area_rmse,
    persistence_baseline,
    reference_check,
)
from core.model.layers import DTYPE

from tests.helpers import synthetic_case

TINY = ModelConfig(lookback=12, clusters=2, encoder_blocks=1, d_model=4, dropout=0.0)
QUICK = TrainConfig(max_epochs=2, patience=1, batch_size=128, seed=0)


def _ramp_batch(n_samples=3, n_areas=2, lookback=12, slope=0.01, horizons=(3, 6, 9, 12)):
    steps = np.arange(lookback + max(horizons))
    series = 0.1 + slope * steps
    inputs = np.zeros((n_samples, n_areas, lookback, 3))
    inputs[..., 0] = series[:lookback]
    targets = np.broadcast_to(series[[lookback - 1 + h for h in horizons]], (n_samples, n_areas, len(horizons)))
    return WindowBatch(inputs, np.array(targets), horizons)


class TestMetrics:
    """Test cases for per-horizon forecast metrics"""

    def test_perfect_forecast(self):
        target = np.random.default_rng(0).random((5, 3, 4))
        report = metrics(target.copy(), target, (3, 6, 9, 12))
        for m in report.per_horizon:
            assert (m.rmse, m.mae, m.rae, m.r2) == (0.0, 0.0, 0.0, 1.0)

    def test_swapped_pair(self):
        pred = np.array([0.0, 1.0]).reshape(2, 1, 1)
        target = np.array([1.0, 0.0]).reshape(2, 1, 1)
        m = metrics(pred, target).per_horizon[0]
        assert (m.rmse, m.mae, m.rae, m.r2) == (1.0, 1.0, 2.0, -3.0)

    def test_scaling_both_arrays(self):
        rng = np.random.default_rng(1)
        pred, target = rng.random((6, 4, 2)), rng.random((6, 4, 2))
        base = metrics(pred, target).per_horizon[0]
        scaled = metrics(3.0 * pred, 3.0 * target).per_horizon[0]
        assert scaled.rmse == pytest.approx(3.0 * base.rmse, rel=1e-12)
        assert scaled.mae == pytest.approx(3.0 * base.mae, rel=1e-12)
        assert scaled.rae == pytest.approx(base.rae, rel=1e-12)
        assert scaled.r2 == pytest.approx(base.r2, rel=1e-12)

    def test_area_order_does_not_matter(self):
        rng = np.random.default_rng(2)
        pred, target = rng.random((6, 5, 2)), rng.random((6, 5, 2))
        order = [4, 2, 0, 1, 3]
        a = metrics(pred, target).averages
        b = metrics(pred[:, order], target[:, order]).averages
        for name in a:
            assert b[name] == pytest.approx(a[name], rel=1e-12)

    def test_zero_variance_target(self):
        target = np.full((4, 2, 1), 0.5)
        pred = target + 0.1
        report = metrics(pred, target)
        m = report.per_horizon[0]
        assert m.rae is None and m.r2 is None
        assert m.rmse == pytest.approx(0.1)
        assert report.average("r2") is None

    def test_single_pair_rejected(self):
        with pytest.raises(InsufficientDataError):
            metrics(np.zeros((1, 1, 4)), np.zeros((1, 1, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics(np.zeros((2, 2, 4)), np.zeros((2, 2, 3)))

    def test_document_keys(self):
        target = np.random.default_rng(3).random((4, 3, 4))
        document = metrics(target * 0.9, target, (3, 6, 9, 12)).to_dict()
        assert list(document) == ["15min", "30min", "45min", "60min", "average"]
        assert document["30min"]["horizon_steps"] == 6

    def test_scaled_for_display(self):
        rng = np.random.default_rng(4)
        pred, target = rng.random((4, 3, 2)), rng.random((4, 3, 2))
        report = metrics(pred, target)
        shown = report.scaled()
        assert shown.per_horizon[0].rmse == pytest.approx(100.0 * report.per_horizon[0].rmse)
        assert shown.per_horizon[0].r2 == report.per_horizon[0].r2

    def test_frame_rows(self):
        target = np.random.default_rng(5).random((4, 3, 4))
        frame = metrics_frame({"full": metrics(target * 0.8, target, (3, 6, 9, 12))})
        assert len(frame) == 5 * 4
        assert set(frame["metric"]) == {"rmse", "mae", "rae", "r2"}


class TestPersistence:
    """Test cases for the last-value baseline"""

    def test_constant_series_is_exact(self):
        inputs = np.full((3, 2, 12, 3), 0.7)
        batch = WindowBatch(inputs, np.full((3, 2, 4), 0.7), (3, 6, 9, 12))
        pred = persistence_baseline(batch)
        assert pred.shape == (3, 2, 4)
        assert metrics(pred, batch.targets).average("rmse") == pytest.approx(0.0, abs=1e-15)

    def test_ramp_error_grows_with_horizon(self):
        batch = _ramp_batch(slope=0.01)
        report = metrics(persistence_baseline(batch), batch.targets, batch.horizon_offsets)
        for h, m in zip(batch.horizon_offsets, report.per_horizon):
            assert m.mae == pytest.approx(0.01 * h, abs=1e-12)

    def test_per_area_rmse(self):
        pred = np.zeros((2, 3, 1))
        target = np.array([[[0.1], [0.2], [0.0]], [[0.1], [0.2], [0.0]]])
        np.testing.assert_allclose(per_area_rmse(pred, target), [0.1, 0.2, 0.0])


class TestReferenceCheck:
    """Test cases for the comparison against the published error level"""

    @pytest.mark.parametrize("observed,met", [(0.0451, True), (0.05, True), (0.06, False)])
    def test_tolerance(self, observed, met):
        target = np.array([0.0, 1.0]).reshape(2, 1, 1)
        pred = target + np.array([observed, -observed]).reshape(2, 1, 1)
        check = reference_check(metrics(pred, target))
        assert check["met"] is met
        assert check["observed_rmse"] == pytest.approx(observed)
        assert set(check) == {"reference_rmse", "observed_rmse", "relative_error", "tolerance", "met"}


class TestAblation:
    """Test cases for the variant matrix"""

    @classmethod
    def setup_class(cls):
        cls.case = synthetic_case(n_areas=5, groups=2, t_steps=360, seed=3)

    def test_unknown_variant(self):
        with pytest.raises(UnknownVariantError) as excinfo:
            check_variants(["full", "no_everything"])
        assert "no_everything" in str(excinfo.value)

    def test_full_only_matches_single_fit(self):
        ablation = run_ablation(["full"], self.case.windows, self.case.structure, TINY, QUICK, seed=7)
        fit = fit_and_score(TINY, QUICK, self.case.windows, self.case.structure, seed=7)
        assert ablation.reports["full"] == fit.report
        assert ablation.histories["full"] == fit.history
        assert ablation.per_area.empty

    def test_every_variant_reported(self):
        ablation = run_ablation(VARIANTS, self.case.windows, self.case.structure, TINY, QUICK, seed=0,
                                area_ids=[f"a{i}" for i in range(5)])
        assert list(ablation.reports) == list(VARIANTS)
        for report in ablation.reports.values():
            assert len(report.per_horizon) == 4
            assert np.isfinite(report.average("rmse"))
        assert len(ablation.per_area) == 5 * (len(VARIANTS) - 1)
        assert set(ablation.per_area["area_id"]) == {f"a{i}" for i in range(5)}

    def test_per_area_deltas(self):
        frame = per_area_deltas({"full": np.array([0.1, 0.2]), "no_price": np.array([0.15, 0.1])}, ["x", "y"])
        assert frame["delta"].tolist() == pytest.approx([0.05, -0.1])
        assert frame["variant"].tolist() == ["no_price", "no_price"]

    def test_grid_cells(self):
        frame = run_grid([1], [0.5, 2.0], self.case.windows, self.case.structure, TINY, QUICK, seed=0)
        assert list(frame.columns) == ["encoder_blocks", "temperature", "val_rmse", "test_rmse", "best_epoch"]
        assert frame["temperature"].tolist() == [0.5, 2.0]
        assert frame["test_rmse"].notna().all()


@pytest.mark.slow
class TestAblationOrdering:
    """Desk-scale runs: removing a spatial or selection component should not help on average"""

    COMPARED = ("full", "no_module_a", "no_module_b", "no_var_sel")

    def test_full_model_is_best_on_average(self):
        model_config = ModelConfig(lookback=12, clusters=3, encoder_blocks=2, d_model=16)
        totals = dict.fromkeys(self.COMPARED, 0.0)
        seeds = (0, 1, 2)
        for seed in seeds:
            case = synthetic_case(n_areas=20, groups=3, t_steps=4032, seed=seed)
            train_config = TrainConfig(max_epochs=100, patience=15, batch_size=512, learning_rate=3e-3, seed=seed)
            ablation = run_ablation(self.COMPARED, case.windows, case.structure, model_config, train_config,
                                    seed=seed, step_minutes=case.step_minutes)
            for variant, report in ablation.reports.items():
                totals[variant] += report.average("rmse") / len(seeds)

        for variant in self.COMPARED[1:]:
            assert totals["full"] <= totals[variant], totals


class _WrongSquare(torch.autograd.Function):
    """x**2 with a backward pass that is off by a factor of two"""

    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return x * x

    @staticmethod
    def backward(ctx, grad):
        (x,) = ctx.saved_tensors
        return 4.0 * x * grad


def _wrong_square_case(rng, gen):
    x = torch.randn(3, generator=gen, dtype=DTYPE).requires_grad_(True)
    return GradCase(lambda: _WrongSquare.apply(x).sum(), {"corrupted": x})


class TestGradientCheck:
    """Test cases for the finite-difference harness itself"""

    @classmethod
    def setup_class(cls):
        register_case("wrong_square", _wrong_square_case)

    @classmethod
    def teardown_class(cls):
        unregister_case("wrong_square")

    def test_corrupted_backward_is_caught(self):
        report = check_gradients("wrong_square", trials=3)
        assert not report.passed
        assert {e.tensor for e in report.failures} == {"corrupted"}
        assert report.to_dict()["failures"] == ["corrupted"] * 3

    def test_registry_lists_fixture(self):
        assert "wrong_square" in registered_layers()
        assert "model" in registered_layers()

    def test_report_document(self):
        report = check_gradients("elu", trials=2)
        document = report.to_dict()
        assert document["passed"] is True
        assert document["per_tensor"].keys() == {"x"}
