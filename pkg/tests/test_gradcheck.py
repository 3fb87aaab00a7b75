"""Unit tests for the finite-difference gradient checker and its objective suite."""

import math

import pytest
import torch

from scenario_rag.errors import ConfigError
from scenario_rag.gradcheck import OBJECTIVE_STEPS, OBJECTIVES, grad_check, objective_points, run_suite

F64 = torch.float64


class TestGradCheck:
    def test_quadratic(self):
        result = grad_check(lambda p: (p["x"] ** 2).sum(), torch.tensor([1.0, -2.0, 0.5], dtype=F64))
        assert result.coordinates == 3
        assert result.max_rel_error < 1e-8

    def test_detects_wrong_gradient(self):
        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                return (x**2).sum()

            @staticmethod
            def backward(ctx, grad):
                return grad * torch.ones(3, dtype=F64)

        result = grad_check(lambda p: Wrong.apply(p["x"]), torch.tensor([1.0, 2.0, 3.0], dtype=F64))
        assert result.max_rel_error > 0.1
        assert result.worst == ("x", 2)

    def test_samples_coordinates(self):
        result = grad_check(lambda p: p["x"].sum(), torch.zeros(500, dtype=F64), samples=50)
        assert result.coordinates == 50

    def test_constant_loss(self):
        result = grad_check(lambda p: torch.tensor(1.0, dtype=F64), torch.zeros(4, dtype=F64))
        assert result.max_rel_error == 0.0

    def test_point_is_not_modified(self):
        x = torch.tensor([0.3, 0.7], dtype=F64)
        grad_check(lambda p: (p["x"] ** 3).sum(), x)
        assert x.tolist() == [0.3, 0.7]

    def test_skips_coordinates_straddling_a_relu_kink(self):
        x = torch.tensor([5e-4, 1.0, -1.0], dtype=F64)
        result = grad_check(lambda p: torch.relu(p["x"]).sum(), x, step=1e-3)
        assert result.skipped == 1
        assert result.coordinates == 2
        assert result.max_rel_error < 1e-10

    def test_skips_abs_kink(self):
        x = torch.tensor([2e-4, 0.5], dtype=F64)
        result = grad_check(lambda p: p["x"].abs().sum(), x, step=1e-3)
        assert (result.coordinates, result.skipped) == (1, 1)

    def test_smooth_loss_skips_nothing(self):
        result = grad_check(lambda p: torch.sigmoid(p["x"]).sum(), torch.linspace(-2, 2, 9, dtype=F64))
        assert result.skipped == 0
        assert result.coordinates == 9


class TestObjectiveSuite:
    @pytest.mark.parametrize("name", ["restoration", "alignment", "focal", "smooth_l1", "perception", "trajectory"])
    def test_smooth_objectives(self, name):
        for point in range(3):
            loss_fn, at = objective_points(name, point, seed=1)
            result = grad_check(loss_fn, at, samples=100, seed=point)
            assert result.max_rel_error < 1e-4, (name, point, result.worst)

    def test_stage1(self):
        for point in range(3):
            loss_fn, at = objective_points("stage1", point, seed=1)
            assert math.isfinite(float(loss_fn(at)))
            result = grad_check(loss_fn, at, step=OBJECTIVE_STEPS["stage1"], samples=100, seed=point)
            assert result.coordinates + result.skipped == 100
            assert result.coordinates > 0
            assert result.max_rel_error < 1e-4, (point, result.worst)

    def test_run_suite_stage1_rows(self):
        rows = run_suite(["stage1"], points=2, seed=1, samples=50)
        assert [r.point for r in rows] == [0, 1]
        assert all(r.coordinates + r.skipped == 50 for r in rows)
        assert all(r.max_rel_error < 1e-4 for r in rows)

    def test_run_suite_rows(self):
        rows = run_suite(["trajectory", "smooth_l1"], points=2, seed=1)
        assert [(r.objective, r.point) for r in rows] == [
            ("trajectory", 0), ("trajectory", 1), ("smooth_l1", 0), ("smooth_l1", 1),
        ]
        assert all(r.max_rel_error < 1e-4 for r in rows)

    def test_objective_names(self):
        assert "stage1" in OBJECTIVES

    def test_unknown_objective(self):
        with pytest.raises(ConfigError):
            objective_points("hinge", 0, seed=1)
