"""Unit tests for the perception and trajectory losses."""

import logging
import math

import pytest
import torch

from scenario_rag.errors import ConfigError, LengthMismatch, ShapeMismatch
from scenario_rag.objectives import (
    N_PATH,
    N_SPEED,
    FocalConfig,
    TrajectoryBatch,
    focal_loss,
    perception_loss,
    smooth_l1,
    smooth_l1_positives,
    trajectory_loss,
)

F64 = torch.float64


# ======================================================================
# Focal loss
# ======================================================================


class TestFocalLoss:
    def test_single_positive(self):
        result = focal_loss([0.8], [1.0])
        expected = -0.25 * (0.2**2) * math.log(0.8)
        assert result.loss.item() == pytest.approx(expected)
        assert result.no_positives is False

    def test_negative_term(self):
        result = focal_loss([0.5, 0.1], [1.0, 0.0])
        pos = -0.25 * 0.25 * math.log(0.5)
        neg = -0.75 * 0.01 * math.log(0.9)
        assert result.loss.item() == pytest.approx(pos + neg)

    def test_normalised_by_positives(self):
        one = focal_loss([0.6], [1.0]).loss.item()
        two = focal_loss([0.6, 0.6], [1.0, 1.0]).loss.item()
        assert two == pytest.approx(one)

    def test_gamma_zero_is_weighted_bce(self):
        loss = focal_loss([0.7], [1.0], FocalConfig(gamma=0.0)).loss.item()
        assert loss == pytest.approx(-0.25 * math.log(0.7))

    def test_no_positives(self, caplog):
        with caplog.at_level(logging.WARNING, logger="scenario_rag.objectives"):
            result = focal_loss([0.3, 0.6], [0.0, 0.0])
        assert result.loss.item() == 0.0
        assert result.no_positives is True
        assert "without positive labels" in caplog.text

    def test_saturated_probabilities_finite(self):
        result = focal_loss([1.0, 0.0], [1.0, 0.0])
        assert math.isfinite(result.loss.item())

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            focal_loss([0.5, 0.5], [1.0])

    def test_invalid_alpha(self):
        with pytest.raises(ConfigError):
            focal_loss([0.5], [1.0], FocalConfig(alpha=1.5))


# ======================================================================
# SmoothL1
# ======================================================================


class TestSmoothL1:
    def test_quadratic_and_linear_regions(self):
        assert smooth_l1([0.5], [0.0]).item() == pytest.approx(0.125)
        assert smooth_l1([3.0], [0.0]).item() == pytest.approx(2.5)

    def test_mean_over_components(self):
        assert smooth_l1([0.0, 2.0], [0.0, 0.0]).item() == pytest.approx(0.75)

    def test_continuous_at_one(self):
        below = smooth_l1([1.0 - 1e-9], [0.0]).item()
        above = smooth_l1([1.0 + 1e-9], [0.0]).item()
        assert below == pytest.approx(above, abs=1e-8)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            smooth_l1([1.0, 2.0], [1.0])

    def test_positives_only(self):
        pred = torch.tensor([[0.5, 0.5], [9.0, 9.0]], dtype=F64)
        gt = torch.zeros(2, 2, dtype=F64)
        loss = smooth_l1_positives(pred, gt, torch.tensor([1.0, 0.0]))
        assert loss.item() == pytest.approx(0.125)

    def test_positives_none(self):
        pred = torch.ones(2, 3, dtype=F64)
        assert smooth_l1_positives(pred, pred * 0, torch.zeros(2)).item() == 0.0

    def test_positives_shape(self):
        with pytest.raises(ShapeMismatch):
            smooth_l1_positives(torch.ones(2, 3, dtype=F64), torch.ones(2, 3, dtype=F64), torch.ones(3))


class TestPerceptionLoss:
    def test_weighting(self):
        assert perception_loss(0.5, 0.1) == pytest.approx(1.0)
        assert perception_loss(0.5, 0.1, lambda_c=2.0, lambda_e=0.0) == pytest.approx(1.0)


# ======================================================================
# Trajectory loss
# ======================================================================


class TestTrajectoryLoss:
    def make(self, **kwargs):
        return TrajectoryBatch(
            path_pred=torch.zeros(N_PATH, 2, dtype=F64),
            path_gt=torch.zeros(N_PATH, 2, dtype=F64),
            speed_pred=torch.zeros(N_SPEED, 2, dtype=F64),
            speed_gt=torch.zeros(N_SPEED, 2, dtype=F64),
            **kwargs,
        )

    def test_zero_when_equal(self):
        assert trajectory_loss(self.make()).item() == 0.0

    def test_weighted_sum_of_squares(self):
        batch = self.make(lambda_p=2.0, lambda_s=0.5)
        batch.path_pred[0] = torch.tensor([3.0, 4.0], dtype=F64)
        batch.speed_pred[1] = torch.tensor([1.0, 1.0], dtype=F64)
        assert trajectory_loss(batch).item() == pytest.approx(2.0 * 25.0 + 0.5 * 2.0)

    def test_wrong_waypoint_count(self):
        batch = self.make()
        batch.path_pred = torch.zeros(N_PATH - 1, 2, dtype=F64)
        with pytest.raises(ShapeMismatch):
            trajectory_loss(batch)

    def test_non_finite(self):
        batch = self.make()
        batch.speed_gt[0, 0] = math.nan
        with pytest.raises(ShapeMismatch):
            trajectory_loss(batch)
