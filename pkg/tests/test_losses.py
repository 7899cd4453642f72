import math

import numpy as np
import pytest

from pseudolab.losses import (
    LossConfig,
    dice_loss,
    lambda_ual_from_lr,
    structural_loss,
    total_loss,
    ual_loss,
)
from pseudolab.pixmap import ProbMap

from oracles import central_difference


def random_pair(rng, shape=(6, 7)):
    pred = ProbMap(rng.uniform(0.05, 0.95, size=shape))
    target = ProbMap(rng.uniform(size=shape))
    return pred, target


def binary_pair(rng, shape=(6, 7)):
    values = (rng.uniform(size=shape) > 0.5).astype(float)
    return ProbMap(values), ProbMap(values.copy())


def rel_errors(analytic, numeric):
    denom = np.maximum(np.abs(numeric), 1e-6)
    return np.abs(analytic - numeric) / denom


def test_dice_perfect_match_is_zero():
    rng = np.random.default_rng(70)
    pred, target = binary_pair(rng)
    assert dice_loss(pred, target) == 0.0


def test_dice_disjoint_fixture():
    pred = ProbMap(np.zeros((2, 2)))
    target = ProbMap(np.ones((2, 2)))
    assert dice_loss(pred, target, LossConfig(dice_p=2, dice_smooth=1.0)) == pytest.approx(0.8, abs=1e-15)


def test_dice_symmetric_and_bounded():
    rng = np.random.default_rng(71)
    for _ in range(50):
        pred, target = random_pair(rng)
        value = dice_loss(pred, target)
        assert 0.0 <= value < 1.0
        assert value == pytest.approx(dice_loss(target, pred), abs=1e-15)


def test_dice_gradient_matches_finite_differences():
    rng = np.random.default_rng(72)
    cfg = LossConfig()
    worst = 0.0
    for _ in range(10):
        pred, target = random_pair(rng, shape=(4, 5))
        _, grad = dice_loss(pred, target, cfg, with_grad=True)
        numeric = central_difference(lambda v: dice_loss(ProbMap(v), target, cfg), pred.data)
        worst = max(worst, float(rel_errors(grad, numeric).max()))
    assert worst < 1e-4


def test_ual_literal_fixtures():
    saturated = ProbMap(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert ual_loss(saturated, LossConfig(ual_form="literal")) == 0.0
    half = ProbMap(np.full((2, 3), 0.5))
    assert ual_loss(half, LossConfig(ual_form="literal", lambda_ual=1.0)) == pytest.approx(
        -6 * math.log(2.0), abs=1e-12
    )


def test_ual_confidence_fixture():
    half = ProbMap(np.full((2, 3), 0.5))
    assert ual_loss(half, LossConfig(ual_form="confidence", lambda_ual=1.0)) == pytest.approx(6.0, abs=1e-12)


@pytest.mark.parametrize("form", ["literal", "confidence"])
def test_ual_gradient_matches_finite_differences(form):
    rng = np.random.default_rng(73)
    cfg = LossConfig(ual_form=form, lambda_ual=0.7)
    worst = 0.0
    for _ in range(10):
        pred, _ = random_pair(rng, shape=(4, 5))
        _, grad = ual_loss(pred, cfg, with_grad=True)
        numeric = central_difference(lambda v: ual_loss(ProbMap(v), cfg), pred.data)
        worst = max(worst, float(rel_errors(grad, numeric).max()))
    assert worst < 1e-4


def test_structural_perfect_match_is_zero():
    ones = ProbMap(np.ones((5, 5)))
    assert structural_loss(ones, ones, LossConfig(structural_form="weighted")) == 0.0
    assert structural_loss(ones, ones, LossConfig(structural_form="plain")) == 0.0


def test_structural_weighted_equals_plain_on_constant_target():
    rng = np.random.default_rng(74)
    pred = ProbMap(rng.uniform(0.05, 0.95, size=(9, 9)))
    target = ProbMap(np.full((9, 9), 1.0))
    weighted = structural_loss(pred, target, LossConfig(structural_form="weighted"))
    plain = structural_loss(pred, target, LossConfig(structural_form="plain"))
    assert weighted == pytest.approx(plain, abs=1e-12)


def test_structural_zero_iff_equal_binary():
    rng = np.random.default_rng(75)
    pred, target = binary_pair(rng)
    assert structural_loss(pred, target, LossConfig(structural_form="plain")) == 0.0
    flipped = target.data.copy()
    flipped[0, 0] = 1.0 - flipped[0, 0]
    assert structural_loss(ProbMap(flipped), target, LossConfig(structural_form="plain")) > 0.0
    assert dice_loss(ProbMap(flipped), target) > 0.0


@pytest.mark.parametrize("form", ["weighted", "plain"])
def test_structural_gradient_matches_finite_differences(form):
    rng = np.random.default_rng(76)
    cfg = LossConfig(structural_form=form)
    worst = 0.0
    for _ in range(10):
        pred, target = random_pair(rng, shape=(4, 5))
        _, grad = structural_loss(pred, target, cfg, with_grad=True)
        numeric = central_difference(lambda v: structural_loss(ProbMap(v), target, cfg), pred.data)
        worst = max(worst, float(rel_errors(grad, numeric).max()))
    assert worst < 1e-4


def test_total_loss_composition_identity():
    rng = np.random.default_rng(77)
    cfg = LossConfig()
    assert cfg.alpha == 4.0 and cfg.beta == 2.0
    for _ in range(20):
        pred, target = random_pair(rng)
        report = total_loss(pred, target, cfg)
        expected = (
            structural_loss(pred, target, cfg)
            + cfg.alpha * dice_loss(pred, target, cfg)
            + cfg.beta * ual_loss(pred, cfg)
        )
        assert report.total == pytest.approx(expected, abs=1e-12)


def test_total_loss_zero_on_binary_match_without_ual():
    rng = np.random.default_rng(78)
    pred, target = binary_pair(rng)
    report = total_loss(pred, target, LossConfig(lambda_ual=0.0))
    assert report.total == 0.0


def test_total_loss_gradient_combines_components():
    rng = np.random.default_rng(79)
    cfg = LossConfig()
    pred, target = random_pair(rng, shape=(4, 4))
    report = total_loss(pred, target, cfg, with_grad=True)
    numeric = central_difference(
        lambda v: total_loss(ProbMap(v), target, cfg).total, pred.data
    )
    assert float(rel_errors(report.grad, numeric).max()) < 1e-4


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        dice_loss(ProbMap(np.zeros((2, 2))), ProbMap(np.zeros((3, 2))))
    with pytest.raises(ValueError):
        structural_loss(ProbMap(np.zeros((2, 2))), ProbMap(np.zeros((3, 2))))


def test_out_of_range_rejected():
    good = ProbMap(np.zeros((2, 2)))
    bad = ProbMap(np.full((2, 2), 1.5))
    with pytest.raises(ValueError):
        dice_loss(bad, good)
    with pytest.raises(ValueError):
        ual_loss(bad)


def test_lambda_schedule():
    assert lambda_ual_from_lr(1e-4, 1e-4) == 1.0
    assert lambda_ual_from_lr(5e-5, 1e-4) == pytest.approx(0.5)
    assert lambda_ual_from_lr(0.0, 1e-4) == 0.0
    assert lambda_ual_from_lr(2e-4, 1e-4) == 1.0
    with pytest.raises(ValueError):
        lambda_ual_from_lr(1e-4, 0.0)
