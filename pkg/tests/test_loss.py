import math

import numpy as np
import pytest

from conftest import straight_lane
from lane3d.anchors import D, AnchorTensor, associate_gt, default_layout
from lane3d.gradcheck import check_loss, loss_instance
from lane3d.loss import EPS, loss, loss_gradients

L = default_layout()


def one_lane_gt():
    return associate_gt([straight_lane(0.5, z=0.2)], L)


def test_perfect_prediction_leaves_only_clamp_residual():
    gt = one_lane_gt()
    b = loss(gt.as_prediction(), (0.03, 1.6), gt, (0.03, 1.6))
    assert b.geometry_term == 0.0 and b.pose_term == 0.0
    # every counted slot contributes -log(1 - EPS) ~ EPS because of the clamp
    n_slots = gt.confidence.size
    assert 0.0 <= b.total <= n_slots * EPS * 1.01
    g = loss_gradients(gt.as_prediction(), (0.03, 1.6), gt, (0.03, 1.6))
    assert not g.confidence.any() and not g.x_offsets.any() and not g.z_values.any()


def test_half_confidence_cross_entropy():
    gt = one_lane_gt()
    pred = gt.as_prediction()
    a = next(iter(gt.lane_slots.values()))
    pred.confidence[a] = 0.5
    b = loss(pred, (0.0, 1.5), gt, (0.0, 1.5))
    rest = (gt.confidence.size - 1) * -math.log1p(-EPS)
    assert b.detection_term == pytest.approx(-math.log(0.5) + rest, abs=1e-12)
    assert b.total == pytest.approx(0.6931, abs=1e-4)


def test_pose_term_is_l1():
    gt = one_lane_gt()
    b = loss(gt.as_prediction(), (0.01, 1.52), gt, (0.0, 1.5))
    assert b.pose_term == pytest.approx(0.03, abs=1e-12)
    swapped = loss(gt.as_prediction(), (0.0, 1.5), gt, (0.01, 1.52))
    assert swapped.pose_term == b.pose_term


def test_geometry_sign_gradient():
    gt = one_lane_gt()
    pred = gt.as_prediction()
    a, t = next(iter(gt.lane_slots.values()))
    pred.x_offsets[a, t, 0] += 0.3
    pred.z_values[a, t, 1] -= 0.2
    g = loss_gradients(pred, (0, 1.5), gt, (0, 1.5))
    assert g.x_offsets[a, t, 0] == 1.0 and g.z_values[a, t, 1] == -1.0
    assert loss(pred, (0, 1.5), gt, (0, 1.5)).geometry_term == pytest.approx(0.5)


def test_masking():
    rng = np.random.default_rng(0)
    pred, pose, gt, gt_pose = loss_instance(3)
    g = loss_gradients(pred, pose, gt, gt_pose)
    masked = ~(gt.assigned[..., None] & gt.valid)
    assert not g.x_offsets[masked].any() and not g.z_values[masked].any()
    assert not g.confidence[gt.ignore].any()
    # invalid / unassigned geometry has no effect on the loss
    pred.x_offsets[masked] += rng.normal(size=masked.sum())
    assert loss(pred, pose, gt, gt_pose) == loss(*loss_instance(3))


def test_ignored_slots_excluded_from_detection():
    gt = one_lane_gt()
    gt.ignore[0, D] = True
    pred = gt.as_prediction()
    base = loss(pred, (0, 1.5), gt, (0, 1.5)).detection_term
    pred.confidence[0, D] = 0.999
    assert loss(pred, (0, 1.5), gt, (0, 1.5)).detection_term == base


def test_decomposition_and_nonnegativity():
    for seed in range(50):
        b = loss(*loss_instance(seed))
        assert b.total == b.detection_term + b.geometry_term + b.pose_term
        assert min(b.detection_term, b.geometry_term, b.pose_term) >= 0


def test_clamp_keeps_loss_finite():
    gt = one_lane_gt()
    pred = gt.as_prediction()
    pred.confidence[:] = 1.0 - pred.confidence
    b = loss(pred, (0, 1.5), gt, (0, 1.5))
    assert math.isfinite(b.total)
    assert b.detection_term == pytest.approx(gt.confidence.size * -math.log(EPS), rel=1e-6)


def test_shape_mismatch():
    gt = one_lane_gt()
    with pytest.raises(ValueError):
        loss(AnchorTensor(np.zeros((4, 3, 6)), np.zeros((4, 3, 6)), np.zeros((4, 3))), (0, 1), gt, (0, 1))


def test_finite_differences_random_instances():
    assert max(check_loss(s) for s in range(100)) < 1e-5
