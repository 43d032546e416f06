"""Training loss: detection cross-entropy + masked L1 lane geometry + L1 road-plane pose.

The three terms are summed unweighted and unnormalised.  Confidences are
clamped to ``[EPS, 1 - EPS]`` before the logarithm; the clamp is flat outside
that interval, so the confidence gradient vanishes there.  The L1
subgradient at a zero residual is 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AnchorTensor, GroundTruthTensor

EPS = 1e-7


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    detection_term: float
    geometry_term: float
    pose_term: float


@dataclass
class LossGradients:
    confidence: np.ndarray  # (N, 3)
    x_offsets: np.ndarray  # (N, 3, K)
    z_values: np.ndarray  # (N, 3, K)
    pitch: float
    h_cam: float


def _check(pred: AnchorTensor, gt: GroundTruthTensor):
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")


def _masks(gt: GroundTruthTensor):
    p_hat = gt.assigned.astype(float)
    counted = ~gt.ignore
    point_w = p_hat[..., None] * gt.valid
    return p_hat, counted, point_w


def loss(pred: AnchorTensor, pred_pose, gt: GroundTruthTensor, gt_pose) -> LossBreakdown:
    """``pred_pose`` and ``gt_pose`` are ``(pitch_radians, h_cam)`` pairs."""
    _check(pred, gt)
    p_hat, counted, point_w = _masks(gt)
    p = np.clip(pred.confidence, EPS, 1 - EPS)
    ce = -(p_hat * np.log(p) + (1 - p_hat) * np.log1p(-p))
    det = float(np.sum(ce[counted]))
    geo = float(np.sum(point_w * (np.abs(pred.x_offsets - gt.x_offsets)
                                  + np.abs(pred.z_values - gt.z_values))))
    pose = abs(pred_pose[0] - gt_pose[0]) + abs(pred_pose[1] - gt_pose[1])
    return LossBreakdown(det + geo + pose, det, geo, float(pose))


def loss_gradients(pred: AnchorTensor, pred_pose, gt: GroundTruthTensor, gt_pose) -> LossGradients:
    _check(pred, gt)
    p_hat, counted, point_w = _masks(gt)
    raw = pred.confidence
    p = np.clip(raw, EPS, 1 - EPS)
    inside = (raw > EPS) & (raw < 1 - EPS)
    d_p = np.where(counted & inside, -p_hat / p + (1 - p_hat) / (1 - p), 0.0)
    d_x = point_w * np.sign(pred.x_offsets - gt.x_offsets)
    d_z = point_w * np.sign(pred.z_values - gt.z_values)
    return LossGradients(d_p, d_x, d_z,
                         float(np.sign(pred_pose[0] - gt_pose[0])),
                         float(np.sign(pred_pose[1] - gt_pose[1])))
