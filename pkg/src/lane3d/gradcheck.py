"""Central finite-difference checks of the sampler and loss gradients.

The error of one instance is the norm-wise relative error
``|analytic - numeric| / max(|analytic|, |numeric|)`` over all of its
gradient entries.  Instances are kept away from the kinks of the two
functions (integer sample coordinates, zero L1 residuals, the confidence
clamp) by at least ``KINK_MARGIN``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .anchors import N_SLOTS, AnchorTensor, GroundTruthTensor
from .geometry import bilinear_sample, bilinear_sample_backward
from .loss import loss, loss_gradients

FD_STEP = 1e-6
KINK_MARGIN = 1e-4
TOLERANCE = 1e-5
N_INSTANCES = 100


@dataclass(frozen=True)
class SuiteResult:
    name: str
    n_instances: int
    max_rel_error: float
    worst_seed: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


@dataclass(frozen=True)
class GradcheckReport:
    suites: tuple
    elapsed: float

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def lines(self):
        for s in self.suites:
            status = "PASS" if s.passed else "FAIL"
            yield (f"{s.name}: {status} max relative error {s.max_rel_error:.3e} "
                   f"over {s.n_instances} instances (worst seed {s.worst_seed})")


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def _central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        hi = f()
        flat[i] = old - step
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * step)
    return g


def _away_from_integers(rng, size, lo, hi):
    x = rng.uniform(lo, hi, size)
    frac = x - np.floor(x)
    bad = (frac < KINK_MARGIN * 10) | (frac > 1 - KINK_MARGIN * 10)
    x[bad] += 0.5
    return x


def sampler_instance(seed: int):
    rng = np.random.default_rng(seed)
    rows, cols, ch = rng.integers(3, 7), rng.integers(3, 7), rng.integers(1, 3)
    img = rng.normal(size=(rows, cols, ch))
    gh, gw = rng.integers(2, 5), rng.integers(2, 5)
    # a margin beyond the border exercises the zero padding
    u = _away_from_integers(rng, (gh, gw), -1.5, cols + 0.5)
    v = _away_from_integers(rng, (gh, gw), -1.5, rows + 0.5)
    grid = np.stack([u, v], axis=-1)
    upstream = rng.normal(size=(gh, gw, ch))
    return img, grid, upstream


def check_sampler(seed: int, backward=bilinear_sample_backward) -> float:
    img, grid, up = sampler_instance(seed)

    def objective():
        return float(np.sum(bilinear_sample(img, grid) * up))

    gi, gg = backward(img, grid, up)
    ni = _central_diff(objective, img)
    ng = _central_diff(objective, grid)
    return relative_error(np.concatenate([np.ravel(gi), np.ravel(gg)]),
                          np.concatenate([ni.ravel(), ng.ravel()]))


def _away_from_zero(rng, size, scale=1.0):
    r = rng.normal(scale=scale, size=size)
    small = np.abs(r) < KINK_MARGIN * 10
    r[small] = np.where(r[small] >= 0, 1.0, -1.0) * 0.1
    return r


def loss_instance(seed: int, n_anchors: int = 4, k: int = 6):
    rng = np.random.default_rng(seed)
    shape = (n_anchors, N_SLOTS, k)
    assigned = rng.random((n_anchors, N_SLOTS)) < 0.4
    ignore = ~assigned & (rng.random((n_anchors, N_SLOTS)) < 0.2)
    valid = assigned[..., None] & (rng.random(shape) < 0.8)
    gt_x = rng.normal(size=shape)
    gt_z = rng.normal(scale=0.5, size=shape)
    gt = GroundTruthTensor(gt_x, gt_z, assigned.astype(float), assigned=assigned,
                           valid=valid, ignore=ignore)
    pred = AnchorTensor(gt_x + _away_from_zero(rng, shape), gt_z + _away_from_zero(rng, shape),
                        rng.uniform(0.05, 0.95, (n_anchors, N_SLOTS)))
    gt_pose = (rng.uniform(0.0, 0.087), rng.uniform(1.4, 1.9))
    pred_pose = np.array(gt_pose) + _away_from_zero(rng, 2, 0.05)
    return pred, pred_pose, gt, gt_pose


def check_loss(seed: int, gradients=loss_gradients) -> float:
    pred, pose, gt, gt_pose = loss_instance(seed)

    def objective():
        return loss(pred, pose, gt, gt_pose).total

    g = gradients(pred, pose, gt, gt_pose)
    analytic = np.concatenate([np.ravel(g.confidence), np.ravel(g.x_offsets),
                               np.ravel(g.z_values), [g.pitch, g.h_cam]])
    numeric = np.concatenate([
        _central_diff(objective, pred.confidence).ravel(),
        _central_diff(objective, pred.x_offsets).ravel(),
        _central_diff(objective, pred.z_values).ravel(),
        _central_diff(objective, pose),
    ])
    return relative_error(analytic, numeric)


def _suite(name, check, seed, n):
    errs = [(check(seed + i), seed + i) for i in range(n)]
    worst, worst_seed = max(errs)
    return SuiteResult(name, n, worst, worst_seed)


def run_gradcheck(seed: int = 0, n_instances: int = N_INSTANCES,
                  sampler_backward=bilinear_sample_backward,
                  gradients=loss_gradients) -> GradcheckReport:
    """Both suites on instances seeded ``seed, seed + 1, ...``."""
    t0 = time.perf_counter()
    suites = (
        _suite("bilinear_sample_backward", lambda s: check_sampler(s, sampler_backward),
               seed, n_instances),
        _suite("loss_gradients", lambda s: check_loss(s, gradients), seed, n_instances),
    )
    return GradcheckReport(suites, time.perf_counter() - t0)
