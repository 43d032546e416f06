"""3D lane evaluation: curve distance, one-to-one matching, AP and error percentiles.

Detection accuracy is AP over confidence thresholds; geometric accuracy is the
68th / 95th percentile of per-point errors of matched lanes, split into near
and far ranges.  GT lanes that do not cross ``Y_ref`` visibly inside the top
view are ignored: they count neither as positives nor do detections matching
them count as false positives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorLayout, DetectedLane, crosses_reference, default_layout
from .geometry import (below_horizon, flat_ground_backproject, pose_to_transform,
                       project_camera_points)
from .scenegen import CENTERLINE, Lane3D


@dataclass(frozen=True)
class EvalConfig:
    y_start: float = 0.0
    y_stop: float = 80.0
    y_step: float = 0.8
    match_threshold: float = 1.5
    near_range: tuple = (0.0, 30.0)
    far_range: tuple = (30.0, 80.0)
    weight_decay: float = 40.0  # w(y) ~ exp(-y / weight_decay)
    min_common_samples: int = 5
    operating_threshold: float = 0.5
    layout: AnchorLayout = field(default_factory=default_layout)

    def __post_init__(self):
        if self.y_stop <= self.y_start or self.y_step <= 0 or self.match_threshold <= 0:
            raise ValueError("degenerate evaluation config")
        if self.weight_decay <= 0:
            raise ValueError("weight_decay must be positive")

    @property
    def sample_ys(self) -> np.ndarray:
        n = int(round((self.y_stop - self.y_start) / self.y_step))
        return np.linspace(self.y_start, self.y_start + n * self.y_step, n + 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(-(self.sample_ys - self.y_start) / self.weight_decay)
        return w / w.sum()


@dataclass
class MatchResult:
    pairs: list  # (gt index, det index, weighted distance)
    unmatched_gt: list
    unmatched_det: list
    errors: dict  # (gt index, det index) -> (per-sample errors, valid mask)
    ignored_det: list = field(default_factory=list)


@dataclass
class EvalReport:
    kind: str
    ap: float
    pr: list  # (threshold, precision, recall)
    near_1sigma: float | None
    near_2sigma: float | None
    far_1sigma: float | None
    far_2sigma: float | None
    n_gt: int
    n_ignored_gt: int
    n_det: int
    n_matched: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "ap": self.ap,
            "near": {"1sigma": self.near_1sigma, "2sigma": self.near_2sigma},
            "far": {"1sigma": self.far_1sigma, "2sigma": self.far_2sigma},
            "n_gt": self.n_gt, "n_ignored_gt": self.n_ignored_gt,
            "n_det": self.n_det, "n_matched_at_operating_threshold": self.n_matched,
            "pr": [list(p) for p in self.pr],
        }


@dataclass
class GtExample:
    id: int
    frame: str
    lanes: list  # Lane3D in `frame`
    ignored: list  # bool per lane


@dataclass
class PredExample:
    id: int
    frame: str
    lanes: list  # DetectedLane


def gt_example(example_id, lanes_eval, lanes_road, frame: str, layout: AnchorLayout) -> GtExample:
    """Ignore flags come from the road-frame copy of the same lanes."""
    ignored = [crosses_reference(l, layout) is None for l in lanes_road]
    return GtExample(example_id, frame, list(lanes_eval), ignored)


def _interp_xz(points: np.ndarray, ys: np.ndarray):
    """Piecewise-linear (x, z) at ``ys`` plus the bracketing indices.

    GT and detections share this, so identical curves resample bit-identically.
    """
    ly = points[:, 1]
    ok = (ys >= ly[0]) & (ys <= ly[-1])
    i = np.clip(np.searchsorted(ly, ys, side="right") - 1, 0, len(ly) - 2)
    exact = ly[i] == ys
    i_hi = np.where(exact, i, i + 1)
    t = np.where(exact, 0.0, (ys - ly[i]) / (ly[i + 1] - ly[i]))
    pa, pb = points[i], points[i + 1]
    x = pa[:, 0] + t * (pb[:, 0] - pa[:, 0])
    z = pa[:, 2] + t * (pb[:, 2] - pa[:, 2])
    # the last sample can coincide with the final point
    last = ys == ly[-1]
    x[last], z[last] = points[-1, 0], points[-1, 2]
    i_hi = np.where(last, len(ly) - 1, i_hi)
    return np.where(ok, x, 0.0), np.where(ok, z, 0.0), i, i_hi, ok


def _resample_gt(lane: Lane3D, ys: np.ndarray):
    if len(lane.points) < 2:
        return np.zeros(len(ys)), np.zeros(len(ys)), np.zeros(len(ys), dtype=bool)
    x, z, i, i_hi, ok = _interp_xz(lane.points, ys)
    last = ys == lane.points[-1, 1]
    vis = lane.visible[i] & lane.visible[i_hi]
    vis[last] = lane.visible[-1]
    return x, z, ok & vis


def _resample_det(points: np.ndarray, ys: np.ndarray):
    if len(points) < 2:
        return np.zeros(len(ys)), np.zeros(len(ys)), np.zeros(len(ys), dtype=bool)
    x, z, _, _, ok = _interp_xz(points, ys)
    return x, z, ok


def curve_distance(gt: Lane3D, det, cfg: EvalConfig):
    """Weighted mean (x, z) distance at common samples; +inf below the minimum overlap.

    Returns ``(distance, per_sample_errors, valid_mask)``.
    """
    ys = cfg.sample_ys
    gx, gz, gok = _resample_gt(gt, ys)
    pts = det.points if isinstance(det, (DetectedLane, Lane3D)) else np.asarray(det)
    dx, dz, dok = _resample_det(pts, ys)
    mask = gok & dok
    err = np.where(mask, np.hypot(gx - dx, gz - dz), 0.0)
    if mask.sum() < cfg.min_common_samples:
        return float("inf"), err, mask
    w = cfg.weights[mask]
    return float(np.sum(w * err[mask]) / np.sum(w)), err, mask


def _greedy(dist: np.ndarray, threshold: float, rows=None, cols=None):
    rows = range(dist.shape[0]) if rows is None else rows
    cols = range(dist.shape[1]) if cols is None else cols
    cand = sorted((dist[g, d], g, d) for g in rows for d in cols if dist[g, d] <= threshold)
    used_g, used_d, pairs = set(), set(), []
    for dd, g, d in cand:
        if g not in used_g and d not in used_d:
            used_g.add(g)
            used_d.add(d)
            pairs.append((g, d, float(dd)))
    return pairs


def _distance_table(gt_lanes, det_lanes, cfg, gt_ignored=None):
    """Pairwise distances; ignored GT rows use the full curve, occluded parts included,
    since they only serve to excuse detections of lanes that are not scored."""
    dist = np.full((len(gt_lanes), len(det_lanes)), np.inf)
    errs = {}
    for g, gl in enumerate(gt_lanes):
        if gt_ignored is not None and gt_ignored[g]:
            gl = Lane3D(gl.kind, gl.points, np.ones(len(gl.points), dtype=bool), gl.source)
        for d, dl in enumerate(det_lanes):
            dist[g, d], e, m = curve_distance(gl, dl, cfg)
            errs[g, d] = (e, m)
    return dist, errs


def _match_from_table(dist, errs, gt_ignored, det_subset, cfg) -> MatchResult:
    n_gt = dist.shape[0]
    valid_g = [g for g in range(n_gt) if not gt_ignored[g]]
    ign_g = [g for g in range(n_gt) if gt_ignored[g]]
    pairs = _greedy(dist, cfg.match_threshold, valid_g, det_subset)
    used_d = {d for _, d, _ in pairs}
    rest = [d for d in det_subset if d not in used_d]
    ignored_det = [d for d in rest if ign_g and dist[ign_g, d].min() <= cfg.match_threshold]
    matched_g = {g for g, _, _ in pairs}
    return MatchResult(
        pairs=pairs,
        unmatched_gt=[g for g in valid_g if g not in matched_g],
        unmatched_det=[d for d in rest if d not in ignored_det],
        errors={(g, d): errs[g, d] for g, d, _ in pairs},
        ignored_det=ignored_det,
    )


def match_lanes(gt_set, det_set, cfg: EvalConfig, gt_ignored=None) -> MatchResult:
    """Greedy one-to-one matching in ascending weighted distance (<= threshold)."""
    gt_ignored = gt_ignored if gt_ignored is not None else [False] * len(gt_set)
    dist, errs = _distance_table(gt_set, det_set, cfg, gt_ignored)
    return _match_from_table(dist, errs, gt_ignored, list(range(len(det_set))), cfg)


def _pair_up(gt_data, pred_data, kind):
    preds = {p.id: p for p in pred_data}
    out = []
    for g in gt_data:
        p = preds.get(g.id)
        if p is not None and p.frame != g.frame:
            raise ValueError(f"example {g.id}: prediction frame {p.frame!r} != ground truth {g.frame!r}")
        keep = [i for i, l in enumerate(g.lanes) if l.kind == kind]
        gl = [g.lanes[i] for i in keep]
        gi = [g.ignored[i] for i in keep]
        dl = [l for l in (p.lanes if p else []) if l.kind == kind]
        out.append((gl, gi, dl))
    return out


def _example_tables(gt_data, pred_data, cfg, kind):
    tables = []
    for gl, gi, dl in _pair_up(gt_data, pred_data, kind):
        dist, errs = _distance_table(gl, dl, cfg, gi)
        conf = np.array([l.confidence for l in dl], dtype=float)
        tables.append((dist, errs, gi, conf, cfg))
    return tables


def _ap_from_tables(tables):
    total_gt = sum(sum(not i for i in gi) for _, _, gi, _, _ in tables)
    events = []
    for dist, errs, gi, conf, cfg in tables:
        prev_tp = prev_cnt = 0
        for c in np.unique(conf)[::-1]:
            subset = list(np.flatnonzero(conf >= c))
            m = _match_from_table(dist, errs, gi, subset, cfg)
            tp = len(m.pairs)
            cnt = tp + len(m.unmatched_det)
            events.append((c, tp - prev_tp, cnt - prev_cnt))
            prev_tp, prev_cnt = tp, cnt
    if not events or total_gt == 0:
        return 0.0, []
    events.sort(key=lambda e: -e[0])
    pr = []
    tp = cnt = 0
    i = 0
    while i < len(events):
        c = events[i][0]
        while i < len(events) and events[i][0] == c:
            tp += events[i][1]
            cnt += events[i][2]
            i += 1
        prec = tp / cnt if cnt else 1.0
        pr.append((float(c), prec, tp / total_gt))
    order = sorted(range(len(pr)), key=lambda k: (pr[k][2], -k))
    rec = np.array([0.0] + [pr[k][2] for k in order] + [1.0])
    pre = np.array([0.0] + [pr[k][1] for k in order] + [0.0])
    pre = np.maximum.accumulate(pre[::-1])[::-1]
    steps = np.flatnonzero(rec[1:] != rec[:-1])
    ap = float(np.sum((rec[steps + 1] - rec[steps]) * pre[steps + 1]))
    return ap, pr


def average_precision(gt_data, pred_data, cfg: EvalConfig | None = None, kind: str = CENTERLINE):
    """AP (all-point precision envelope) and the (threshold, precision, recall) samples."""
    cfg = cfg or EvalConfig()
    tables = _example_tables(gt_data, pred_data, cfg, kind)
    return _ap_from_tables(tables)


def error_percentiles(matches, cfg: EvalConfig | None = None):
    """Near/far (68th, 95th) percentiles of pooled point errors; None for an empty range."""
    cfg = cfg or EvalConfig()
    ys = cfg.sample_ys
    near, far = [], []
    in_near = (ys >= cfg.near_range[0]) & (ys < cfg.near_range[1])
    in_far = (ys >= cfg.far_range[0]) & (ys <= cfg.far_range[1])
    for m in matches:
        for e, mask in m.errors.values():
            near.append(e[mask & in_near])
            far.append(e[mask & in_far])

    def pct(chunks):
        pool = np.concatenate(chunks) if chunks else np.zeros(0)
        if pool.size == 0:
            return None, None
        p68, p95 = np.percentile(pool, [68, 95])
        return float(p68), float(p95)

    return {"near": pct(near), "far": pct(far)}


def evaluate(gt_data, pred_data, cfg: EvalConfig | None = None, kind: str = CENTERLINE) -> EvalReport:
    cfg = cfg or EvalConfig()
    tables = _example_tables(gt_data, pred_data, cfg, kind)
    ap, pr = _ap_from_tables(tables)
    matches = []
    n_det = 0
    for dist, errs, gi, conf, _ in tables:
        n_det += len(conf)
        subset = list(np.flatnonzero(conf > cfg.operating_threshold))
        matches.append(_match_from_table(dist, errs, gi, subset, cfg))
    pct = error_percentiles(matches, cfg)
    n_ign = sum(sum(gi) for _, _, gi, _, _ in tables)
    n_gt = sum(len(gi) for _, _, gi, _, _ in tables) - n_ign
    return EvalReport(kind, ap, pr, *pct["near"], *pct["far"], n_gt, n_ign, n_det,
                      sum(len(m.pairs) for m in matches))


def flat_ground_baseline(lanes_camera, pose, intrinsics, confidence: float = 1.0):
    """Project GT lanes into the image, then back onto the flat road plane.

    Only visible points in front of the camera and below the horizon are
    used; the result is in the camera frame.
    """
    c2r = pose_to_transform(pose)
    r2c = c2r.inverse()
    out = []
    for lane in lanes_camera:
        pts = lane.points[lane.visible & (lane.points[:, 1] > 0)]
        if len(pts) < 2:
            continue
        pix = project_camera_points(pts, intrinsics)
        pix = pix[below_horizon(pix, pose, intrinsics)]
        if len(pix) < 2:
            continue
        cam = r2c.apply(flat_ground_backproject(pix, pose, intrinsics))
        keep = [0]
        for i in range(1, len(cam)):
            if cam[i, 1] > cam[keep[-1], 1]:
                keep.append(i)
        cam = cam[keep]
        if len(cam) < 2:
            continue
        out.append(DetectedLane(lane.kind, confidence, cam, cam.copy(), frame="camera"))
    return out
