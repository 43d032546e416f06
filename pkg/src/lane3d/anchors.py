"""Anchor-per-column lane representation.

Each of the N anchors is a longitudinal line ``x = X_A[i]`` in the road frame
and owns three output slots: two centrelines (``C1``, ``C2``) and one
delimiter (``D``).  A slot holds K lateral offsets from the anchor and K
absolute heights at the fixed longitudinal positions ``y_refs`` plus a
confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .geometry import CameraPose, TopViewSpec, pose_to_transform
from .scenegen import CENTERLINE, DELIMITER, Lane3D

C1, C2, D = 0, 1, 2
SLOT_KINDS = (CENTERLINE, CENTERLINE, DELIMITER)
N_SLOTS = 3
DEFAULT_Y_REFS = (5.0, 20.0, 40.0, 60.0, 80.0, 100.0)
DECODE_STEP = 0.8


@dataclass(frozen=True)
class AnchorLayout:
    anchor_xs: tuple
    y_refs: tuple = DEFAULT_Y_REFS
    y_ref: float = 20.0
    x_half: float = 10.24

    def __post_init__(self):
        xs = np.asarray(self.anchor_xs, dtype=float)
        if len(xs) < 1:
            raise ValueError("need at least one anchor")
        if len(xs) > 2 and not np.allclose(np.diff(xs), xs[1] - xs[0], rtol=0, atol=1e-9):
            raise ValueError("anchors must be equally spaced")
        if np.any(np.diff(self.y_refs) <= 0):
            raise ValueError("y_refs must be strictly increasing")
        if self.y_ref not in self.y_refs:
            raise ValueError("y_ref must be one of y_refs")

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_xs)

    @property
    def k(self) -> int:
        return len(self.y_refs)

    @property
    def xs(self) -> np.ndarray:
        return np.asarray(self.anchor_xs, dtype=float)

    @property
    def ys(self) -> np.ndarray:
        return np.asarray(self.y_refs, dtype=float)


def default_layout(spec: TopViewSpec | None = None, y_refs=DEFAULT_Y_REFS,
                   y_ref: float = 20.0) -> AnchorLayout:
    """One anchor per column of the x8-reduced top view, at column centres."""
    spec = spec or TopViewSpec()
    if spec.W % 8:
        raise ValueError("top-view width must be divisible by 8")
    n = spec.W // 8
    spacing = 8 * spec.px_x
    half = n * spacing / 2
    xs = tuple(float(-half + (i + 0.5) * spacing) for i in range(n))
    return AnchorLayout(xs, tuple(y_refs), y_ref, half)


@dataclass
class AnchorTensor:
    """Prediction layout: offsets/heights (N, 3, K) and confidences (N, 3)."""

    x_offsets: np.ndarray
    z_values: np.ndarray
    confidence: np.ndarray

    def __post_init__(self):
        self.x_offsets = np.asarray(self.x_offsets, dtype=float)
        self.z_values = np.asarray(self.z_values, dtype=float)
        self.confidence = np.asarray(self.confidence, dtype=float)
        n, t = self.confidence.shape
        if t != N_SLOTS or self.x_offsets.shape != self.z_values.shape \
                or self.x_offsets.shape[:2] != (n, t):
            raise ValueError("inconsistent anchor tensor shapes")

    @property
    def shape(self):
        return self.x_offsets.shape

    @classmethod
    def zeros(cls, layout: AnchorLayout) -> "AnchorTensor":
        n, k = layout.n_anchors, layout.k
        return cls(np.zeros((n, N_SLOTS, k)), np.zeros((n, N_SLOTS, k)), np.zeros((n, N_SLOTS)))

    def as_array(self) -> np.ndarray:
        """Flat (3*(2K+1), N) layout of the prediction layer."""
        n, t, k = self.shape
        per_slot = np.concatenate([self.x_offsets, self.z_values, self.confidence[..., None]], axis=2)
        return per_slot.reshape(n, t * (2 * k + 1)).T.copy()


@dataclass
class GroundTruthTensor(AnchorTensor):
    """Anchor tensor plus assignment indicator, per-point validity and ignore flags."""

    assigned: np.ndarray = None
    valid: np.ndarray = None
    ignore: np.ndarray = None
    lane_slots: dict = field(default_factory=dict)  # lane index -> (anchor, slot)
    ignored_lanes: dict = field(default_factory=dict)  # lane index -> reason

    def __post_init__(self):
        super().__post_init__()
        self.assigned = np.asarray(self.assigned, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.ignore = np.asarray(self.ignore, dtype=bool)

    def as_prediction(self) -> AnchorTensor:
        return AnchorTensor(self.x_offsets.copy(), self.z_values.copy(),
                            self.assigned.astype(float))


def interpolate_lane_at(lane: Lane3D, y: float):
    """Linear (x, z) of a road-frame lane at longitude y, with a validity flag."""
    ys = lane.points[:, 1]
    if len(ys) < 2 or y < ys[0] or y > ys[-1]:
        return 0.0, 0.0, False
    i = int(np.searchsorted(ys, y, side="right")) - 1
    if ys[i] == y:
        p = lane.points[i]
        return float(p[0]), float(p[2]), bool(lane.visible[i])
    a, b = lane.points[i], lane.points[i + 1]
    t = (y - a[1]) / (b[1] - a[1])
    x = a[0] + t * (b[0] - a[0])
    z = a[2] + t * (b[2] - a[2])
    return float(x), float(z), bool(lane.visible[i] and lane.visible[i + 1])


def crosses_reference(lane: Lane3D, layout: AnchorLayout):
    """Lateral position at Y_ref if the lane crosses it visibly inside the top view."""
    x, _, ok = interpolate_lane_at(lane, layout.y_ref)
    if ok and abs(x) <= layout.x_half:
        return x
    return None


def nearest_anchor(x: float, layout: AnchorLayout) -> int:
    # argmin keeps the first (left) anchor on exact ties
    return int(np.argmin(np.abs(layout.xs - x)))


def associate_gt(lanes_road, layout: AnchorLayout) -> GroundTruthTensor:
    """Assign road-frame lanes to anchor slots; lanes that cannot be represented are ignored."""
    n, k = layout.n_anchors, layout.k
    xo = np.zeros((n, N_SLOTS, k))
    zv = np.zeros((n, N_SLOTS, k))
    valid = np.zeros((n, N_SLOTS, k), dtype=bool)
    assigned = np.zeros((n, N_SLOTS), dtype=bool)
    ignore = np.zeros((n, N_SLOTS), dtype=bool)
    lane_slots, ignored = {}, {}

    groups: dict = {}
    occluded_at_ref = []
    for idx, lane in enumerate(lanes_road):
        x_ref = crosses_reference(lane, layout)
        if x_ref is None:
            ignored[idx] = "no visible crossing of Y_ref inside the top view"
            x, _, _ = interpolate_lane_at(_all_visible(lane), layout.y_ref)
            spans = lane.points[0, 1] <= layout.y_ref <= lane.points[-1, 1]
            if spans and abs(x) <= layout.x_half:
                occluded_at_ref.append((idx, lane.kind, x))
            continue
        a = nearest_anchor(x_ref, layout)
        groups.setdefault((a, lane.kind), []).append((x_ref, idx))

    for (a, kind), members in sorted(groups.items()):
        members.sort()
        slots = [C1, C2] if kind == CENTERLINE else [D]
        for rank, (_, idx) in enumerate(members):
            if rank >= len(slots):
                ignored[idx] = f"anchor {a} already holds {len(slots)} {kind}(s)"
                continue
            t = slots[rank]
            assigned[a, t] = True
            lane_slots[idx] = (a, t)
            for j, y in enumerate(layout.y_refs):
                x, z, ok = interpolate_lane_at(lanes_road[idx], y)
                if ok:
                    xo[a, t, j] = x - layout.xs[a]
                    zv[a, t, j] = z
                    valid[a, t, j] = True

    for idx, kind, x in occluded_at_ref:
        a = nearest_anchor(x, layout)
        slots = [C1, C2] if kind == CENTERLINE else [D]
        free = [t for t in slots if not assigned[a, t] and not ignore[a, t]]
        if free:
            ignore[a, free[0]] = True

    return GroundTruthTensor(xo, zv, assigned.astype(float), assigned=assigned, valid=valid,
                             ignore=ignore, lane_slots=lane_slots, ignored_lanes=ignored)


def _all_visible(lane: Lane3D) -> Lane3D:
    return Lane3D(lane.kind, lane.points, np.ones(len(lane.points), dtype=bool), lane.source)


def nms_1d(confidence) -> np.ndarray:
    """Survivor mask (N, T): local maxima along the anchor axis, per slot type.

    Anchor i survives iff it is not below either neighbour; on a tie with its
    left neighbour the left one wins, so the test is ``p[i] > p[i-1]`` and
    ``p[i] >= p[i+1]``.
    """
    p = np.asarray(confidence, dtype=float)
    if p.ndim == 1:
        return nms_1d(p[:, None])[:, 0]
    left = np.full_like(p, -np.inf)
    right = np.full_like(p, -np.inf)
    left[1:] = p[:-1]
    right[:-1] = p[1:]
    return (p > left) & (p >= right)


@dataclass
class DetectedLane:
    kind: str
    confidence: float
    points: np.ndarray  # dense (n, 3) curve
    knots: np.ndarray  # (m, 3) generating points
    anchor: int = -1
    slot: int = -1
    frame: str = "road"

    def transformed(self, transform, frame: str) -> "DetectedLane":
        return replace(self, points=transform.apply(self.points),
                       knots=transform.apply(self.knots), frame=frame)


def spline_curve(knots: np.ndarray, step: float = DECODE_STEP) -> np.ndarray:
    """Natural cubic splines x(y), z(y) through the knots, sampled every ``step``.

    The knot positions themselves are always part of the output.
    """
    ys = knots[:, 1]
    dense = np.arange(ys[0], ys[-1], step)
    dense = np.union1d(dense, ys)
    if len(ys) == 2:
        t = (dense - ys[0]) / (ys[1] - ys[0])
        xs = knots[0, 0] + t * (knots[1, 0] - knots[0, 0])
        zs = knots[0, 2] + t * (knots[1, 2] - knots[0, 2])
    else:
        xs = CubicSpline(ys, knots[:, 0], bc_type="natural")(dense)
        zs = CubicSpline(ys, knots[:, 2], bc_type="natural")(dense)
    # exact knots (spline evaluation at a knot can differ by rounding)
    at = np.searchsorted(dense, ys)
    xs[at], zs[at] = knots[:, 0], knots[:, 2]
    return np.column_stack([xs, dense, zs])


def decode(tensor: AnchorTensor, layout: AnchorLayout, confidence_threshold: float = 0.5,
           apply_nms: bool = True, step: float = DECODE_STEP) -> list[DetectedLane]:
    """Turn an anchor tensor into road-frame curves.

    GT tensors contribute only their valid points; a slot needs at least two
    points to produce a curve.
    """
    if not 0.0 <= confidence_threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    keep = nms_1d(tensor.confidence) if apply_nms else np.ones(tensor.confidence.shape, bool)
    keep &= tensor.confidence >= confidence_threshold
    valid = getattr(tensor, "valid", None)
    out = []
    for a, t in zip(*np.nonzero(keep)):
        m = valid[a, t] if valid is not None else np.ones(layout.k, dtype=bool)
        if m.sum() < 2:
            continue
        knots = np.column_stack([layout.xs[a] + tensor.x_offsets[a, t, m],
                                 layout.ys[m], tensor.z_values[a, t, m]])
        out.append(DetectedLane(SLOT_KINDS[t], float(tensor.confidence[a, t]),
                                spline_curve(knots, step), knots, int(a), int(t)))
    return out


def output_to_camera(lanes_road, pose: CameraPose) -> list[DetectedLane]:
    r2c = pose_to_transform(pose).inverse()
    return [l.transformed(r2c, "camera") for l in lanes_road]


def output_to_road(lanes_camera, pose: CameraPose) -> list[DetectedLane]:
    c2r = pose_to_transform(pose)
    return [l.transformed(c2r, "road") for l in lanes_camera]
