"""Procedural 3D road scenes with ground-truth lane curves.

A scene is built in a fixed order: terrain, topology, top-view road geometry,
3D lift, camera placement.  Every random draw comes from one SplitMix64
stream (see :mod:`lane3d.rng`) in this order:

1. terrain: component count, then per component centre x, centre y,
   magnitude, sd x, sd y, orientation (degrees);
2. topology: type, longitudinal-flip coin, lateral-flip coin;
3. top view: lane count, lane width, shoulder factor, main-road offsets at
   -100, -50, +50, +100 m, then (exit topologies only) secondary start angle
   and secondary lateral offset;
4. lane 3D (exit topologies only): ramp max height, ramp slope factor;
5. camera: host-lane fraction, station, lateral offset, height, pitch (degrees).

World frame: y along the main road, x lateral, z up.  The main road passes
through the origin, where any secondary road leaves it.  Before flips a
secondary road always exits to the right (+x) going forward (+y).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import cached_property

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, RigidTransform, pose_to_transform
from .rng import RandomStream, rng_new, sub_seed

CENTERLINE = "centerline"
DELIMITER = "delimiter"

ROAD_HALF_LENGTH = 100.0
LANE_STEP = 1.0
RAY_STEP = 1.0
SECONDARY_REF_DIST = 60.0
RAMP_BLEND = 5.0
SCENE_MARGIN = 20.0
MAX_ATTEMPTS = 8


class SceneGenerationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# parameter ranges and sampled parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GenerationRanges:
    """Sampling ranges for every generated parameter (inclusive bounds)."""

    n_components: tuple = (1, 7)
    center: tuple = (-150.0, 150.0)
    magnitude: tuple = (-50.0, 50.0)
    sd: tuple = (25.0, 250.0)
    orientation_deg: tuple = (0.0, 90.0)
    topology_type: tuple = (1, 4)
    flip_longitudinal_prob: float = 0.5
    flip_lateral_prob: float = 0.5
    n_lanes: tuple = (2, 4)
    lane_width: tuple = (3.2, 4.0)
    shoulder_factor: tuple = (0.2, 0.6)
    main_offset: tuple = (-10.0, 10.0)
    secondary_start_angle_deg: tuple = (1.0, 5.0)
    secondary_offset: tuple = (0.0, 10.0)
    ramp_max_height: tuple = (2.0, 6.0)
    ramp_slope: tuple = (0.5, 4.5)
    host_offset: tuple = (0.0, 0.4)
    camera_station: tuple = (-60.0, -40.0)
    camera_height: tuple = (1.4, 1.9)
    camera_pitch_deg: tuple = (0.0, 5.0)

    def validate(self) -> list[str]:
        """Names of offending fields (empty when valid)."""
        bad = []
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, tuple):
                if len(val) != 2 or not all(math.isfinite(v) for v in val) or val[0] > val[1]:
                    bad.append(f.name)
            elif not 0.0 <= val <= 1.0:
                bad.append(f.name)
        lo, hi = self.topology_type
        if "topology_type" not in bad and not (1 <= lo and hi <= 4):
            bad.append("topology_type")
        if "n_lanes" not in bad and self.n_lanes[0] < 2:
            bad.append("n_lanes")
        if "n_components" not in bad and self.n_components[0] < 1:
            bad.append("n_components")
        for name in ("lane_width", "sd", "camera_height"):
            if name not in bad and getattr(self, name)[0] <= 0:
                bad.append(name)
        if "camera_pitch_deg" not in bad and not (0 <= self.camera_pitch_deg[0]
                                                  and self.camera_pitch_deg[1] < 90):
            bad.append("camera_pitch_deg")
        if "ramp_slope" not in bad and self.ramp_slope[0] <= 0:
            bad.append("ramp_slope")
        return bad

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationRanges":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown generation fields: {unknown}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


DEFAULT_RANGES = GenerationRanges()


@dataclass(frozen=True)
class GaussianComponent:
    center: tuple
    magnitude: float
    sd: tuple
    orientation: float  # degrees


@dataclass(frozen=True)
class TerrainGMM:
    components: tuple

    @cached_property
    def _arrays(self):
        c = np.array([g.center for g in self.components], dtype=float).reshape(-1, 2)
        m = np.array([g.magnitude for g in self.components], dtype=float)
        sd = np.array([g.sd for g in self.components], dtype=float).reshape(-1, 2)
        th = np.radians([g.orientation for g in self.components])
        return c, m, sd, np.cos(th), np.sin(th)

    def _local(self, x, y):
        c, m, sd, cos, sin = self._arrays
        qx = np.asarray(x, dtype=float)[..., None] - c[:, 0]
        qy = np.asarray(y, dtype=float)[..., None] - c[:, 1]
        # coordinates along the component's principal axes, in sd units
        a = (cos * qx + sin * qy) / sd[:, 0]
        b = (-sin * qx + cos * qy) / sd[:, 1]
        return m * np.exp(-0.5 * (a * a + b * b)), a, b

    def height(self, x, y):
        return self._local(x, y)[0].sum(-1)

    def gradient(self, x, y):
        """(dz/dx, dz/dy) of the mixture."""
        _, _, sd, cos, sin = self._arrays
        val, a, b = self._local(x, y)
        ga, gb = -val * a / sd[:, 0], -val * b / sd[:, 1]
        return (ga * cos - gb * sin).sum(-1), (ga * sin + gb * cos).sum(-1)


def terrain_height(terrain: TerrainGMM, x, y):
    return terrain.height(x, y)


@dataclass(frozen=True)
class TopologySpec:
    topology_type: int
    flip_longitudinal: bool
    flip_lateral: bool


@dataclass(frozen=True)
class RoadPlan:
    n_lanes_main: int
    lane_width: float
    shoulder_width_factor: float
    main_offsets: tuple  # x° at -100, -50, +50, +100
    secondary_start_angle: float | None = None  # degrees
    secondary_curvature_offset: float | None = None
    ramp_max_height: float | None = None
    ramp_slope_factor: float | None = None


@dataclass(frozen=True)
class CameraDraw:
    host_fraction: float
    station: float
    lateral_offset: float
    h_cam: float
    pitch_deg: float


@dataclass(frozen=True)
class SceneParameters:
    terrain: TerrainGMM
    topology: TopologySpec
    plan: RoadPlan
    camera: CameraDraw


def sample_terrain(rng: RandomStream, ranges: GenerationRanges = DEFAULT_RANGES) -> TerrainGMM:
    comps = []
    for _ in range(rng.integer(*ranges.n_components)):
        cx = rng.uniform(*ranges.center)
        cy = rng.uniform(*ranges.center)
        mag = rng.uniform(*ranges.magnitude)
        sdx = rng.uniform(*ranges.sd)
        sdy = rng.uniform(*ranges.sd)
        orient = rng.uniform(*ranges.orientation_deg)
        comps.append(GaussianComponent((cx, cy), mag, (sdx, sdy), orient))
    return TerrainGMM(tuple(comps))


def sample_topology(rng: RandomStream, ranges: GenerationRanges = DEFAULT_RANGES) -> TopologySpec:
    t = rng.integer(*ranges.topology_type)
    lon = rng.coin(ranges.flip_longitudinal_prob)
    lat = rng.coin(ranges.flip_lateral_prob)
    return TopologySpec(t, lon, lat)


def sample_road_plan(rng: RandomStream, topology: TopologySpec,
                     ranges: GenerationRanges = DEFAULT_RANGES) -> RoadPlan:
    n = rng.integer(*ranges.n_lanes)
    width = rng.uniform(*ranges.lane_width)
    shoulder = rng.uniform(*ranges.shoulder_factor)
    offsets = tuple(rng.uniform(*ranges.main_offset) for _ in range(4))
    if topology.topology_type == 1:
        return RoadPlan(n, width, shoulder, offsets)
    angle = rng.uniform(*ranges.secondary_start_angle_deg)
    sec_off = rng.uniform(*ranges.secondary_offset)
    ramp_h = rng.uniform(*ranges.ramp_max_height)
    ramp_s = rng.uniform(*ranges.ramp_slope)
    return RoadPlan(n, width, shoulder, offsets, angle, sec_off, ramp_h, ramp_s)


def sample_camera(rng: RandomStream, ranges: GenerationRanges = DEFAULT_RANGES) -> CameraDraw:
    return CameraDraw(
        host_fraction=rng.random(),
        station=rng.uniform(*ranges.camera_station),
        lateral_offset=rng.uniform(*ranges.host_offset),
        h_cam=rng.uniform(*ranges.camera_height),
        pitch_deg=rng.uniform(*ranges.camera_pitch_deg),
    )


def sample_parameters(rng: RandomStream, ranges: GenerationRanges = DEFAULT_RANGES) -> SceneParameters:
    terrain = sample_terrain(rng, ranges)
    topology = sample_topology(rng, ranges)
    plan = sample_road_plan(rng, topology, ranges)
    return SceneParameters(terrain, topology, plan, sample_camera(rng, ranges))


# --------------------------------------------------------------------------
# top-view road geometry
# --------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


class MainRoad:
    """Main-road centreline x(y): the quartic through the five control points."""

    def __init__(self, plan: RoadPlan):
        o_m100, o_m50, o_50, o_100 = plan.main_offsets
        self.control_y = np.array([-100.0, -50.0, 0.0, 50.0, 100.0])
        self.control_x = np.array([o_m50 + o_m100, o_m50, 0.0, o_50, o_50 + o_100])
        vander = np.vander(self.control_y, 5, increasing=True)
        self.poly = np.polynomial.Polynomial(np.linalg.solve(vander, self.control_x))
        self.dpoly = self.poly.deriv()

    def x(self, y):
        return self.poly(y)

    def normal(self, y):
        """Unit right-hand normal at station y."""
        d = self.dpoly(np.asarray(y, dtype=float))
        n = np.hypot(1.0, d)
        return np.stack([1.0 / n, -d / n], axis=-1)

    def arclength(self, ys):
        """Signed arclength from the origin at each of the sorted stations ``ys``."""
        ys = np.asarray(ys, dtype=float)
        grid = np.union1d(ys, [0.0])
        lo, hi = grid[:-1], grid[1:]
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        t = mid[:, None] + half[:, None] * _GL_NODES
        seg = half * (np.hypot(1.0, self.dpoly(t)) @ _GL_WEIGHTS)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        cum -= cum[np.searchsorted(grid, 0.0)]
        return cum[np.searchsorted(grid, ys)]


def main_road_centerline(plan: RoadPlan) -> MainRoad:
    return MainRoad(plan)


class SecondaryRoad:
    """Exit road expressed as a lateral divergence from the main road.

    Along the main road's arclength ``s`` the exit sits ``d(s) = tan(a) s + c s**2``
    to the right, where ``a`` is the start angle and ``c`` puts an extra
    ``secondary_curvature_offset`` metres of bend 60 m after the exit.
    """

    def __init__(self, plan: RoadPlan, main: MainRoad):
        self.main = main
        self.slope = math.tan(math.radians(plan.secondary_start_angle))
        self.quad = plan.secondary_curvature_offset / SECONDARY_REF_DIST ** 2

    def divergence(self, s):
        s = np.maximum(np.asarray(s, dtype=float), 0.0)
        return self.slope * s + self.quad * s * s

    def point(self, y):
        y = np.asarray(y, dtype=float)
        d = self.divergence(self.main.arclength(np.atleast_1d(y)))
        base = np.stack([self.main.x(y), y], axis=-1)
        return base + self.main.normal(y) * d.reshape(np.shape(y))[..., None]

    def tangent(self, y):
        """Unit tangent of the exit curve at station y >= 0 (analytic)."""
        y = float(y)
        dx = float(self.main.dpoly(y))
        speed = math.hypot(1.0, dx)
        s = float(self.main.arclength([y])[0]) if y > 0 else 0.0
        d = float(self.divergence(s))
        dd = self.slope + 2 * self.quad * s
        # derivative of the unit normal (1, -x')/|.| w.r.t. y
        ddx = float(self.main.dpoly.deriv()(y))
        dn = np.array([-dx * ddx, -ddx * speed ** 2 + dx * dx * ddx]) / speed ** 3
        t = np.array([dx, 1.0]) + dn * d + np.array([1.0, -dx]) / speed * dd * speed
        return t / np.linalg.norm(t)


def secondary_road_centerline(plan: RoadPlan, main: MainRoad | None = None) -> SecondaryRoad:
    if plan.secondary_start_angle is None:
        raise ValueError("topology without a secondary road")
    return SecondaryRoad(plan, main or MainRoad(plan))


@dataclass(frozen=True)
class LanePath:
    """Lateral offset from the main road: ``base`` plus a shift past the junction.

    shift is ``none`` (stays on the main road), ``exit`` (follows the exit
    divergence) or ``split`` (moves right by at most one lane width as the
    exit diverges).
    """

    kind: str
    road: str
    base: float
    shift: str
    source: str


@dataclass
class PlanarLane:
    kind: str
    road: str
    source: str
    points: np.ndarray  # (n, 2) world xy, increasing in y
    ramp_s: np.ndarray  # arclength past the junction on exit roads, else 0
    stations: np.ndarray  # pre-flip main-road stations of each sample

    def copy(self) -> "PlanarLane":
        return PlanarLane(self.kind, self.road, self.source, self.points.copy(),
                          self.ramp_s.copy(), self.stations.copy())


@dataclass
class LaneMap:
    lanes: list
    paths: list
    topology: TopologySpec
    plan: RoadPlan
    main: MainRoad
    secondary: SecondaryRoad | None


def lane_paths(plan: RoadPlan, topology_type: int) -> list[LanePath]:
    n, w = plan.n_lanes_main, plan.lane_width
    o = [(k + 0.5 - n / 2) * w for k in range(n)]
    sh = plan.shoulder_width_factor * w
    if topology_type == 1:
        cl = [LanePath(CENTERLINE, "main", o[k], "none", "main") for k in range(n)]
    elif topology_type == 2:
        cl = [LanePath(CENTERLINE, "main", o[k], "none", "main") for k in range(n)]
        cl.append(LanePath(CENTERLINE, "exit", o[n - 1], "exit", "exit"))
    elif topology_type == 3:
        cl = [LanePath(CENTERLINE, "main", o[k], "none", "main") for k in range(n - 1)]
        cl.append(LanePath(CENTERLINE, "main", o[n - 2], "split", "split"))
        cl.append(LanePath(CENTERLINE, "exit", o[n - 1], "exit", "exit"))
    elif topology_type == 4:
        cl = [LanePath(CENTERLINE, "main", o[k], "none", "main") for k in range(n - 1)]
        cl.append(LanePath(CENTERLINE, "exit", o[n - 2], "exit", "exit"))
        cl.append(LanePath(CENTERLINE, "exit", o[n - 1], "exit", "exit"))
    else:
        raise ValueError(f"unknown topology type {topology_type}")

    seen = {}
    for p in cl:
        edges = [(p.base + w / 2, "right")]
        if p.shift != "split":
            # a split lane's left edge is the continuing lane's right edge
            edges.insert(0, (p.base - w / 2, "left"))
        for b, _ in edges:
            key = (round(b, 9), p.shift)
            seen.setdefault(key, LanePath(DELIMITER, p.road, b, p.shift, "edge"))
    rightmost = max(cl, key=lambda p: (p.base, p.shift == "exit"))
    seen[("L", "none")] = LanePath(DELIMITER, "main", o[0] - w / 2 - sh, "none", "shoulder")
    seen[("R", rightmost.shift)] = LanePath(DELIMITER, rightmost.road,
                                            rightmost.base + w / 2 + sh, rightmost.shift, "shoulder")
    dl = sorted(seen.values(), key=lambda p: (p.base, p.shift))
    return cl + dl


def _path_offsets(path: LanePath, s, plan: RoadPlan, secondary: SecondaryRoad | None):
    s = np.asarray(s, dtype=float)
    if path.shift == "none":
        return np.full(s.shape, path.base)
    d = secondary.divergence(s)
    if path.shift == "split":
        d = np.minimum(d, plan.lane_width)
    return path.base + d


def _mirror(lane: PlanarLane, topology: TopologySpec) -> PlanarLane:
    out = lane.copy()
    if topology.flip_longitudinal:
        out.points[:, 0] *= -1
    if topology.flip_lateral:
        out.points[:, 1] *= -1
        out.points = out.points[::-1].copy()
        out.ramp_s = out.ramp_s[::-1].copy()
        out.stations = out.stations[::-1].copy()
    return out


def flip_lane_map(lanes, topology: TopologySpec):
    return [_mirror(l, topology) for l in lanes]


def build_lane_map(plan: RoadPlan, topology: TopologySpec, main: MainRoad | None = None,
                   secondary: SecondaryRoad | None = None, *, apply_flips: bool = True) -> LaneMap:
    """Sample every centreline and delimiter at 1 m main-road stations."""
    main = main or MainRoad(plan)
    if topology.topology_type != 1 and secondary is None:
        secondary = SecondaryRoad(plan, main)
    ys = np.arange(-ROAD_HALF_LENGTH, ROAD_HALF_LENGTH + LANE_STEP / 2, LANE_STEP)
    s = main.arclength(ys)
    centre = np.stack([main.x(ys), ys], axis=-1)
    normal = main.normal(ys)

    paths = lane_paths(plan, topology.topology_type)
    lanes = []
    for p in paths:
        pts = centre + normal * _path_offsets(p, s, plan, secondary)[:, None]
        ramp_s = np.zeros(len(ys))
        if p.shift == "exit":
            past = ys > 0
            seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg)])
            ramp_s[past] = cum[past] - cum[ys == 0][0]
        lanes.append(PlanarLane(p.kind, p.road, p.source, pts, ramp_s, ys.copy()))
    if apply_flips:
        lanes = flip_lane_map(lanes, topology)
    return LaneMap(lanes, paths, topology, plan, main, secondary)


# --------------------------------------------------------------------------
# 3D
# --------------------------------------------------------------------------

@dataclass
class Lane3D:
    kind: str
    points: np.ndarray  # (n, 3)
    visible: np.ndarray  # (n,) bool
    source: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if len(self.visible) != len(self.points):
            raise ValueError("visibility flags must match points")


def ramp_profile(s, max_height: float, slope_factor: float):
    """Ramp height at arclength ``s`` past the junction.

    Linear at ``1/slope_factor`` up to ``max_height`` (reached after
    ``max_height * slope_factor`` metres), faded in over the first 5 m.
    """
    s = np.maximum(np.asarray(s, dtype=float), 0.0)
    t = np.minimum(s / RAMP_BLEND, 1.0)
    return np.minimum(s / slope_factor, max_height) * t * t * (3 - 2 * t)


def lift_to_3d(lanes_2d, terrain: TerrainGMM, plan: RoadPlan, topology: TopologySpec):
    """World-frame 3D lanes: terrain elevation plus the exit ramp."""
    out = []
    for lane in lanes_2d:
        z = terrain.height(lane.points[:, 0], lane.points[:, 1])
        if plan.ramp_max_height is not None and lane.ramp_s.any():
            z = z + ramp_profile(lane.ramp_s, plan.ramp_max_height, plan.ramp_slope_factor)
        pts = np.column_stack([lane.points, z])
        out.append(Lane3D(lane.kind, pts, np.ones(len(pts), dtype=bool), lane.source))
    return out


@dataclass(frozen=True)
class CameraPlacement:
    host_lane: int
    host_path: int
    n_host_candidates: int
    lateral_offset: float
    station: float
    ground_point: tuple  # world xyz below the camera
    heading: tuple  # unit xy viewing direction in world
    normal: tuple  # road-plane normal at the ground point
    h_cam: float
    pitch_deg: float

    @property
    def pose(self) -> CameraPose:
        return CameraPose(math.radians(self.pitch_deg), self.h_cam)

    @property
    def yaw(self) -> float:
        """Heading angle from +y towards +x, radians."""
        return math.atan2(self.heading[0], self.heading[1])

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.ground_point) + self.h_cam * np.asarray(self.normal)

    def world_to_road(self) -> RigidTransform:
        n = np.asarray(self.normal, dtype=float)
        h = np.array([self.heading[0], self.heading[1], 0.0])
        y_ax = h - (h @ n) * n
        y_ax /= np.linalg.norm(y_ax)
        x_ax = np.cross(y_ax, n)
        rot = np.vstack([x_ax, y_ax, n])
        return RigidTransform(rot, -rot @ np.asarray(self.ground_point, dtype=float))


def _host_candidates(lane_map: LaneMap, y_orig: float):
    """Distinct main-road centreline offsets at a pre-flip station, left to right."""
    s = float(lane_map.main.arclength([y_orig])[0])
    offs = []
    for p in lane_map.paths:
        if p.kind != CENTERLINE or (s > 0 and p.shift == "exit"):
            continue
        o = float(_path_offsets(p, [s], lane_map.plan, lane_map.secondary)[0])
        if all(abs(o - q) > 1e-6 for q, _ in offs):
            offs.append((o, p))
    return sorted(offs, key=lambda t: t[0])


def place_camera(draw: CameraDraw, lane_map: LaneMap, terrain: TerrainGMM) -> CameraPlacement:
    topo = lane_map.topology
    sx = -1.0 if topo.flip_longitudinal else 1.0
    sy = -1.0 if topo.flip_lateral else 1.0
    y_orig = sy * draw.station
    cands = _host_candidates(lane_map, y_orig)
    host = min(int(draw.host_fraction * len(cands)), len(cands) - 1)
    offset, host_path = cands[host]
    main = lane_map.main

    def xy(y, extra=0.0):
        return np.array([main.x(y), y]) + main.normal(y) * (offset + extra)

    g = xy(y_orig, draw.lateral_offset) * [sx, sy]
    eps = 1e-3
    tan = (xy(y_orig + eps) - xy(y_orig - eps)) * [sx, sy]
    if tan[1] < 0:
        tan = -tan
    tan /= np.linalg.norm(tan)
    gz = float(terrain.height(g[0], g[1]))
    dzx, dzy = terrain.gradient(g[0], g[1])
    n = np.array([-float(dzx), -float(dzy), 1.0])
    n /= np.linalg.norm(n)
    return CameraPlacement(host, lane_map.paths.index(host_path), len(cands), draw.lateral_offset, draw.station,
                           (float(g[0]), float(g[1]), gz), (float(tan[0]), float(tan[1])),
                           tuple(float(v) for v in n), draw.h_cam, draw.pitch_deg)


def compute_visibility(points_world, camera_position, terrain: TerrainGMM) -> np.ndarray:
    """Terrain occlusion test by marching the camera-to-point segment every 1 m."""
    pts = np.asarray(points_world, dtype=float).reshape(-1, 3)
    cam = np.asarray(camera_position, dtype=float)
    if len(pts) == 0:
        return np.zeros(0, dtype=bool)
    dist = np.linalg.norm(pts - cam, axis=1)
    n_in = np.maximum(np.ceil(dist / RAY_STEP).astype(int) - 1, 0)
    # samples at 1, 2, ... m strictly before the endpoint
    n_in[(n_in > 0) & (n_in * RAY_STEP >= dist)] -= 1
    owner = np.repeat(np.arange(len(pts)), n_in)
    if owner.size == 0:
        return np.ones(len(pts), dtype=bool)
    offs = np.arange(owner.size) - np.repeat(np.cumsum(n_in) - n_in, n_in)
    t = (offs + 1) * RAY_STEP / dist[owner]
    samples = cam + t[:, None] * (pts[owner] - cam)
    above = samples[:, 2] > terrain.height(samples[:, 0], samples[:, 1])
    blocked = np.bincount(owner[~above], minlength=len(pts))
    return blocked == 0


# --------------------------------------------------------------------------
# scene
# --------------------------------------------------------------------------

@dataclass
class Scene:
    seed: int
    attempt: int
    params: SceneParameters
    intrinsics: CameraIntrinsics
    placement: CameraPlacement
    lanes_world: list
    lanes_camera: list
    lanes_road: list
    bounds: tuple  # (x_min, x_max, y_min, y_max) world

    @property
    def terrain(self) -> TerrainGMM:
        return self.params.terrain

    @property
    def topology(self) -> TopologySpec:
        return self.params.topology

    @property
    def plan(self) -> RoadPlan:
        return self.params.plan

    @property
    def pose(self) -> CameraPose:
        return self.placement.pose


def _forward_run(y_road, y_cam):
    """Indices of the first run of points ahead of the camera increasing in both frames."""
    ahead = np.flatnonzero(y_road >= 0)
    if ahead.size == 0:
        return np.zeros(0, dtype=int)
    start = ahead[0]
    end = start + 1
    while (end < len(y_road) and y_road[end] > y_road[end - 1]
           and y_cam[end] > y_cam[end - 1]):
        end += 1
    return np.arange(start, end)


def _build_scene(seed: int, attempt: int, params: SceneParameters,
                 intrinsics: CameraIntrinsics) -> Scene | None:
    lane_map = build_lane_map(params.plan, params.topology)
    world = lift_to_3d(lane_map.lanes, params.terrain, params.plan, params.topology)
    placement = place_camera(params.camera, lane_map, params.terrain)
    w2r = placement.world_to_road()
    r2c = pose_to_transform(placement.pose).inverse()
    cam_center = placement.center

    lanes_world, lanes_road, lanes_cam = [], [], []
    host_ok = False
    for i, lane in enumerate(world):
        road = w2r.apply(lane.points)
        cam = r2c.apply(road)
        idx = _forward_run(road[:, 1], cam[:, 1])
        if idx.size < 2:
            continue
        vis = compute_visibility(lane.points[idx], cam_center, params.terrain)
        lanes_world.append(Lane3D(lane.kind, lane.points[idx], vis, lane.source))
        lanes_road.append(Lane3D(lane.kind, road[idx], vis, lane.source))
        lanes_cam.append(Lane3D(lane.kind, cam[idx], vis, lane.source))
        host_ok |= i == placement.host_path
    if not host_ok:
        return None

    allpts = np.vstack([l.points for l in lane_map.lanes])
    bounds = (float(allpts[:, 0].min() - SCENE_MARGIN), float(allpts[:, 0].max() + SCENE_MARGIN),
              float(allpts[:, 1].min() - SCENE_MARGIN), float(allpts[:, 1].max() + SCENE_MARGIN))
    return Scene(seed, attempt, params, intrinsics, placement,
                 lanes_world, lanes_cam, lanes_road, bounds)


def generate_scene(seed: int, ranges: GenerationRanges = DEFAULT_RANGES,
                   intrinsics: CameraIntrinsics | None = None) -> Scene:
    """Deterministic scene for ``seed``; retries degenerate draws on derived sub-seeds."""
    intrinsics = intrinsics or CameraIntrinsics()
    for attempt in range(MAX_ATTEMPTS):
        params = sample_parameters(rng_new(sub_seed(seed, attempt)), ranges)
        scene = _build_scene(seed, attempt, params, intrinsics)
        if scene is not None:
            return scene
    raise SceneGenerationError(f"seed {seed}: no usable camera placement after {MAX_ATTEMPTS} attempts")


def with_ranges(**overrides) -> GenerationRanges:
    return replace(DEFAULT_RANGES, **overrides)
