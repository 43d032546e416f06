"""Line-delimited JSON records for datasets, predictions and run configuration.

Every line is one JSON object with a ``schema`` tag.  Objects are written with
sorted keys and compact separators, and floats use Python's shortest
round-trip repr, so parse -> serialize reproduces a line byte for byte.
Angles are stored in degrees, lengths in metres.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .anchors import AnchorLayout, DetectedLane, GroundTruthTensor, default_layout
from .evaluation import EvalConfig, GtExample, PredExample, gt_example
from .geometry import CameraIntrinsics, CameraPose, TopViewSpec, pose_to_transform
from .scenegen import CENTERLINE, DELIMITER, DEFAULT_RANGES, GenerationRanges, Lane3D, Scene

RECORD_SCHEMA = "lane3d.record/1"
PRED_SCHEMA = "lane3d.pred/1"
CONFIG_SCHEMA = "lane3d.config/1"
FRAME_TOL = 1e-6  # road vs T_c2r(camera) consistency, metres
KINDS = (CENTERLINE, DELIMITER)


class RecordError(ValueError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class DatasetRecord:
    id: int
    seed: int
    attempt: int
    topology_type: int
    intrinsics: CameraIntrinsics
    pitch_deg: float
    h_cam: float
    lanes_camera: list
    lanes_road: list
    gt: GroundTruthTensor | None = None

    @property
    def pose(self) -> CameraPose:
        return CameraPose(math.radians(self.pitch_deg), self.h_cam)

    @classmethod
    def from_scene(cls, scene: Scene) -> "DatasetRecord":
        return cls(scene.seed, scene.seed, scene.attempt, scene.topology.topology_type,
                   scene.intrinsics, scene.placement.pitch_deg, scene.placement.h_cam,
                   list(scene.lanes_camera), list(scene.lanes_road))

    def gt_example(self, frame: str = "camera", layout: AnchorLayout | None = None) -> GtExample:
        lanes = self.lanes_camera if frame == "camera" else self.lanes_road
        return gt_example(self.id, lanes, self.lanes_road, frame, layout or default_layout())

    def to_json(self) -> dict:
        lanes = [{
            "kind": c.kind, "source": c.source,
            "visible": c.visible.tolist(),
            "camera": c.points.tolist(), "road": r.points.tolist(),
        } for c, r in zip(self.lanes_camera, self.lanes_road)]
        return {
            "schema": RECORD_SCHEMA, "id": self.id, "seed": self.seed, "attempt": self.attempt,
            "topology_type": self.topology_type,
            "intrinsics": asdict(self.intrinsics),
            "camera": {"pitch_deg": self.pitch_deg, "h_cam": self.h_cam},
            "lanes": lanes,
            "gt": None if self.gt is None else tensor_to_json(self.gt),
        }

    @classmethod
    def from_json(cls, d: dict) -> "DatasetRecord":
        _check_schema(d, RECORD_SCHEMA)
        try:
            intr = CameraIntrinsics(**d["intrinsics"])
            cam, road = [], []
            for l in d["lanes"]:
                if l["kind"] not in KINDS:
                    raise RecordError(f"unknown lane kind {l['kind']!r}")
                cam.append(Lane3D(l["kind"], l["camera"], l["visible"], l["source"]))
                road.append(Lane3D(l["kind"], l["road"], l["visible"], l["source"]))
            rec = cls(int(d["id"]), int(d["seed"]), int(d["attempt"]), int(d["topology_type"]),
                      intr, d["camera"]["pitch_deg"], d["camera"]["h_cam"], cam, road,
                      None if d["gt"] is None else tensor_from_json(d["gt"]))
            pose = rec.pose
        except (KeyError, TypeError, ValueError) as e:
            raise RecordError(f"malformed record: {e}") from e
        c2r = pose_to_transform(pose)
        for c, r in zip(cam, road):
            if len(c.points) and np.max(np.abs(c2r.apply(c.points) - r.points)) > FRAME_TOL:
                raise RecordError(f"record {rec.id}: road lanes are not T_c2r(camera lanes)")
        return rec


_TENSOR_FIELDS = ("x_offsets", "z_values", "confidence", "assigned", "valid", "ignore")


def tensor_to_json(t: GroundTruthTensor) -> dict:
    d = {k: getattr(t, k).tolist() for k in _TENSOR_FIELDS}
    d["lane_slots"] = [[i, a, s] for i, (a, s) in sorted(t.lane_slots.items())]
    d["ignored_lanes"] = [[i, r] for i, r in sorted(t.ignored_lanes.items())]
    return d


def tensor_from_json(d: dict) -> GroundTruthTensor:
    kw = {k: np.asarray(d[k]) for k in _TENSOR_FIELDS}
    kw["lane_slots"] = {int(i): (int(a), int(s)) for i, a, s in d["lane_slots"]}
    kw["ignored_lanes"] = {int(i): str(r) for i, r in d["ignored_lanes"]}
    return GroundTruthTensor(**kw)


def _check_schema(d: dict, expected: str):
    if not isinstance(d, dict) or "schema" not in d:
        raise RecordError("record has no schema tag")
    if d["schema"] != expected:
        raise RecordError(f"unsupported schema {d['schema']!r} (expected {expected!r})")


def prediction_to_json(example_id: int, frame: str, lanes) -> dict:
    return {"schema": PRED_SCHEMA, "id": example_id, "frame": frame,
            "lanes": [{"kind": l.kind, "confidence": l.confidence, "points": l.points.tolist()}
                      for l in lanes]}


def prediction_from_json(d: dict) -> PredExample:
    _check_schema(d, PRED_SCHEMA)
    try:
        lanes = []
        for l in d["lanes"]:
            if l["kind"] not in KINDS:
                raise RecordError(f"unknown lane kind {l['kind']!r}")
            conf = float(l["confidence"])
            if not 0.0 <= conf <= 1.0:
                raise RecordError(f"confidence {conf} outside [0, 1]")
            pts = np.asarray(l["points"], dtype=float).reshape(-1, 3)
            if len(pts) < 2 or np.any(np.diff(pts[:, 1]) <= 0):
                raise RecordError("prediction points must be >= 2 and strictly increasing in y")
            lanes.append(DetectedLane(l["kind"], conf, pts, pts.copy(), frame=d["frame"]))
        return PredExample(int(d["id"]), str(d["frame"]), lanes)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, RecordError):
            raise
        raise RecordError(f"malformed prediction: {e}") from e


def write_lines(path, objs):
    with open(path, "w", encoding="utf-8") as f:
        for o in objs:
            f.write(dumps(o) + "\n")


def read_lines(path):
    """Parsed JSON objects with their 1-based line numbers; blank lines skipped."""
    out = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    out.append((n, json.loads(line)))
                except json.JSONDecodeError as e:
                    out.append((n, RecordError(f"line {n}: invalid JSON ({e.msg})")))
    return out


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    top_view: TopViewSpec = field(default_factory=TopViewSpec)
    y_refs: tuple = (5.0, 20.0, 40.0, 60.0, 80.0, 100.0)
    y_ref: float = 20.0
    eval: dict = field(default_factory=dict)  # EvalConfig overrides
    ranges: GenerationRanges = DEFAULT_RANGES
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    seeds: tuple | None = None  # inclusive (first, last)
    out: str | None = None

    def layout(self) -> AnchorLayout:
        return default_layout(self.top_view, self.y_refs, self.y_ref)

    def eval_config(self) -> EvalConfig:
        return EvalConfig(layout=self.layout(), **self.eval)

    def to_json(self) -> dict:
        return {
            "schema": CONFIG_SCHEMA,
            "top_view": asdict(self.top_view),
            "anchors": {"y_refs": list(self.y_refs), "y_ref": self.y_ref},
            "eval": {k: list(v) if isinstance(v, tuple) else v for k, v in self.eval.items()},
            "generation": self.ranges.to_dict(),
            "intrinsics": asdict(self.intrinsics),
            "seeds": None if self.seeds is None else f"{self.seeds[0]}..{self.seeds[1]}",
            "out": self.out,
        }


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config: " + "; ".join(self.problems))


_EVAL_KEYS = {f.name for f in fields(EvalConfig)} - {"layout"}


def parse_seed_range(text: str) -> tuple:
    try:
        a, b = (int(v) for v in text.split(".."))
    except ValueError:
        raise ConfigError([f"seeds: expected 'a..b', got {text!r}"]) from None
    if a < 0 or b < a:
        raise ConfigError([f"seeds: empty or negative range {text!r}"])
    return a, b


def config_from_json(d: dict) -> RunConfig:
    """Build and validate a RunConfig; every offending field is reported at once."""
    problems = []
    if d.get("schema", CONFIG_SCHEMA) != CONFIG_SCHEMA:
        raise ConfigError([f"schema: unsupported {d['schema']!r}"])
    unknown = sorted(set(d) - {"schema", "top_view", "anchors", "eval", "generation",
                               "intrinsics", "seeds", "out"})
    problems += [f"{k}: unknown section" for k in unknown]
    cfg = RunConfig()

    def build(name, fn):
        try:
            return fn()
        except (TypeError, ValueError) as e:
            problems.append(f"{name}: {e}")
            return None

    if "top_view" in d:
        cfg.top_view = build("top_view", lambda: TopViewSpec(**d["top_view"])) or cfg.top_view
    if "anchors" in d:
        a = d["anchors"]
        extra = set(a) - {"y_refs", "y_ref"}
        if extra:
            problems.append(f"anchors: unknown fields {sorted(extra)}")
        cfg.y_refs = tuple(a.get("y_refs", cfg.y_refs))
        cfg.y_ref = a.get("y_ref", cfg.y_ref)
    build("anchors", cfg.layout)
    if "eval" in d:
        extra = set(d["eval"]) - _EVAL_KEYS
        if extra:
            problems.append(f"eval: unknown fields {sorted(extra)}")
        else:
            cfg.eval = {k: tuple(v) if isinstance(v, list) else v for k, v in d["eval"].items()}
            build("eval", cfg.eval_config)
    if "generation" in d:
        r = build("generation", lambda: GenerationRanges.from_dict(d["generation"]))
        if r is not None:
            problems += [f"generation.{n}: invalid range {getattr(r, n)!r}" for n in r.validate()]
            cfg.ranges = r
    if "intrinsics" in d:
        cfg.intrinsics = build("intrinsics", lambda: CameraIntrinsics(**d["intrinsics"])) \
            or cfg.intrinsics
    if d.get("seeds") is not None:
        try:
            cfg.seeds = parse_seed_range(d["seeds"])
        except ConfigError as e:
            problems += e.problems
    cfg.out = d.get("out")
    if problems:
        raise ConfigError(problems)
    return cfg
