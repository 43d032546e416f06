"""``lane3d`` command line: generate, encode, eval, baseline-flat, gradcheck.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .anchors import associate_gt
from .evaluation import evaluate, flat_ground_baseline
from .gradcheck import run_gradcheck
from .io import (ConfigError, DatasetRecord, RecordError, RunConfig, config_from_json, dumps,
                 parse_seed_range, prediction_from_json, prediction_to_json, read_lines,
                 write_lines)
from .scenegen import CENTERLINE, DELIMITER, SceneGenerationError, generate_scene

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CHECK = 0, 1, 2, 3
REPORT_SCHEMA = "lane3d.report/1"

log = logging.getLogger("lane3d")


class ValidationError(Exception):
    pass


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"{path}: invalid JSON ({e.msg})"]) from None
    return config_from_json(d)


def _load_records(path, strict: bool = True):
    """Records of a dataset file; malformed lines raise or are skipped with a warning."""
    records, bad = [], 0
    for n, obj in read_lines(path):
        try:
            if isinstance(obj, Exception):
                raise obj
            records.append(DatasetRecord.from_json(obj))
        except RecordError as e:
            if strict:
                raise ValidationError(f"{path}:{n}: {e}") from None
            log.warning("%s:%d: skipped (%s)", path, n, e)
            bad += 1
    return records, bad


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    seeds = parse_seed_range(args.seeds) if args.seeds else cfg.seeds
    out = args.out or cfg.out
    if seeds is None or out is None:
        raise ConfigError(["seeds and out must be given on the command line or in the config"])
    lines = []
    for seed in range(seeds[0], seeds[1] + 1):
        try:
            scene = generate_scene(seed, cfg.ranges, cfg.intrinsics)
        except SceneGenerationError as e:
            raise ValidationError(str(e)) from None
        lines.append(DatasetRecord.from_scene(scene).to_json())
    write_lines(out, lines)
    print(f"generated {len(lines)} records -> {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _load_config(args.config)
    layout = cfg.layout()
    records, bad = _load_records(args.inp, strict=False)
    n_assigned = n_ignored = 0
    for rec in records:
        rec.gt = associate_gt(rec.lanes_road, layout)
        n_assigned += len(rec.gt.lane_slots)
        n_ignored += len(rec.gt.ignored_lanes)
    write_lines(args.out, [r.to_json() for r in records])
    print(f"encoded {len(records)} records -> {args.out}: {n_assigned} lanes assigned, "
          f"{n_ignored} ignored, {bad} malformed skipped")
    return EXIT_VALIDATION if bad else EXIT_OK


def _load_predictions(path):
    preds = []
    for n, obj in read_lines(path):
        if isinstance(obj, Exception):
            raise ValidationError(f"{path}:{n}: {obj}")
        try:
            preds.append(prediction_from_json(obj))
        except RecordError as e:
            raise ValidationError(f"{path}:{n}: {e}") from None
    return preds


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    ecfg = cfg.eval_config()
    records, _ = _load_records(args.gt)
    preds = _load_predictions(args.pred)
    if preds:
        frames = {p.frame for p in preds}
        if len(frames) != 1 or not frames <= {"camera", "road"}:
            raise ValidationError(f"predictions must share one frame (camera or road), got {sorted(frames)}")
        frame = frames.pop()
        gt_ids = {r.id for r in records}
        pred_ids = [p.id for p in preds]
        if len(set(pred_ids)) != len(pred_ids):
            raise ValidationError("duplicate prediction ids")
        missing = sorted(gt_ids - set(pred_ids))
        extra = sorted(set(pred_ids) - gt_ids)
        if missing or extra:
            raise ValidationError(f"id mismatch: missing predictions for {missing}, "
                                  f"unknown prediction ids {extra}")
    else:
        frame = args.frame
    gts = [r.gt_example(frame, ecfg.layout) for r in records]
    report = {"schema": REPORT_SCHEMA, "frame": frame, "n_examples": len(records)}
    for kind in (CENTERLINE, DELIMITER):
        rep = evaluate(gts, preds, ecfg, kind)
        report[kind] = rep.to_dict()
        print(f"{kind}: AP {rep.ap:.4f}  near 1s/2s {_fmt(rep.near_1sigma)}/{_fmt(rep.near_2sigma)}  "
              f"far 1s/2s {_fmt(rep.far_1sigma)}/{_fmt(rep.far_2sigma)}  "
              f"({rep.n_gt} gt, {rep.n_ignored_gt} ignored, {rep.n_det} det)")
    with open(args.report, "w", encoding="utf-8") as f:
        f.write(dumps(report) + "\n")
    return EXIT_OK


def _fmt(v):
    return "n/a" if v is None else f"{v:.3f}"


def cmd_baseline_flat(args) -> int:
    records, _ = _load_records(args.inp)
    out = []
    for rec in records:
        lanes = flat_ground_baseline(rec.lanes_camera, rec.pose, rec.intrinsics)
        out.append(prediction_to_json(rec.id, "camera", lanes))
    write_lines(args.out, out)
    print(f"flat-ground predictions for {len(out)} records -> {args.out}")
    return EXIT_OK


def cmd_gradcheck(args, **overrides) -> int:
    report = run_gradcheck(args.seed, **overrides)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} in {report.elapsed:.2f} s")
    return EXIT_OK if report.passed else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lane3d", description="Synthetic 3D lane data, encoding and evaluation.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate one record per seed")
    g.add_argument("--config")
    g.add_argument("--seeds", help="inclusive seed range a..b")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("encode", help="attach ground-truth anchor tensors")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_encode)

    v = sub.add_parser("eval", help="evaluate predictions against a dataset")
    v.add_argument("--gt", required=True)
    v.add_argument("--pred", required=True)
    v.add_argument("--report", required=True)
    v.add_argument("--config")
    v.add_argument("--frame", choices=("camera", "road"), default="camera",
                   help="evaluation frame when the prediction file is empty")
    v.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline-flat", help="flat-ground back-projection of the GT lanes")
    b.add_argument("--in", dest="inp", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline_flat)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, RecordError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
