"""Pose and feature files, flat key=value configuration, JSON reports and the
command-line driver (``simulate``, ``calibrate``, ``evaluate``, ``verify``).

Pose files follow the TUM layout, one pose per line::

    timestamp tx ty tz qx qy qz qw

Feature files hold one observation per line::

    sensor_id timestamp label x y z

Both allow ``#`` comments and blank lines.  Timestamps and coordinates are
written with 9 decimals.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import handeye, metrics, pipeline, synth, verify
from .dq_core import Pose, Quaternion, from_pose
from .errors import CalibrationError, ConfigError, OutputError, ParseError
from .interp import GridPolicy, Trajectory, align
from .verify import Observation

log = logging.getLogger("dqcalib")

SCHEMA_VERSION = 1
QUAT_WARN = 1e-3

EXIT_OK, EXIT_ERROR, EXIT_DEGENERATE = 0, 1, 2


# --------------------------------------------------------------------------
# pose and feature files

def _fmt(x: float) -> str:
    s = f"{x:.9f}"
    return "0.000000000" if s == "-0.000000000" else s


def _fields(path, line_no, text, n):
    parts = text.split()
    if len(parts) != n:
        raise ParseError(path, line_no, f"expected {n} fields, got {len(parts)}")
    return parts


def _floats(path, line_no, parts):
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(path, line_no, str(exc)) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError(path, line_no, "non-finite value")
    return vals


def _lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                text = raw.split("#", 1)[0].strip()
                if text:
                    yield i, text
    except FileNotFoundError:
        raise ParseError(path, 0, "file not found") from None


def _unit(path, line_no, qx, qy, qz, qw) -> Quaternion:
    q = Quaternion(qw, qx, qy, qz)
    n = q.norm()
    if n == 0.0:
        raise ParseError(path, line_no, "zero quaternion")
    if abs(n - 1.0) > QUAT_WARN:
        log.warning("%s:%d: quaternion norm %.6f, normalizing", path, line_no, n)
    # values already unit to file precision are kept verbatim so a re-write reproduces them
    if abs(q.norm_sq() - 1.0) <= 2e-9:
        return q
    return q.normalized()


def read_poses(path, sensor_id: str | None = None) -> Trajectory:
    path = str(path)
    poses, last = [], None
    for line_no, text in _lines(path):
        t, tx, ty, tz, qx, qy, qz, qw = _floats(path, line_no, _fields(path, line_no, text, 8))
        if last is not None and not t > last:
            raise ParseError(path, line_no, f"timestamp {t!r} does not increase (previous {last!r})")
        last = t
        poses.append(Pose(t, _unit(path, line_no, qx, qy, qz, qw), (tx, ty, tz)))
    if not poses:
        raise ParseError(path, 0, "no poses")
    return Trajectory(sensor_id or Path(path).stem, tuple(poses))


def format_poses(traj: Trajectory) -> str:
    out = ["# timestamp tx ty tz qx qy qz qw"]
    for p in traj.poses:
        r = p.rotation
        vals = [p.timestamp, *p.translation, r.x, r.y, r.z, r.w]
        out.append(" ".join(_fmt(v) for v in vals))
    return "\n".join(out) + "\n"


def read_features(path) -> dict[str, list[Observation]]:
    path = str(path)
    obs: dict[str, list[Observation]] = {}
    for line_no, text in _lines(path):
        sid, t, label, x, y, z = _fields(path, line_no, text, 6)
        t, x, y, z = _floats(path, line_no, [t, x, y, z])
        obs.setdefault(sid, []).append(Observation(sid, t, label, np.array([x, y, z])))
    return obs


def format_features(observations) -> str:
    out = ["# sensor_id timestamp label x y z"]
    for o in observations:
        out.append(" ".join([o.sensor_id, _fmt(o.timestamp), o.label, *(_fmt(v) for v in o.point)]))
    return "\n".join(out) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write {path} (directory {path.parent}): {exc.strerror or exc}") from None


# --------------------------------------------------------------------------
# JSON

def _round(x):
    if isinstance(x, bool) or x is None or isinstance(x, (str, int)):
        return x
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return float(f"{x:.12g}") if math.isfinite(x) else None
    if isinstance(x, dict):
        return {str(k): _round(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_round(v) for v in x]
    if isinstance(x, np.integer):
        return int(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(report: dict) -> str:
    body = {"schema_version": SCHEMA_VERSION, **report}
    return json.dumps(_round(body), indent=2, sort_keys=True) + "\n"


def pose_json(p: Pose) -> dict:
    r = p.rotation
    return {
        "translation": list(p.translation),
        "rotation_wxyz": [r.w, r.x, r.y, r.z],
        "dual_quaternion": list(from_pose(p).as_array()),
    }


def pose_from_json(d: dict) -> Pose:
    w, x, y, z = d["rotation_wxyz"]
    return Pose(0.0, Quaternion(w, x, y, z).normalized(), tuple(d["translation"]))


def read_extrinsic(path) -> Pose:
    """Extrinsic from a calibration or ground-truth report (``extrinsic`` key)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return pose_from_json(data["extrinsic"])
    except FileNotFoundError:
        raise ParseError(str(path), 0, "file not found") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(str(path), getattr(exc, "lineno", 0), f"not an extrinsic report: {exc}") from None


# --------------------------------------------------------------------------
# configuration

def _pose_text(p: Pose) -> str:
    r = p.rotation
    return " ".join(repr(float(v)) for v in (*p.translation, r.x, r.y, r.z, r.w))


def _parse_pose(text: str) -> Pose:
    vals = [float(v) for v in text.replace(",", " ").split()]
    if len(vals) != 7:
        raise ValueError("pose needs 7 numbers: tx ty tz qx qy qz qw")
    tx, ty, tz, qx, qy, qz, qw = vals
    return Pose(0.0, Quaternion(qw, qx, qy, qz).normalized(), (tx, ty, tz))


@dataclass
class PipelineConfig:
    """Every knob of the pipeline; angles in radians, lengths in meters."""

    # calibration
    grid: str = "sensor_a"  # sensor_a | sensor_b | uniform:<dt>
    min_angle: float = handeye.DEFAULT_MIN_ANGLE
    batch_size: int | None = handeye.DEFAULT_BATCH_SIZE  # "all" for a single batch
    congruence_tol: float = handeye.DEFAULT_CONGRUENCE_TOL
    degeneracy_threshold: float = handeye.DEFAULT_DEGENERACY_THRESHOLD
    gate_angle: float = math.radians(20.0)
    low_confidence_residual: float = 0.5
    # evaluation
    rpe_delta: float = 1  # int = grid steps, float = seconds
    # verification
    gating_distance: float = verify.DEFAULT_GATE
    segment_length: float = verify.DEFAULT_SEGMENT
    offset_horizon: float = verify.DEFAULT_HORIZON
    base_to_front: Pose = dataclasses.field(default_factory=synth.default_base_to_front)
    # simulation
    seed: int = 0
    trajectory: str = synth.TrajectoryKind.FIGURE8_3D.value
    duration: float = 60.0
    scale: float = 1.0
    smooth: bool = False
    extrinsic: Pose = dataclasses.field(default_factory=synth.default_extrinsic)
    rate_front: float = 10.0
    rate_rear: float = 10.0
    phase_front: float = 0.0
    phase_rear: float = 0.037
    noise_trans_sigma: float = 0.0
    noise_rot_sigma: float = 0.0
    noise_mode: str = "relative"
    feature_sigma: float = 0.0
    curb_offset: float = 4.0

    def settings(self) -> pipeline.CalibrationSettings:
        return pipeline.CalibrationSettings(
            grid=GridPolicy.parse(self.grid),
            min_angle=self.min_angle,
            congruence_tol=self.congruence_tol,
            batch_size=self.batch_size,
            degeneracy_threshold=self.degeneracy_threshold,
            low_confidence_residual=self.low_confidence_residual,
            gate_angle=self.gate_angle,
        )

    def rig(self) -> synth.RigSpec:
        return synth.RigSpec(
            extrinsic_fr=self.extrinsic,
            base_to_front=self.base_to_front,
            sensor_rates=(self.rate_front, self.rate_rear),
            phase_offsets=(self.phase_front, self.phase_rear),
            noise=synth.NoiseSpec(self.noise_trans_sigma, self.noise_rot_sigma, self.noise_mode),
            seed=self.seed,
            feature_sigma=self.feature_sigma,
            curb_offset=self.curb_offset,
        )

    def trajectory_spec(self) -> synth.TrajectorySpec:
        return synth.TrajectorySpec(synth.TrajectoryKind(self.trajectory), self.duration, self.scale, self.smooth)

    # -- text form

    def set(self, key: str, value: str) -> None:
        fields = {f.name: f for f in dataclasses.fields(self)}
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            setattr(self, key, _convert(key, value, getattr(self, key)))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from None

    def dumps(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Pose):
                v = _pose_text(v)
            elif v is None:
                v = "all"
            elif isinstance(v, float):
                v = repr(v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out) + "\n"

    @classmethod
    def load(cls, path) -> PipelineConfig:
        cfg = cls()
        try:
            lines = list(_lines(str(path)))
        except ParseError as exc:
            raise ConfigError(str(exc)) from None
        for line_no, text in lines:
            key, sep, value = text.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            try:
                cfg.set(key.strip(), value.strip())
            except ConfigError as exc:
                raise ConfigError(f"{path}:{line_no}: {exc}") from None
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            GridPolicy.parse(self.grid)
            synth.TrajectoryKind(self.trajectory)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.batch_size is not None and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 or 'all'")
        if self.noise_mode not in ("relative", "absolute"):
            raise ConfigError(f"noise_mode must be relative or absolute, got {self.noise_mode!r}")


def _convert(key, value: str, current):
    if key == "batch_size":
        return None if value.lower() in ("all", "none", "") else int(value)
    if key == "rpe_delta":
        return int(value) if value.lstrip("+-").isdigit() else float(value)
    if isinstance(current, Pose):
        return _parse_pose(value)
    if isinstance(current, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


# --------------------------------------------------------------------------
# commands

def cmd_simulate(cfg: PipelineConfig, out_dir) -> dict:
    out = Path(out_dir)
    sim = synth.generate(cfg.rig(), cfg.trajectory_spec())
    rig = cfg.rig()
    files = {
        "front.txt": format_poses(sim.front),
        "rear.txt": format_poses(sim.rear),
        "features.txt": format_features(sim.features.all_observations()),
        "base.txt": format_poses(sim.base),
    }
    report = {
        "kind": "ground_truth",
        "extrinsic": pose_json(sim.ground_truth),
        "base_to_front": pose_json(rig.base_to_front),
        "base_to_rear": pose_json(rig.base_to_rear),
        "seed": cfg.seed,
        "trajectory": cfg.trajectory,
    }
    files["ground_truth.json"] = dumps(report)
    for name, text in files.items():
        _write(out / name, text)
    return report


def cmd_calibrate(front_file, rear_file, cfg: PipelineConfig, out_dir=None) -> tuple[dict, int]:
    front = read_poses(front_file, "front")
    rear = read_poses(rear_file, "rear")
    run = pipeline.calibrate(front, rear, cfg.settings())
    res = run.result
    pose = res.pose
    report = {
        "kind": "calibration",
        "extrinsic": pose_json(pose),
        "extrinsic_in_base": pose_json(handeye.express_in_base(pose, cfg.base_to_front)),
        "degeneracy_flag": res.degeneracy_flag.value,
        "singular_values": list(res.singular_values),
        "pairs_used": res.pairs_used,
        "mean_residual": res.mean_residual,
        "rejected": {
            "small_rotation": run.rejected_small,
            "incongruent": run.rejected_incongruent,
            "axis_gate": run.rejected_gate,
        },
        "batches": {"total": res.batches, "failed": res.failed_batches},
        "diagnostics": {
            **res.diagnostics,
            **run.extra,
            "aligned_samples": len(run.aligned),
            "init_rms_residual": run.init.rms_residual if run.init else None,
            "init_low_confidence": run.init.low_confidence if run.init else None,
        },
    }
    if out_dir is not None:
        _write(Path(out_dir) / "calibration.json", dumps(report))
    code = EXIT_DEGENERATE if res.degeneracy_flag is handeye.Degeneracy.NEAR_PLANAR else EXIT_OK
    return report, code


def cmd_evaluate(front_file, rear_file, extrinsic_file, cfg: PipelineConfig, out_dir=None,
                 resample: bool = True) -> dict:
    front = read_poses(front_file, "front")
    rear = read_poses(rear_file, "rear")
    X = read_extrinsic(extrinsic_file)
    if resample:
        front, rear = align(front, rear, GridPolicy.parse(cfg.grid)).trajectories()
    mapped = metrics.map_through_extrinsic(rear, X)
    a = metrics.ape(front, mapped)
    r = metrics.rpe(front, mapped, cfg.rpe_delta)
    report = {"kind": "evaluation", "extrinsic": pose_json(X), "ape": a.summary(), "rpe": r.summary()}
    if out_dir is not None:
        out = Path(out_dir)
        _write(out / "ape.csv", a.to_csv())
        _write(out / "rpe.csv", r.to_csv())
        _write(out / "evaluation.json", dumps(report))
    return report


def _report_json(r: verify.FeatureMatchReport) -> dict:
    return {
        "rmse": r.rmse,
        "matched_count": r.matched_count,
        "unmatched_count": r.unmatched_count,
        "available": r.available,
        "segments": [dataclasses.asdict(s) for s in r.segments],
    }


def cmd_verify(features_file, base_file, before_file, after_file, cfg: PipelineConfig, out_dir=None) -> dict:
    obs = read_features(features_file)
    base = read_poses(base_file, "base")
    before, after = read_extrinsic(before_file), read_extrinsic(after_file)
    front_obs, rear_obs = obs.get("front", []), obs.get("rear", [])
    anchors = verify._segment_starts(front_obs, base, cfg.segment_length)
    offset = verify.kinematic_offset(base, anchors, cfg.base_to_front, cfg.base_to_front @ before,
                                     horizon=cfg.offset_horizon, skip_failures=True)
    c = verify.compare(before, after, front_obs, rear_obs, base, cfg.base_to_front, offset,
                       gate=cfg.gating_distance, segment_length=cfg.segment_length)
    report = {
        "kind": "verification",
        "rmse_before": c.rmse_before,
        "rmse_after": c.rmse_after,
        "improved_segments": c.improved_segments,
        "worsened_segments": c.worsened_segments,
        "p_value": c.p_value,
        "low_power": c.low_power,
        "offset": {"anchors": list(offset.anchors), "offsets": list(offset.offsets),
                   "confidence": list(offset.confidence), "method": offset.method},
        "before": _report_json(c.before),
        "after": _report_json(c.after),
    }
    if out_dir is not None:
        _write(Path(out_dir) / "verification.json", dumps(report))
    return report


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dqcalib", description="Dual-quaternion extrinsic calibration of two lidars.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write a synthetic scenario")

    p = sub.add_parser("calibrate", parents=[common], help="solve the front<-rear extrinsic")
    p.add_argument("front")
    p.add_argument("rear")

    p = sub.add_parser("evaluate", parents=[common], help="APE/RPE of rear mapped through an extrinsic")
    p.add_argument("front")
    p.add_argument("rear")
    p.add_argument("extrinsic", help="calibration.json or ground_truth.json")
    p.add_argument("--no-align", action="store_true", help="require both files on the same timestamps")

    p = sub.add_parser("verify", parents=[common], help="curb-feature RMSE before vs after")
    p.add_argument("features")
    p.add_argument("base", help="vehicle base trajectory (pose file)")
    p.add_argument("before")
    p.add_argument("after")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return ap


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        code = EXIT_OK
        if args.command == "simulate":
            report = cmd_simulate(cfg, args.out or ".")
        elif args.command == "calibrate":
            report, code = cmd_calibrate(args.front, args.rear, cfg, args.out)
        elif args.command == "evaluate":
            report = cmd_evaluate(args.front, args.rear, args.extrinsic, cfg, args.out, not args.no_align)
        elif args.command == "verify":
            report = cmd_verify(args.features, args.base, args.before, args.after, cfg, args.out)
        else:
            sys.stdout.write(cfg.dumps())
            return EXIT_OK
    except CalibrationError as exc:
        print(f"error [{exc.stage}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        print(f"error [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(dumps(report))
    return code


if __name__ == "__main__":
    raise SystemExit(main())
