"""End-to-end calibration: align, initialise, extract motions, solve."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import handeye
from .align_init import LOW_CONFIDENCE_RESIDUAL, RigidFit, initial_extrinsic
from .errors import CalibrationError
from .handeye import CalibrationResult
from .interp import SENSOR_A, AlignedPair, GridPolicy, Trajectory, align


@dataclass
class CalibrationSettings:
    grid: GridPolicy = SENSOR_A
    min_angle: float = handeye.DEFAULT_MIN_ANGLE
    congruence_tol: float = handeye.DEFAULT_CONGRUENCE_TOL
    batch_size: int | None = handeye.DEFAULT_BATCH_SIZE
    degeneracy_threshold: float = handeye.DEFAULT_DEGENERACY_THRESHOLD
    low_confidence_residual: float = LOW_CONFIDENCE_RESIDUAL
    gate_angle: float = math.radians(20.0)


@dataclass
class CalibrationRun:
    result: CalibrationResult
    aligned: AlignedPair
    init: RigidFit | None
    rejected_small: int
    rejected_incongruent: int
    rejected_gate: int
    extra: dict = field(default_factory=dict)


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except CalibrationError as exc:
                exc.stage = name
                raise
        return inner
    return wrap


def calibrate(front: Trajectory, rear: Trajectory, settings: CalibrationSettings | None = None) -> CalibrationRun:
    s = settings or CalibrationSettings()
    aligned = _stage("align")(align)(front, rear, s.grid)
    try:
        init = initial_extrinsic(aligned, s.low_confidence_residual)
    except CalibrationError:
        # a poor initial fit only costs the sign/gating hints
        init = None
    motions = _stage("extract_motions")(handeye.extract_motions)(aligned, s.min_angle, s.congruence_tol)
    pairs, gated = list(motions), 0
    if init is not None and not init.low_confidence and s.gate_angle:
        pairs, gated = handeye.gate_pairs(pairs, init, s.gate_angle)
    result = _stage("solve")(handeye.solve)(pairs, s.batch_size, init, s.degeneracy_threshold)
    mism = motions.scalar_mismatch
    extra = {
        "max_scalar_mismatch_real": max((m[0] for m in mism), default=0.0),
        "max_scalar_mismatch_dual": max((m[1] for m in mism), default=0.0),
    }
    return CalibrationRun(result, aligned, init, motions.rejected_small, motions.rejected_incongruent, gated, extra)
