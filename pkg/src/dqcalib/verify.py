"""Extrinsic verification without overlapping fields of view.

The rear sensor sees the roadside the front sensor saw a moment earlier.  A
kinematic time offset pairs the two views, both sets of curb points are moved
into the vehicle base frame through the extrinsic under test, and the rear
points are measured against the front curb polyline.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binomtest

from .dq_core import Pose
from .errors import NoForwardMotion, NoOverlapWindow
from .interp import Trajectory, interpolate_at

DEFAULT_HORIZON = 30.0
DEFAULT_GATE = 1.0
DEFAULT_SEGMENT = 2.0
MIN_SIGN_TEST = 5  # below this many non-tied segments p < 0.05 is unreachable


@dataclass(frozen=True)
class Observation:
    sensor_id: str
    timestamp: float
    label: str
    point: np.ndarray  # sensor frame
    point_index: int = -1


@dataclass(frozen=True)
class OffsetEstimate:
    anchors: np.ndarray
    offsets: np.ndarray
    confidence: np.ndarray  # achieved minimum distance per anchor, meters
    method: str = "kinematic-min-distance"

    def at(self, t: float) -> float:
        """Offset of the nearest anchor."""
        return float(self.offsets[int(np.argmin(np.abs(self.anchors - t)))])


@dataclass(frozen=True)
class SegmentResidual:
    start: float
    offset: float
    matched: int
    rmse: float  # nan when nothing matched


@dataclass(frozen=True)
class FeatureMatchReport:
    rmse: float
    matched_count: int
    unmatched_count: int
    available: int
    segments: tuple[SegmentResidual, ...]
    distances: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class Comparison:
    before: FeatureMatchReport
    after: FeatureMatchReport
    improved_segments: int
    worsened_segments: int
    p_value: float | None
    low_power: bool

    @property
    def rmse_before(self) -> float:
        return self.before.rmse

    @property
    def rmse_after(self) -> float:
        return self.after.rmse


def _mount_positions(base: Trajectory, times, mount: Pose) -> np.ndarray:
    return np.array([interpolate_at(base, float(t)).transform_point(mount.translation) for t in times])


def kinematic_offset(
    base: Trajectory,
    anchors,
    base_to_front: Pose,
    base_to_rear: Pose,
    candidates=None,
    horizon: float = DEFAULT_HORIZON,
    skip_failures: bool = False,
) -> OffsetEstimate:
    """Delay until the rear sensor reaches where the front sensor was.

    For each anchor ``t_i`` the offset is ``t_j - t_i`` where ``t_j`` is the
    candidate in ``(t_i, t_i + horizon]`` at which the distance between the
    rear mount at ``t_j`` and the front mount at ``t_i`` reaches its first
    local minimum (later minima belong to revisits of the same place).
    ``candidates`` defaults to the base trajectory's own timestamps.  With
    ``skip_failures`` anchors without a minimum are dropped and the error is
    raised only when none is left.
    """
    anchors = np.asarray(anchors, dtype=float)
    cand = base.timestamps if candidates is None else np.asarray(candidates, dtype=float)
    cand = cand[(cand >= base.span[0]) & (cand <= base.span[1])]
    rear_pos = _mount_positions(base, cand, base_to_rear)
    front_pos = _mount_positions(base, anchors, base_to_front)
    kept, offsets, conf = [], [], []
    failure = None
    for t, pf in zip(anchors, front_pos):
        idx = np.nonzero((cand > t) & (cand <= t + horizon))[0]
        d = np.linalg.norm(rear_pos[idx] - pf, axis=1)
        k = _first_minimum(d)
        if k is None:
            failure = NoForwardMotion(
                f"anchor t={t:.3f}: rear sensor never approaches the front sensor's position within {horizon} s"
            )
            if not skip_failures:
                raise failure
            continue
        kept.append(t)
        offsets.append(cand[idx[k]] - t)
        conf.append(d[k])
    if not kept:
        raise failure or NoForwardMotion("no anchors given")
    return OffsetEstimate(np.array(kept), np.array(offsets), np.array(conf))


def _first_minimum(d: np.ndarray) -> int | None:
    # interior point that stops a strict descent from the window start
    for k in range(1, len(d) - 1):
        if d[k + 1] > d[k]:
            return k if d[k] < d[0] else None
    return None


def _in_base(obs: list[Observation], base: Trajectory, mount: Pose, anchor: Pose) -> np.ndarray:
    """Observed points expressed in the anchor's base frame."""
    out = np.empty((len(obs), 3))
    for i, o in enumerate(obs):
        world = interpolate_at(base, o.timestamp) @ mount
        out[i] = anchor.transform_point(world.transform_point(o.point))
    return out


def _polyline_project(poly: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance to the polyline, arc-length parameter of the foot point, and
    whether the foot lies inside the polyline rather than past an end."""
    a, b = poly[:-1], poly[1:]
    ab = b - a
    seg_len = np.linalg.norm(ab, axis=1)
    L2 = np.where(seg_len > 0.0, seg_len ** 2, 1.0)
    rel = pts[:, None, :] - a[None, :, :]
    s = np.einsum("pij,ij->pi", rel, ab) / L2
    sc = np.clip(s, 0.0, 1.0)
    foot = a[None] + sc[..., None] * ab[None]
    d = np.linalg.norm(pts[:, None, :] - foot, axis=2)
    k = np.argmin(d, axis=1)
    rows = np.arange(len(pts))
    sk = s[rows, k]
    beyond = ((k == 0) & (sk < 0.0)) | ((k == len(ab) - 1) & (sk > 1.0))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    arc = cum[k] + sc[rows, k] * seg_len[k]
    return d[rows, k], arc, ~beyond


def _path_in_anchor(base: Trajectory, anchor: Pose, t0: float, t1: float) -> np.ndarray:
    ts = base.timestamps
    i0 = max(int(np.searchsorted(ts, t0)) - 1, 0)
    i1 = min(int(np.searchsorted(ts, t1)) + 1, len(ts))
    return np.array([anchor.transform_point(p.translation) for p in base.poses[i0:i1]])


def associate_features(
    front_obs: list[Observation],
    rear_obs: list[Observation],
    offset: OffsetEstimate,
    extrinsic_fr: Pose,
    base: Trajectory,
    base_to_front: Pose,
    gate: float = DEFAULT_GATE,
    segment_length: float = DEFAULT_SEGMENT,
    front_margin: float = 1.0,
    path_margin: float = 5.0,
) -> FeatureMatchReport:
    """Match rear curb points against the front curb polyline, segment by segment.

    Segment ``k`` holds rear observations in ``[s_k, s_k + L)`` shifted by the
    offset at ``s_k``, measured against front observations from the same
    window widened by ``front_margin`` on both sides (so curb points the front
    sensor saw slightly out of order still sit on the polyline).  Both
    are expressed in the base frame at ``s_k``.  Front points are sorted by
    arc length along the curb, taken as the arc length of their foot point
    on the driven path (the curb runs alongside it), and each rear point is
    measured against the piecewise linear interpolation of that sorted
    polyline.  Rear points farther than ``gate`` or projecting past either
    end are left unmatched.
    """
    if not front_obs or not rear_obs:
        raise NoOverlapWindow("both sensors need at least one feature observation")
    base_to_rear = base_to_front @ extrinsic_fr
    ft = np.array([o.timestamp for o in front_obs])
    rt = np.array([o.timestamp for o in rear_obs])
    lo, hi = base.span
    segments, dists = [], []
    unmatched = 0
    start = max(lo, float(ft.min()))
    stop = min(float(ft.max()), hi)
    while start < stop:
        dt = offset.at(start)
        fi = np.nonzero((ft >= start - front_margin) & (ft < start + segment_length + front_margin))[0]
        ri = np.nonzero((rt >= start + dt) & (rt < start + segment_length + dt))[0]
        if len(fi) >= 2 and len(ri):
            anchor = interpolate_at(base, start).inverse()
            fobs = [front_obs[i] for i in fi]
            fp = _in_base(fobs, base, base_to_front, anchor)
            path = _path_in_anchor(base, anchor, start - front_margin - path_margin,
                                   start + segment_length + front_margin + dt + path_margin)
            _, arc, _ = _polyline_project(path, fp)
            poly = fp[np.argsort(arc, kind="stable")]
            rp = _in_base([rear_obs[i] for i in ri], base, base_to_rear, anchor)
            d, _, inside = _polyline_project(poly, rp)
            ok = inside & (d <= gate)
            unmatched += int(np.count_nonzero(~ok))
            seg_d = d[ok]
            dists.append(seg_d)
            rmse = float(math.sqrt(np.mean(seg_d ** 2))) if len(seg_d) else math.nan
            segments.append(SegmentResidual(start, dt, int(len(seg_d)), rmse))
        start = round(start + segment_length, 9)
    all_d = np.concatenate(dists) if dists else np.zeros(0)
    if len(all_d) == 0:
        raise NoOverlapWindow("no rear feature falls inside a front window after applying the time offset")
    return FeatureMatchReport(
        rmse=float(math.sqrt(np.mean(all_d ** 2))),
        matched_count=int(len(all_d)),
        unmatched_count=unmatched,
        available=len(rear_obs),
        segments=tuple(segments),
        distances=all_d,
    )


def sign_test(before: list[float], after: list[float]) -> tuple[int, int, float | None]:
    """One-sided paired sign test that ``after`` is smaller; ties dropped."""
    diff = np.asarray(before) - np.asarray(after)
    diff = diff[np.isfinite(diff)]
    pos = int(np.count_nonzero(diff > 0))
    neg = int(np.count_nonzero(diff < 0))
    n = pos + neg
    if n < 2:
        return pos, neg, None
    return pos, neg, float(binomtest(pos, n, 0.5, alternative="greater").pvalue)


def compare(
    before: Pose,
    after: Pose,
    front_obs: list[Observation],
    rear_obs: list[Observation],
    base: Trajectory,
    base_to_front: Pose,
    offset: OffsetEstimate | None = None,
    gate: float = DEFAULT_GATE,
    segment_length: float = DEFAULT_SEGMENT,
) -> Comparison:
    """Run the association under both extrinsics on the same inputs.

    When no offset is given it is estimated once, from ``before``, and shared
    by both runs so only the extrinsic differs.
    """
    if offset is None:
        anchors = _segment_starts(front_obs, base, segment_length)
        offset = kinematic_offset(base, anchors, base_to_front, base_to_front @ before, skip_failures=True)
    rb = associate_features(front_obs, rear_obs, offset, before, base, base_to_front, gate, segment_length)
    ra = associate_features(front_obs, rear_obs, offset, after, base, base_to_front, gate, segment_length)
    by_start = {s.start: s.rmse for s in ra.segments}
    pairs = [(s.rmse, by_start[s.start]) for s in rb.segments if s.start in by_start]
    pos, neg, p = sign_test([b for b, _ in pairs], [a for _, a in pairs])
    return Comparison(rb, ra, pos, neg, p, low_power=pos + neg < MIN_SIGN_TEST)


def _segment_starts(front_obs, base: Trajectory, segment_length: float) -> np.ndarray:
    ft = np.array([o.timestamp for o in front_obs])
    if len(ft) == 0:
        raise NoOverlapWindow("no front feature observations")
    start = max(base.span[0], float(ft.min()))
    stop = min(float(ft.max()), base.span[1])
    starts = []
    while start < stop:
        starts.append(start)
        start = round(start + segment_length, 9)
    return np.array(starts)
