"""PDR trace replay: trace IO, downsampling, the synthetic bimodal scenario,
and the map-matching filter driver with trajectory reconstruction."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filter import Models, ParticleFilter, ParticleSet, wrap_angle
from .models import FloorplanMeasurementModel, PdrMotionConfig, PdrMotionModel
from .sim import LineMap, grid_init
from .strategies import Strategy

TRACE_FIELDS = ("step_len", "dtheta", "gt_x", "gt_y", "gt_theta")


@dataclass
class PdrTrace:
    """Ordered (step length, heading delta) pairs, optionally with a ground
    truth pose per step (the pose after executing that step)."""

    steps: np.ndarray                # (N, 2)
    gt: np.ndarray | None = None     # (N, 3)

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64).reshape(-1, 2)
        if self.gt is not None:
            self.gt = np.asarray(self.gt, dtype=np.float64).reshape(-1, 3)
            if self.gt.shape[0] != self.steps.shape[0]:
                raise ValueError("ground truth length must match step count")
        if np.any(self.steps[:, 0] < 0):
            raise ValueError("step lengths must be nonnegative")

    def __len__(self) -> int:
        return self.steps.shape[0]

    @property
    def total_length(self) -> float:
        return float(self.steps[:, 0].sum())


def load_trace(path) -> PdrTrace:
    """Parse a trace CSV (header step_len,dtheta[,gt_x,gt_y,gt_theta])."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return PdrTrace(np.empty((0, 2)))
        header = [h.strip() for h in header]
        if tuple(header) not in (TRACE_FIELDS[:2], TRACE_FIELDS):
            raise ValueError(f"unexpected trace header {header}")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise ValueError(f"malformed trace row at line {lineno}: {row}")
            rows.append([float(v) for v in row])
    if not rows:
        return PdrTrace(np.empty((0, 2)), np.empty((0, 3)) if width == 5 else None)
    data = np.array(rows)
    gt = data[:, 2:5] if width == 5 else None
    return PdrTrace(data[:, :2], gt)


def save_trace(trace: PdrTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if trace.gt is not None:
            writer.writerow(TRACE_FIELDS)
            for (l, d), (x, y, t) in zip(trace.steps, trace.gt):
                writer.writerow([repr(l), repr(d), repr(x), repr(y), repr(t)])
        else:
            writer.writerow(TRACE_FIELDS[:2])
            for l, d in trace.steps:
                writer.writerow([repr(l), repr(d)])


# -- polyline helpers ---------------------------------------------------------

def trace_to_polyline(trace: PdrTrace, start=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Integrate steps into positions (N+1, 2), starting from the given pose."""
    headings = start[2] + np.cumsum(trace.steps[:, 1])
    dx = trace.steps[:, 0] * np.cos(headings)
    dy = trace.steps[:, 0] * np.sin(headings)
    pts = np.empty((len(trace) + 1, 2))
    pts[0] = start[:2]
    pts[1:, 0] = start[0] + np.cumsum(dx)
    pts[1:, 1] = start[1] + np.cumsum(dy)
    return pts


def polyline_to_trace(points: np.ndarray, initial_heading: float = 0.0) -> PdrTrace:
    """Steps (length, heading delta) reproducing the polyline from a start
    pose at points[0] with the given heading."""
    diff = np.diff(points, axis=0)
    lengths = np.hypot(diff[:, 0], diff[:, 1])
    headings = np.arctan2(diff[:, 1], diff[:, 0])
    prev = np.concatenate([[initial_heading], headings[:-1]])
    dthetas = wrap_angle(headings - prev)
    return PdrTrace(np.column_stack([lengths, dthetas]))


def resample_polyline(points: np.ndarray, target: float) -> np.ndarray:
    """Points spaced evenly along the polyline at ~target intervals; the
    spacing is total/round(total/target) so the path length is preserved."""
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0:
        return points[:1].copy()
    n = max(1, int(round(total / target)))
    stations = np.linspace(0.0, total, n + 1)
    x = np.interp(stations, s, points[:, 0])
    y = np.interp(stations, s, points[:, 1])
    return np.column_stack([x, y])


def smooth_downsample(trace: PdrTrace, target: float = 0.2,
                      smooth_window: int = 5) -> PdrTrace:
    """Smooth the integrated path with a small boxcar and rebuild steps of
    ~target length (arc-length resampling; endpoints preserved)."""
    if len(trace) == 0:
        return PdrTrace(np.empty((0, 2)))
    pts = trace_to_polyline(trace)
    if smooth_window > 1 and pts.shape[0] > smooth_window:
        kernel = np.ones(smooth_window) / smooth_window
        inner_x = np.convolve(pts[:, 0], kernel, mode="valid")
        inner_y = np.convolve(pts[:, 1], kernel, mode="valid")
        smoothed = np.column_stack([inner_x, inner_y])
        pts = np.vstack([pts[:1], smoothed, pts[-1:]])
    new_pts = resample_polyline(pts, target)
    return polyline_to_trace(new_pts)


# -- synthetic bimodal scenario ----------------------------------------------

LOOP_CENTER = (45.0, 15.0)


def rotate_180(poses: np.ndarray, center=LOOP_CENTER) -> np.ndarray:
    """Images of poses under the half-turn about the loop center."""
    poses = np.atleast_2d(np.asarray(poses, dtype=np.float64))
    out = np.empty_like(poses)
    out[:, 0] = 2.0 * center[0] - poses[:, 0]
    out[:, 1] = 2.0 * center[1] - poses[:, 1]
    out[:, 2] = wrap_angle(poses[:, 2] + np.pi)
    return out


def _bimodal_segments():
    loop = [
        # outer rectangle, bottom wall split at the spur mouth
        (5, 5, 65, 5), (67, 5, 85, 5),
        (85, 5, 85, 25), (85, 25, 5, 25), (5, 25, 5, 5),
        # inner rectangle
        (8, 8, 82, 8), (82, 8, 82, 22), (82, 22, 8, 22), (8, 22, 8, 8),
    ]
    spur = [
        (65, 5, 65, 1), (65, 1, 80, 1),
        (67, 5, 67, 3), (67, 3, 80, 3), (80, 1, 80, 3),
    ]
    return loop, spur


def synth_bimodal_map_and_trace(rng, n_loops: int = 2, step: float = 0.2):
    """A two-fold symmetric corridor loop with a symmetry-breaking dead-end
    spur, plus a trace that circles the loop n_loops times and then walks
    into the spur.

    Returns (line_map, trace, ground_truth, mode_poses): ground_truth holds
    the pose after every step plus the start pose (T+1 rows); mode_poses are
    the two symmetric start poses (true first).
    """
    loop, spur = _bimodal_segments()
    line_map = LineMap(np.array(loop + spur, dtype=np.float64))
    line_map.spur_segments = np.array(spur, dtype=np.float64)
    line_map.loop_segments = np.array(loop, dtype=np.float64)

    x_start = 45.0 + float(rng.uniform(-8.0, 8.0))
    corners = [(83.5, 6.5), (83.5, 23.5), (6.5, 23.5), (6.5, 6.5)]
    waypoints = [(x_start, 6.5)]
    for _ in range(n_loops):
        waypoints.extend(corners)
        waypoints.append((x_start, 6.5))
    waypoints.extend([(66.0, 6.5), (66.0, 2.0), (78.5, 2.0)])
    pts = resample_polyline(np.array(waypoints, dtype=np.float64), step)

    diff = np.diff(pts, axis=0)
    headings = np.arctan2(diff[:, 1], diff[:, 0])
    start = np.array([pts[0, 0], pts[0, 1], headings[0]])
    trace = polyline_to_trace(pts, initial_heading=start[2])
    gt = np.column_stack([pts[1:], headings])
    ground_truth = np.vstack([start, gt])
    trace.gt = gt
    modes = np.vstack([start, rotate_180(start)])
    return line_map, trace, ground_truth, modes


# -- replay driver -------------------------------------------------------------

@dataclass
class ReplayConfig:
    particles: int = 5000
    init: str = "grid"            # grid | tracking
    tracking_spread: float = 1.0
    grid_clearance: float = 0.3
    success_rmse: float = 15.0
    minor_inaccuracy_threshold: float = 2.0
    motion: PdrMotionConfig = field(default_factory=PdrMotionConfig)


@dataclass
class ReplayResult:
    rmse: float
    success: bool
    minor_inaccuracy: bool
    collapse_count: int
    estimate: np.ndarray  # (T+1, 2) mean trajectory
    records: list


def tracking_init(modes: np.ndarray, n: int, spread: float, rng,
                  heading_spread: float = 0.0) -> np.ndarray:
    """n poses split evenly across the modes, Gaussian-perturbed by spread."""
    modes = np.atleast_2d(np.asarray(modes, dtype=np.float64))
    m = modes.shape[0]
    counts = [n // m + (1 if i < n % m else 0) for i in range(m)]
    parts = []
    for mode, c in zip(modes, counts):
        block = np.tile(mode, (c, 1))
        if spread > 0:
            block[:, :2] += rng.normal(0.0, spread, size=(c, 2))
        if heading_spread > 0:
            block[:, 2] = wrap_angle(block[:, 2] + rng.normal(0.0, heading_spread, c))
        parts.append(block)
    return np.concatenate(parts, axis=0)


class HistoryTable:
    """Naive O(T P) per-particle pose log; the reference for path
    reconstruction and the fallback when no ancestry tree is kept."""

    def __init__(self, states: np.ndarray):
        self.log = [states.copy()]
        self.sources: list[np.ndarray | None] = [None]

    def append(self, states: np.ndarray, sources: np.ndarray | None) -> None:
        self.log.append(states.copy())
        self.sources.append(None if sources is None else np.asarray(sources))

    def paths(self) -> np.ndarray:
        """Lineage histories of the final particles, shape (P, T+1, 3)."""
        p = self.log[-1].shape[0]
        lineage = np.arange(p)
        out = np.empty((len(self.log), p, 3))
        for t in range(len(self.log) - 1, -1, -1):
            out[t] = self.log[t][lineage]
            src = self.sources[t]
            if src is not None:
                lineage = src[lineage]
        return out.transpose(1, 0, 2)


def minor_inaccuracy(rmse: float, success: bool, threshold: float = 2.0) -> bool:
    """Successful but visibly off along sub-paths."""
    return bool(success and rmse > threshold)


def replay_run(line_map: LineMap, trace: PdrTrace, config: ReplayConfig,
               strategy: Strategy, rng, modes: np.ndarray | None = None) -> ReplayResult:
    """Run one map-matching filter over the trace and score it against the
    trace's ground truth (success iff RMSE < config.success_rmse)."""
    if config.init == "tracking":
        if modes is None:
            raise ValueError("tracking init requires mode poses")
        states = tracking_init(modes, config.particles, config.tracking_spread, rng)
    else:
        seed_xy = None if trace.gt is None else tuple(trace.gt[0, :2])
        states = grid_init(line_map, config.particles, rng,
                           radius=config.grid_clearance, seed_point=seed_xy)
    pset = ParticleSet(states)
    models = Models(motion=PdrMotionModel(config.motion),
                    measurement=FloorplanMeasurementModel(line_map))
    pf = ParticleFilter(pset, strategy, models, rng,
                        store_paths=strategy.maintains_tree)
    history = None if strategy.maintains_tree else HistoryTable(pset.states)

    records = []
    for length, dtheta in trace.steps:
        record = pf.step((float(length), float(dtheta)), None)
        if history is not None:
            history.append(pset.states, record.parents)
        records.append(record)

    paths = pf.tree.all_paths() if pf.tree is not None else history.paths()
    estimate = paths[:, :, :2].mean(axis=0)
    if trace.gt is not None:
        err = estimate[1:] - trace.gt[:, :2]
        rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    else:
        rmse = float("nan")
    success = bool(rmse < config.success_rmse)
    return ReplayResult(
        rmse=rmse,
        success=success,
        minor_inaccuracy=minor_inaccuracy(rmse, success, config.minor_inaccuracy_threshold),
        collapse_count=pf.collapse_count,
        estimate=estimate,
        records=records,
    )
