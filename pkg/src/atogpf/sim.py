"""2D simulation world: line-segment maps, raycasting, and a wandering
differential-drive robot with noisy odometry and a 16-ray range sensor.

Map file format (plain text, '#' comments):
    x1 y1 x2 y2          one wall segment per line
    anchor x y theta     start pose used to randomize the robot position
    mode x y             optional explicit mode anchor
    sym rot4|rot2        rotational symmetry group used by true_modes
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .filter import wrap_angle

_EPS = 1e-12


@dataclass
class RobotConfig:
    radius: float = 0.35
    step_length: float = 0.8
    n_rays: int = 16
    sensor_range: float = 2.0
    sigma_sensor: float = 0.1
    sigma_trans: float = 0.1
    sigma_rot: float = 0.04
    # Braitenberg controller gains (the wandering behavior, not part of
    # the estimation problem).
    turn_gain: float = 0.6
    block_distance: float = 1.2
    blocked_turn: float = 0.5


@dataclass
class LineMap:
    """A 2D environment as wall segments plus bookkeeping for sampling."""

    segments: np.ndarray  # (S, 4): x1 y1 x2 y2
    bounds: tuple[float, float, float, float] = None
    anchor: tuple[float, float, float] | None = None
    symmetry: str | None = None
    modes: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64).reshape(-1, 4)
        lengths = np.hypot(self.segments[:, 2] - self.segments[:, 0],
                           self.segments[:, 3] - self.segments[:, 1])
        if np.any(~np.isfinite(self.segments)) or np.any(lengths <= 0):
            raise ValueError("map segments must be finite and non-degenerate")
        if self.bounds is None:
            xs = np.concatenate([self.segments[:, 0], self.segments[:, 2]])
            ys = np.concatenate([self.segments[:, 1], self.segments[:, 3]])
            self.bounds = (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    @property
    def center(self) -> tuple[float, float]:
        x0, y0, x1, y1 = self.bounds
        return (0.5 * (x0 + x1), 0.5 * (y0 + y1))

    def clearance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point (N, 2) to the nearest wall segment."""
        return _point_segment_distance(np.atleast_2d(points), self.segments).min(axis=1)


def load_map(path) -> LineMap:
    segments, modes = [], []
    anchor, symmetry = None, None
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "anchor":
            anchor = (float(parts[1]), float(parts[2]), float(parts[3]))
        elif parts[0] == "mode":
            modes.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "sym":
            symmetry = parts[1]
        else:
            if len(parts) != 4:
                raise ValueError(f"bad map line: {raw!r}")
            segments.append([float(v) for v in parts])
    return LineMap(np.array(segments), anchor=anchor, symmetry=symmetry, modes=modes)


def builtin_map(name: str) -> LineMap:
    path = Path(__file__).parent / "maps" / f"{name}.txt"
    if not path.exists():
        raise ValueError(f"no bundled map named {name!r}")
    return load_map(path)


def _point_segment_distance(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Pairwise distances, shape (N, S)."""
    a = segments[:, :2]
    d = segments[:, 2:] - a
    len2 = np.maximum((d * d).sum(axis=1), _EPS)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None, :, :]).sum(axis=2) / len2, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - closest
    return np.hypot(diff[:, :, 0], diff[:, :, 1])


# -- raycasting --------------------------------------------------------------

def raycast(line_map: LineMap, pose, n_rays: int = 16, max_range: float = 2.0) -> np.ndarray:
    """Ranges along n rays from the pose, ray k at heading + 2 pi k / n,
    clamped to max_range."""
    pose = np.asarray(pose, dtype=np.float64)
    out = raycast_batch(line_map, pose.reshape(1, 3), n_rays, max_range)
    return out[0]


def raycast_batch(line_map: LineMap, poses: np.ndarray, n_rays: int = 16,
                  max_range: float = 2.0, chunk: int = 1024) -> np.ndarray:
    """Ranges for a batch of poses, shape (N, n_rays)."""
    poses = np.asarray(poses, dtype=np.float64)
    segs = line_map.segments
    a = segs[:, :2]
    s = segs[:, 2:] - a
    bearings = 2.0 * np.pi * np.arange(n_rays) / n_rays
    out = np.empty((poses.shape[0], n_rays))
    for lo in range(0, poses.shape[0], chunk):
        hi = min(lo + chunk, poses.shape[0])
        p = poses[lo:hi]
        ang = p[:, 2:3] + bearings[None, :]
        dx, dy = np.cos(ang), np.sin(ang)
        qx = a[None, None, :, 0] - p[:, None, None, 0]
        qy = a[None, None, :, 1] - p[:, None, None, 1]
        rxs = dx[:, :, None] * s[None, None, :, 1] - dy[:, :, None] * s[None, None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (qx * s[None, None, :, 1] - qy * s[None, None, :, 0]) / rxs
            u = (qx * dy[:, :, None] - qy * dx[:, :, None]) / rxs
        valid = (np.abs(rxs) > _EPS) & (t >= 0.0) & (u >= 0.0) & (u <= 1.0)
        t = np.where(valid, t, np.inf)
        out[lo:hi] = np.minimum(t.min(axis=2), max_range)
    return out


def sense(scan: np.ndarray, rng, sigma: float = 0.1, max_range: float = 2.0) -> np.ndarray:
    """Additive Gaussian per-ray noise, clamped to the sensor interval."""
    noisy = scan + rng.normal(0.0, sigma, size=scan.shape) if sigma > 0 else scan.copy()
    return np.clip(noisy, 0.0, max_range)


# -- motion ------------------------------------------------------------------

def collision_sweep(line_map: LineMap, origin, direction, length: float,
                    radius: float) -> float:
    """Largest travel along direction (unit) such that a disc of the given
    radius touches no wall; at most length."""
    if length <= 0.0:
        return 0.0
    ox, oy = float(origin[0]), float(origin[1])
    dx, dy = float(direction[0]), float(direction[1])
    best = length
    segs = line_map.segments
    for x1, y1, x2, y2 in segs:
        sx, sy = x2 - x1, y2 - y1
        seg_len = math.hypot(sx, sy)
        ux, uy = sx / seg_len, sy / seg_len
        nx, ny = -uy, ux
        # Band: approach toward the infinite line, capped to the segment span.
        s0 = (ox - x1) * nx + (oy - y1) * ny
        v = dx * nx + dy * ny
        if s0 * v < 0.0:
            if abs(s0) <= radius:
                # Already touching and moving closer: blocked if beside the span.
                proj = (ox - x1) * ux + (oy - y1) * uy
                if -radius < proj < seg_len + radius:
                    return 0.0
            else:
                t = (abs(s0) - radius) / abs(v)
                if t < best:
                    px = ox + t * dx - x1
                    py = oy + t * dy - y1
                    proj = px * ux + py * uy
                    if 0.0 <= proj <= seg_len:
                        best = t
        # Endpoint caps.
        for ex, ey in ((x1, y1), (x2, y2)):
            fx, fy = ex - ox, ey - oy
            b = fx * dx + fy * dy
            c = fx * fx + fy * fy - radius * radius
            if b <= 0.0:
                continue  # moving away from this endpoint
            if c < 0.0:
                return 0.0  # already inside the cap and moving deeper
            disc = b * b - c
            if disc >= 0.0:
                t = b - math.sqrt(disc)
                if 0.0 <= t < best:
                    best = t
    return max(0.0, best - 1e-9)


def apply_motion(line_map: LineMap, pose, command, rng, sigma_trans: float = 0.1,
                 sigma_rot: float = 0.04, radius: float = 0.35):
    """Execute (translation, rotation) with additive Gaussian noise; the
    translation stops at wall contact (no sliding). Returns the new pose and
    the actually executed (translation, rotation) used as odometry."""
    trans, rot = command
    d_rot = rot + (rng.normal(0.0, sigma_rot) if sigma_rot > 0 else 0.0)
    theta = wrap_angle(pose[2] + d_rot)
    dist = trans + (rng.normal(0.0, sigma_trans) if sigma_trans > 0 else 0.0)
    sign = 1.0 if dist >= 0 else -1.0
    direction = (sign * math.cos(theta), sign * math.sin(theta))
    allowed = collision_sweep(line_map, pose[:2], direction, abs(dist), radius)
    moved = sign * allowed
    new = np.array([pose[0] + moved * math.cos(theta),
                    pose[1] + moved * math.sin(theta), theta])
    return new, (moved, d_rot)


def braitenberg_control(scan: np.ndarray, cfg: RobotConfig):
    """Steer away from the side with nearer readings; slow and turn hard when
    the way ahead is blocked. Returns a (translation, rotation) command."""
    n = scan.shape[0]
    bearings = 2.0 * np.pi * np.arange(n) / n
    prox = (cfg.sensor_range - scan) / cfg.sensor_range
    # Obstacles on the left (sin > 0) push rotation negative: turn right.
    rot = -cfg.turn_gain * float(np.sum(np.sin(bearings) * prox))
    front = np.abs(wrap_angle(bearings)) <= (2.5 * np.pi / n)
    front_min = float(scan[front].min())
    if front_min < cfg.block_distance:
        side = -1.0 if rot < 0 else 1.0
        rot += side * cfg.blocked_turn * (cfg.block_distance - front_min) / cfg.block_distance
        trans = max(0.0, min(cfg.step_length, front_min - cfg.radius - 0.1))
    else:
        trans = cfg.step_length
    return trans, rot


def random_start(line_map: LineMap, rng, cfg: RobotConfig | None = None,
                 steps=(40, 200)):
    """Randomize the robot pose: a random-length controlled walk from the
    map's anchor, then a direction flip with probability 0.5."""
    cfg = cfg or RobotConfig()
    if line_map.anchor is None:
        raise ValueError("map declares no anchor pose")
    pose = np.array(line_map.anchor, dtype=np.float64)
    n = int(rng.integers(steps[0], steps[1] + 1))
    for _ in range(n):
        scan = sense(raycast(line_map, pose, cfg.n_rays, cfg.sensor_range),
                     rng, cfg.sigma_sensor, cfg.sensor_range)
        command = braitenberg_control(scan, cfg)
        pose, _ = apply_motion(line_map, pose, command, rng,
                               cfg.sigma_trans, cfg.sigma_rot, cfg.radius)
    if rng.random() < 0.5:
        pose[2] = wrap_angle(pose[2] + np.pi)
    return pose


def drivable_grid(line_map: LineMap, pitch: float, radius: float,
                  seed_point) -> np.ndarray:
    """Centers of grid cells with enough wall clearance that are reachable
    from the seed point, shape (M, 2)."""
    from scipy import ndimage

    x0, y0, x1, y1 = line_map.bounds
    xs = np.arange(x0 + pitch / 2.0, x1, pitch)
    ys = np.arange(y0 + pitch / 2.0, y1, pitch)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    free = (line_map.clearance(pts) >= radius).reshape(len(xs), len(ys))
    labels, _ = ndimage.label(free)
    si = int(np.clip(np.searchsorted(xs, seed_point[0]), 0, len(xs) - 1))
    sj = int(np.clip(np.searchsorted(ys, seed_point[1]), 0, len(ys) - 1))
    seed_label = labels[si, sj]
    if seed_label == 0:
        # Seed cell blocked at this pitch; fall back to the nearest free cell.
        fi, fj = np.nonzero(free)
        if fi.size == 0:
            return np.empty((0, 2))
        d2 = (xs[fi] - seed_point[0]) ** 2 + (ys[fj] - seed_point[1]) ** 2
        k = int(np.argmin(d2))
        seed_label = labels[fi[k], fj[k]]
    mask = (labels == seed_label).ravel()
    return pts[mask]


def grid_init(line_map: LineMap, n: int, rng, radius: float = 0.35,
              seed_point=None) -> np.ndarray:
    """Systematic initialization: n poses on a uniform grid over the
    radius-eroded free space reachable from the map anchor (or seed_point),
    headings uniform in [-pi, pi)."""
    if seed_point is None:
        if line_map.anchor is None:
            raise ValueError("grid_init needs a seed point or a map anchor")
        seed_point = line_map.anchor[:2]
    x0, y0, x1, y1 = line_map.bounds
    pitch = math.sqrt((x1 - x0) * (y1 - y0) / n)
    pts = drivable_grid(line_map, pitch, radius, seed_point)
    while pts.shape[0] < n:
        pitch *= 0.93
        pts = drivable_grid(line_map, pitch, radius, seed_point)
    if pts.shape[0] > n:
        keep = np.sort(rng.choice(pts.shape[0], size=n, replace=False))
        pts = pts[keep]
    headings = rng.uniform(-np.pi, np.pi, size=n)
    return np.column_stack([pts, headings])


def true_modes(line_map: LineMap, true_pose) -> np.ndarray:
    """Images of the true pose under the map's declared rotational symmetry
    group (the pose itself when the map declares none)."""
    pose = np.asarray(true_pose, dtype=np.float64)
    if line_map.symmetry is None:
        return pose.reshape(1, 3)
    if line_map.symmetry not in ("rot2", "rot4"):
        raise ValueError(f"unsupported symmetry {line_map.symmetry!r}")
    k = 2 if line_map.symmetry == "rot2" else 4
    cx, cy = line_map.center
    out = np.empty((k, 3))
    for i in range(k):
        ang = 2.0 * np.pi * i / k
        c, s = math.cos(ang), math.sin(ang)
        dx, dy = pose[0] - cx, pose[1] - cy
        out[i] = (cx + c * dx - s * dy, cy + s * dx + c * dy,
                  wrap_angle(pose[2] + ang))
    return out


class RobotSimulator:
    """Drives the wandering robot; each step yields the executed odometry
    command and a fresh noisy scan at the new pose."""

    def __init__(self, line_map: LineMap, cfg: RobotConfig, rng, start_pose):
        self.map = line_map
        self.cfg = cfg
        self.rng = rng
        self.pose = np.asarray(start_pose, dtype=np.float64).copy()
        self._scan = sense(raycast(line_map, self.pose, cfg.n_rays, cfg.sensor_range),
                           rng, cfg.sigma_sensor, cfg.sensor_range)

    def step(self):
        cfg = self.cfg
        command = braitenberg_control(self._scan, cfg)
        self.pose, executed = apply_motion(self.map, self.pose, command, self.rng,
                                           cfg.sigma_trans, cfg.sigma_rot, cfg.radius)
        self._scan = sense(raycast(self.map, self.pose, cfg.n_rays, cfg.sensor_range),
                           self.rng, cfg.sigma_sensor, cfg.sensor_range)
        return executed, self._scan.copy()
