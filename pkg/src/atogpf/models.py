"""Filter-side motion and measurement models.

Robotics runs pair a doubled-noise odometry model with a per-ray Gaussian
range likelihood; indoor replay pairs a PDR step model with floor-plan
matching (wall-crossing penalty plus a mild corridor-center reward).
All likelihoods are returned as finite log values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .filter import wrap_angle
from .sim import LineMap, raycast_batch

LOG_FLOOR = -1e6


@dataclass
class RayLikelihoodConfig:
    sigma: float = 0.2  # doubled simulator sensor noise
    n_rays: int = 16
    max_range: float = 2.0


@dataclass
class PdrMotionConfig:
    sigma_tr: float = 0.2       # step length noise, per step
    sigma_rot_tr: float = 0.06  # heading noise per meter traveled
    sigma_rot: float = 0.3      # heading noise per full turn commanded


@dataclass
class FloorplanLikelihoodConfig:
    wall_penalty: float = 1e-6
    corridor_reward: float = 1.1
    grid_pitch: float = 0.1


class OdometryMotionModel:
    """Same kinematics as the simulator but with doubled noise and no
    collision handling; walls act through the measurement model."""

    def __init__(self, sigma_trans: float = 0.2, sigma_rot: float = 0.08):
        self.sigma_trans = sigma_trans
        self.sigma_rot = sigma_rot

    def sample(self, states: np.ndarray, control, rng) -> np.ndarray:
        trans, rot = control
        n = states.shape[0]
        theta = wrap_angle(states[:, 2] + rot + rng.normal(0.0, self.sigma_rot, n))
        dist = trans + rng.normal(0.0, self.sigma_trans, n)
        out = np.empty_like(states)
        out[:, 0] = states[:, 0] + dist * np.cos(theta)
        out[:, 1] = states[:, 1] + dist * np.sin(theta)
        out[:, 2] = theta
        return out


def odometry_motion_sample(pose, command, rng, sigma_trans: float = 0.2,
                           sigma_rot: float = 0.08) -> np.ndarray:
    """Single-pose form of the odometry model."""
    model = OdometryMotionModel(sigma_trans, sigma_rot)
    return model.sample(np.asarray(pose, dtype=np.float64).reshape(1, 3), command, rng)[0]


def ray_likelihood(observed: np.ndarray, expected: np.ndarray,
                   config: RayLikelihoodConfig | None = None) -> float:
    """Sum of per-ray Gaussian log densities of the range residuals."""
    config = config or RayLikelihoodConfig()
    observed = np.asarray(observed, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    if observed.shape != expected.shape:
        raise ValueError("observed and expected scans must have equal ray counts")
    resid = (observed - expected) / config.sigma
    const = -math.log(config.sigma * math.sqrt(2.0 * math.pi))
    ll = float(np.sum(-0.5 * resid * resid + const))
    return max(ll, LOG_FLOOR)


class RayMeasurementModel:
    """Expected scans by raycasting each particle; independent Gaussian rays."""

    def __init__(self, line_map: LineMap, config: RayLikelihoodConfig | None = None):
        self.map = line_map
        self.config = config or RayLikelihoodConfig()

    def log_likelihood(self, prev_states, states, observation) -> np.ndarray:
        cfg = self.config
        expected = raycast_batch(self.map, states, cfg.n_rays, cfg.max_range)
        resid = (np.asarray(observation)[None, :] - expected) / cfg.sigma
        const = -math.log(cfg.sigma * math.sqrt(2.0 * math.pi))
        ll = np.sum(-0.5 * resid * resid + const, axis=1)
        return np.maximum(ll, LOG_FLOOR)


class PdrMotionModel:
    """Step-and-heading motion: the heading perturbation combines a
    per-distance cross term with a per-rotation term (independent variances)."""

    def __init__(self, config: PdrMotionConfig | None = None):
        self.config = config or PdrMotionConfig()

    def sample(self, states: np.ndarray, control, rng) -> np.ndarray:
        length, dtheta = control
        cfg = self.config
        n = states.shape[0]
        sigma_heading = math.sqrt((cfg.sigma_rot_tr * abs(length)) ** 2
                                  + (cfg.sigma_rot * abs(dtheta) / (2.0 * math.pi)) ** 2)
        d = length + (rng.normal(0.0, cfg.sigma_tr, n) if cfg.sigma_tr > 0 else 0.0)
        dth = dtheta + (rng.normal(0.0, sigma_heading, n) if sigma_heading > 0 else 0.0)
        theta = wrap_angle(states[:, 2] + dth)
        out = np.empty_like(states)
        out[:, 0] = states[:, 0] + d * np.cos(theta)
        out[:, 1] = states[:, 1] + d * np.sin(theta)
        out[:, 2] = theta
        return out


def pdr_motion_sample(pose, step, rng, config: PdrMotionConfig | None = None) -> np.ndarray:
    model = PdrMotionModel(config)
    return model.sample(np.asarray(pose, dtype=np.float64).reshape(1, 3), step, rng)[0]


def segments_cross(p_from: np.ndarray, p_to: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """True per row where the open segment p_from[i] -> p_to[i] properly
    crosses any wall (shared endpoints do not count)."""
    a1 = walls[None, :, :2]
    a2 = walls[None, :, 2:]
    p1 = p_from[:, None, :]
    p2 = p_to[:, None, :]

    def cross(o, u, v):
        return ((u[..., 0] - o[..., 0]) * (v[..., 1] - o[..., 1])
                - (u[..., 1] - o[..., 1]) * (v[..., 0] - o[..., 0]))

    d1 = cross(a1, a2, p1)
    d2 = cross(a1, a2, p2)
    d3 = cross(p1, p2, a1)
    d4 = cross(p1, p2, a2)
    hit = (d1 * d2 < 0) & (d3 * d4 < 0)
    return hit.any(axis=1)


class ClearanceField:
    """Distance-to-nearest-wall sampled on a regular grid with bilinear
    interpolation; backs the corridor-center reward."""

    def __init__(self, line_map: LineMap, pitch: float = 0.1):
        x0, y0, x1, y1 = line_map.bounds
        self.x0, self.y0 = x0, y0
        self.pitch = pitch
        xs = np.arange(x0, x1 + pitch, pitch)
        ys = np.arange(y0, y1 + pitch, pitch)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        grid = line_map.clearance(pts).reshape(len(xs), len(ys))
        self.grid = grid
        self.nx, self.ny = grid.shape
        self.max_value = float(grid.max())

    def sample(self, points: np.ndarray) -> np.ndarray:
        fx = np.clip((points[:, 0] - self.x0) / self.pitch, 0.0, self.nx - 1.001)
        fy = np.clip((points[:, 1] - self.y0) / self.pitch, 0.0, self.ny - 1.001)
        ix = fx.astype(np.int64)
        iy = fy.astype(np.int64)
        tx = fx - ix
        ty = fy - iy
        g = self.grid
        v0 = g[ix, iy] * (1 - tx) + g[ix + 1, iy] * tx
        v1 = g[ix, iy + 1] * (1 - tx) + g[ix + 1, iy + 1] * tx
        return v0 * (1 - ty) + v1 * ty


class FloorplanMeasurementModel:
    """Wall crossings multiply the weight by wall_penalty; clearance maps
    linearly onto [1, corridor_reward] so corridor centers score highest."""

    def __init__(self, line_map: LineMap, config: FloorplanLikelihoodConfig | None = None):
        self.map = line_map
        self.config = config or FloorplanLikelihoodConfig()
        self.field = ClearanceField(line_map, self.config.grid_pitch)

    def log_likelihood(self, prev_states, states, observation=None) -> np.ndarray:
        cfg = self.config
        crossed = segments_cross(prev_states[:, :2], states[:, :2], self.map.segments)
        reward = 1.0 + (cfg.corridor_reward - 1.0) * (
            self.field.sample(states[:, :2]) / max(self.field.max_value, 1e-12))
        ll = np.log(reward) + np.where(crossed, math.log(cfg.wall_penalty), 0.0)
        return np.maximum(ll, LOG_FLOOR)


def floorplan_likelihood(prev_pose, next_pose, line_map: LineMap,
                         config: FloorplanLikelihoodConfig | None = None,
                         model: FloorplanMeasurementModel | None = None) -> float:
    """Single-transition form of the floor-plan matching likelihood."""
    if model is None:
        model = FloorplanMeasurementModel(line_map, config)
    prev = np.asarray(prev_pose, dtype=np.float64).reshape(1, 3)
    nxt = np.asarray(next_pose, dtype=np.float64).reshape(1, 3)
    return float(model.log_likelihood(prev, nxt)[0])
