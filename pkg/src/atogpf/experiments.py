"""Batch experiments: run matrices over strategies and particle counts,
mode-maintenance metrics, the lambda0 sweep, and CSV/JSONL aggregation."""

from __future__ import annotations

import configparser
import json
import math
import os
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from .filter import Models, ParticleFilter, ParticleSet
from .models import OdometryMotionModel, RayLikelihoodConfig, RayMeasurementModel
from .replay import ReplayConfig, replay_run, synth_bimodal_map_and_trace
from .rng import FILTER_STREAM, WORLD_STREAM, RngStream
from .sim import (LineMap, RobotConfig, RobotSimulator, builtin_map, grid_init,
                  load_map, random_start, true_modes)
from .strategies import StrategyConfig, make_strategy

MODE_RADIUS = 1.0
LOSS_WINDOW = 50
START_WINDOW = 50
STEADY_SKIP = 50  # steps ignored by scalar compactness/RMSE aggregates


# -- metrics -----------------------------------------------------------------

def mode_occupancy(positions: np.ndarray, modes: np.ndarray) -> np.ndarray:
    """True per mode when some particle sits within MODE_RADIUS of it."""
    d = positions[:, None, :] - modes[None, :, :2]
    dist = np.hypot(d[..., 0], d[..., 1])
    return (dist < MODE_RADIUS).any(axis=0)


def mode_loss_steps(occupied: np.ndarray, window: int = LOSS_WINDOW) -> np.ndarray:
    """First step of the first window-long empty stretch, per mode; the run
    length when a mode never loses its particles that long."""
    t, m = occupied.shape
    out = np.full(m, t, dtype=np.int64)
    for j in range(m):
        run = 0
        for i in range(t):
            run = 0 if occupied[i, j] else run + 1
            if run >= window:
                out[j] = i - window + 1
                break
    return out


def mode_maintenance(occupied: np.ndarray, window: int = LOSS_WINDOW):
    """Per-step maintained-mode counts plus the run's success flag.

    A mode stays non-maintained from the first step of its first
    window-long empty stretch, even if particles return later.
    """
    t = occupied.shape[0]
    lost_at = mode_loss_steps(occupied, window)
    steps = np.arange(t)[:, None]
    maintained = (steps < lost_at[None, :]).sum(axis=1)
    success = bool(np.all(lost_at >= t))
    return maintained, success, int(lost_at.min())


def successful_start(occupied: np.ndarray, window: int = LOSS_WINDOW,
                     first: int = START_WINDOW) -> bool:
    """All modes maintained through the first `first` steps."""
    lost_at = mode_loss_steps(occupied, window)
    return bool(np.all(lost_at >= first))


def compactness(positions: np.ndarray, modes: np.ndarray) -> float:
    """Fraction of particles within MODE_RADIUS of their closest mode."""
    d = positions[:, None, :] - modes[None, :, :2]
    dist = np.hypot(d[..., 0], d[..., 1]).min(axis=1)
    return float(np.mean(dist < MODE_RADIUS))


def rmse_to_modes(positions: np.ndarray, modes: np.ndarray) -> float:
    """Root mean square of each particle's distance to its closest mode."""
    d = positions[:, None, :] - modes[None, :, :2]
    dist = np.hypot(d[..., 0], d[..., 1]).min(axis=1)
    return float(np.sqrt(np.mean(dist * dist)))


# -- per-run record -----------------------------------------------------------

@dataclass
class RunMetrics:
    environment: str
    strategy: str
    particles: int
    seed: int
    steps: int
    success: bool
    successful_start: bool = False
    time_to_premature_convergence: int = 0
    rmse: float = 0.0
    compactness: float = 0.0
    collapse_count: int = 0
    rmse_series: list = field(default_factory=list)
    compactness_series: list = field(default_factory=list)
    maintained_series: list = field(default_factory=list)
    minor_inaccuracy: bool = False
    # tree bookkeeping for the structural sweep
    node_count_max: int = 0
    node_bound: int = 0
    snapshots: int = 0
    snapshots_steady: int = 0
    cluster_size_ok_steady: int = 0
    cluster_count_max: int = 0
    tree_series: list = field(default_factory=list)  # [step, nodes, height, depth, branch, nclust, csize]

    def to_json(self) -> str:
        payload = {
            "environment": self.environment,
            "strategy": self.strategy,
            "particles": self.particles,
            "seed": self.seed,
            "steps": self.steps,
            "success": self.success,
            "successful_start": self.successful_start,
            "time_to_premature_convergence": self.time_to_premature_convergence,
            "rmse": self.rmse,
            "compactness": self.compactness,
            "collapse_count": self.collapse_count,
            "minor_inaccuracy": self.minor_inaccuracy,
            "node_count_max": self.node_count_max,
            "node_bound": self.node_bound,
            "snapshots": self.snapshots,
            "snapshots_steady": self.snapshots_steady,
            "cluster_size_ok_steady": self.cluster_size_ok_steady,
            "cluster_count_max": self.cluster_count_max,
            "rmse_series": [round(v, 6) for v in self.rmse_series],
            "compactness_series": [round(v, 6) for v in self.compactness_series],
            "maintained_series": self.maintained_series,
            "tree_series": self.tree_series,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(line: str) -> dict:
        return json.loads(line)


# -- robotics runs -------------------------------------------------------------

def _resolve_map(environment: str) -> LineMap:
    if environment in ("square", "maze"):
        return builtin_map(environment)
    return load_map(environment)


def run_robotics(environment: str, strategy_name: str, particles: int, seed: int,
                 steps: int = 500, strategy_config: StrategyConfig | None = None,
                 robot_config: RobotConfig | None = None) -> RunMetrics:
    """One seeded run in the Square/Maze world under one strategy."""
    line_map = _resolve_map(environment)
    robot_cfg = robot_config or RobotConfig()
    rng = RngStream(seed)
    world = rng.substream(WORLD_STREAM)
    filt = rng.substream(FILTER_STREAM)

    start = random_start(line_map, world, robot_cfg)
    sim = RobotSimulator(line_map, robot_cfg, world, start)
    states = grid_init(line_map, particles, filt, radius=robot_cfg.radius)
    pset = ParticleSet(states)
    strategy = make_strategy(strategy_name, strategy_config)
    models = Models(
        motion=OdometryMotionModel(sigma_trans=2.0 * robot_cfg.sigma_trans,
                                   sigma_rot=2.0 * robot_cfg.sigma_rot),
        measurement=RayMeasurementModel(line_map, RayLikelihoodConfig(
            sigma=2.0 * robot_cfg.sigma_sensor, n_rays=robot_cfg.n_rays,
            max_range=robot_cfg.sensor_range)),
    )
    pf = ParticleFilter(pset, strategy, models, filt)

    metrics = RunMetrics(environment=environment, strategy=strategy_name,
                         particles=particles, seed=seed, steps=steps,
                         success=False, node_bound=2 * particles)
    occupied = np.zeros((steps, 0), dtype=bool)
    occ_rows = []
    k = pf.k_minor
    for t in range(steps):
        command, scan = sim.step()
        record = pf.step(command, scan)
        modes = true_modes(line_map, sim.pose)
        positions = pset.positions()
        occ_rows.append(mode_occupancy(positions, modes))
        metrics.rmse_series.append(rmse_to_modes(positions, modes))
        metrics.compactness_series.append(compactness(positions, modes))
        if pf.tree is not None:
            metrics.node_count_max = max(metrics.node_count_max, pf.tree.node_count)
        if record.tree is not None:
            tm = record.tree
            metrics.snapshots += 1
            metrics.cluster_count_max = max(metrics.cluster_count_max,
                                            tm.minor_cluster_count)
            if record.step > STEADY_SKIP:
                metrics.snapshots_steady += 1
                if tm.minor_cluster_count > 0 and k <= tm.mean_cluster_size <= 1.5 * k:
                    metrics.cluster_size_ok_steady += 1
            metrics.tree_series.append([
                record.step, tm.node_count, tm.height,
                round(tm.mean_leaf_depth, 4), round(tm.mean_branching, 4),
                tm.minor_cluster_count, round(tm.mean_cluster_size, 4)])
    occupied = np.array(occ_rows, dtype=bool)
    maintained, success, ttpc = mode_maintenance(occupied)
    metrics.maintained_series = maintained.tolist()
    metrics.success = success
    metrics.successful_start = successful_start(occupied)
    metrics.time_to_premature_convergence = ttpc
    metrics.collapse_count = pf.collapse_count
    skip = STEADY_SKIP if steps > 2 * STEADY_SKIP else 0
    metrics.rmse = float(np.mean(metrics.rmse_series[skip:]))
    metrics.compactness = float(np.mean(metrics.compactness_series[skip:]))
    return metrics


def run_indoor(strategy_name: str, particles: int, seed: int,
               strategy_config: StrategyConfig | None = None,
               replay_config: ReplayConfig | None = None,
               n_loops: int = 2) -> RunMetrics:
    """One seeded synthetic bimodal indoor run."""
    rng = RngStream(seed)
    world = rng.substream(WORLD_STREAM)
    filt = rng.substream(FILTER_STREAM)
    line_map, trace, ground_truth, modes = synth_bimodal_map_and_trace(world, n_loops)
    config = replay_config or ReplayConfig()
    config.particles = particles
    strategy = make_strategy(strategy_name, strategy_config)
    result = replay_run(line_map, trace, config, strategy, filt, modes=modes)

    metrics = RunMetrics(environment="indoor-synthetic", strategy=strategy_name,
                         particles=particles, seed=seed, steps=len(trace),
                         success=result.success, node_bound=2 * particles)
    metrics.rmse = result.rmse
    metrics.minor_inaccuracy = result.minor_inaccuracy
    metrics.collapse_count = result.collapse_count
    metrics.time_to_premature_convergence = len(trace)
    k = max(1, int(round((strategy_config or StrategyConfig()).k_minor_frac * particles)))
    for record in result.records:
        if record.tree is not None:
            tm = record.tree
            metrics.snapshots += 1
            metrics.node_count_max = max(metrics.node_count_max, tm.node_count)
            metrics.cluster_count_max = max(metrics.cluster_count_max,
                                            tm.minor_cluster_count)
            if record.step > STEADY_SKIP:
                metrics.snapshots_steady += 1
                if tm.minor_cluster_count > 0 and k <= tm.mean_cluster_size <= 1.5 * k:
                    metrics.cluster_size_ok_steady += 1
    return metrics


# -- configuration ---------------------------------------------------------------

@dataclass
class ExperimentConfig:
    environment: str = "square"
    strategies: list = field(default_factory=lambda: ["pf", "fds", "drsir", "atog-fs", "atog-cds"])
    particles: list = field(default_factory=lambda: [1000])
    runs: int = 20
    steps: int = 500
    seed: int = 1000
    out: str = "results"
    n_loops: int = 2
    strategy_config: StrategyConfig = field(default_factory=StrategyConfig)
    robot_config: RobotConfig = field(default_factory=RobotConfig)
    replay_config: ReplayConfig = field(default_factory=ReplayConfig)

    @staticmethod
    def from_file(path) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        parser.read(path)
        cfg = ExperimentConfig()
        exp = parser["experiment"] if parser.has_section("experiment") else {}
        cfg.environment = exp.get("environment", cfg.environment)
        if "strategies" in exp:
            cfg.strategies = [s.strip() for s in exp["strategies"].split(",") if s.strip()]
        if "particles" in exp:
            cfg.particles = [int(v) for v in exp["particles"].split(",")]
        cfg.runs = int(exp.get("runs", cfg.runs))
        cfg.steps = int(exp.get("steps", cfg.steps))
        cfg.seed = int(exp.get("seed", cfg.seed))
        cfg.out = exp.get("out", cfg.out)
        cfg.n_loops = int(exp.get("n_loops", cfg.n_loops))
        if parser.has_section("strategy"):
            s = parser["strategy"]
            sc = cfg.strategy_config
            sc.lambda0 = float(s.get("lambda0", sc.lambda0))
            sc.k_minor_frac = float(s.get("k_minor_frac", sc.k_minor_frac))
            sc.k_major_frac = float(s.get("k_major_frac", sc.k_major_frac))
            sc.tax_rate = float(s.get("tax_rate", sc.tax_rate))
            sc.fds_sample_frac = float(s.get("fds_sample_frac", sc.fds_sample_frac))
            sc.validate()
        if parser.has_section("replay"):
            r = parser["replay"]
            rc = cfg.replay_config
            rc.init = r.get("init", rc.init)
            rc.tracking_spread = float(r.get("tracking_spread", rc.tracking_spread))
            rc.success_rmse = float(r.get("success_rmse", rc.success_rmse))
        return cfg


def _run_cell_entry(args):
    cfg, strategy, particles, seed = args
    if cfg.environment == "indoor-synthetic":
        return run_indoor(strategy, particles, seed, cfg.strategy_config,
                          cfg.replay_config, cfg.n_loops)
    return run_robotics(cfg.environment, strategy, particles, seed, cfg.steps,
                        cfg.strategy_config, cfg.robot_config)


def run_matrix(cfg: ExperimentConfig, workers: int | None = None) -> list[RunMetrics]:
    """All (strategy, particle count, seed) cells, deterministically ordered."""
    jobs = [(cfg, s, p, cfg.seed + i)
            for s in cfg.strategies for p in cfg.particles for i in range(cfg.runs)]
    if workers is None:
        workers = int(os.environ.get("ATOGPF_WORKERS", "1"))
    if workers > 1:
        with Pool(workers) as pool:
            results = pool.map(_run_cell_entry, jobs)
    else:
        results = [_run_cell_entry(job) for job in jobs]
    return results


def lambda0_sweep(cfg: ExperimentConfig, values=(1.0, 2.0, 4.0)) -> list[dict]:
    """Success rate and RMSE of ATOG-FS per lambda0 value."""
    rows = []
    for value in values:
        sweep_cfg = ExperimentConfig(
            environment=cfg.environment, strategies=["atog-fs"],
            particles=list(cfg.particles), runs=cfg.runs, steps=cfg.steps,
            seed=cfg.seed, out=cfg.out,
            strategy_config=StrategyConfig(
                lambda0=value,
                k_minor_frac=cfg.strategy_config.k_minor_frac,
                tax_rate=cfg.strategy_config.tax_rate),
            robot_config=cfg.robot_config)
        results = run_matrix(sweep_cfg)
        rows.append({
            "lambda0": value,
            "success_rate": float(np.mean([r.success for r in results])),
            "rmse": float(np.mean([r.rmse for r in results])),
        })
    return rows


def summarize(results: list[RunMetrics]) -> list[dict]:
    """Cell aggregates (a pure fold over the per-run records)."""
    cells: dict[tuple, list[RunMetrics]] = {}
    for r in results:
        cells.setdefault((r.environment, r.strategy, r.particles), []).append(r)
    rows = []
    for (env, strat, p), group in sorted(cells.items()):
        ttpc = [r.time_to_premature_convergence for r in group]
        rmse = [r.rmse for r in group]
        comp = [r.compactness for r in group]
        rows.append({
            "environment": env, "strategy": strat, "particles": p,
            "runs": len(group),
            "success_rate": float(np.mean([r.success for r in group])),
            "ttpc_mean": float(np.mean(ttpc)), "ttpc_std": float(np.std(ttpc)),
            "compactness_mean": float(np.mean(comp)), "compactness_std": float(np.std(comp)),
            "rmse_mean": float(np.mean(rmse)), "rmse_std": float(np.std(rmse)),
        })
    return rows


def emit_outputs(results: list[RunMetrics], out_dir) -> None:
    """Write runs.jsonl, summary.csv and tree_metrics.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ordered = sorted(results, key=lambda r: (r.environment, r.strategy, r.particles, r.seed))
    with open(out / "runs.jsonl", "w") as fh:
        for r in ordered:
            fh.write(r.to_json() + "\n")
    rows = summarize(ordered)
    with open(out / "summary.csv", "w") as fh:
        cols = ["environment", "strategy", "particles", "runs", "success_rate",
                "ttpc_mean", "ttpc_std", "compactness_mean", "compactness_std",
                "rmse_mean", "rmse_std"]
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    with open(out / "tree_metrics.csv", "w") as fh:
        fh.write("environment,strategy,particles,seed,step,node_count,height,"
                 "mean_leaf_depth,mean_branching,minor_clusters,mean_cluster_size\n")
        for r in ordered:
            if not r.tree_series:
                continue
            series = np.array(r.tree_series, dtype=np.float64)
            smooth = _rolling_mean(series[:, 1:], 100)
            for i in range(series.shape[0]):
                vals = [r.environment, r.strategy, r.particles, r.seed,
                        int(series[i, 0])] + [round(v, 4) for v in smooth[i]]
                fh.write(",".join(str(v) for v in vals) + "\n")


def _rolling_mean(values: np.ndarray, window: int) -> np.ndarray:
    out = np.empty_like(values, dtype=np.float64)
    for i in range(values.shape[0]):
        lo = max(0, i - window + 1)
        out[i] = values[lo:i + 1].mean(axis=0)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)
