"""Command line entry points: run matrices, the lambda0 sweep, tree dumps."""

from __future__ import annotations

import argparse
import sys

from .experiments import ExperimentConfig, emit_outputs, lambda0_sweep, run_matrix
from .filter import FilterCollapseError
from .tree import TreeInvariantError


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if getattr(args, "strategy", None):
        cfg.strategies = [args.strategy]
    if getattr(args, "particles", None):
        cfg.particles = [args.particles]
    if getattr(args, "runs", None):
        cfg.runs = args.runs
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args)
    results = run_matrix(cfg)
    emit_outputs(results, cfg.out)
    print(f"wrote {len(results)} runs to {cfg.out}/runs.jsonl")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = [float(v) for v in args.values.split(",")]
    rows = lambda0_sweep(cfg, values)
    print("lambda0,success_rate,rmse")
    for row in rows:
        print(f"{row['lambda0']},{row['success_rate']:.4f},{row['rmse']:.4f}")
    return 0


def cmd_dump_tree(args) -> int:
    from .experiments import _resolve_map, RunMetrics  # noqa: F401
    from .filter import Models, ParticleFilter, ParticleSet
    from .models import OdometryMotionModel, RayLikelihoodConfig, RayMeasurementModel
    from .rng import FILTER_STREAM, WORLD_STREAM, RngStream
    from .sim import RobotConfig, RobotSimulator, grid_init, random_start
    from .strategies import make_strategy

    cfg = _load_config(args)
    line_map = _resolve_map(cfg.environment)
    robot_cfg = cfg.robot_config or RobotConfig()
    rng = RngStream(cfg.seed)
    world = rng.substream(WORLD_STREAM)
    filt = rng.substream(FILTER_STREAM)
    sim = RobotSimulator(line_map, robot_cfg, world, random_start(line_map, world, robot_cfg))
    pset = ParticleSet(grid_init(line_map, cfg.particles[0], filt, radius=robot_cfg.radius))
    strategy = make_strategy(cfg.strategies[0], cfg.strategy_config)
    models = Models(
        motion=OdometryMotionModel(2 * robot_cfg.sigma_trans, 2 * robot_cfg.sigma_rot),
        measurement=RayMeasurementModel(line_map, RayLikelihoodConfig(
            sigma=2 * robot_cfg.sigma_sensor)))
    pf = ParticleFilter(pset, strategy, models, filt)
    for _ in range(args.step):
        command, scan = sim.step()
        pf.step(command, scan)
    if pf.tree is None:
        print("strategy does not maintain an ancestry tree", file=sys.stderr)
        return 1
    sys.stdout.write(pf.tree.dump())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="atogpf",
                                     description="Particle filter diversity experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the configured experiment matrix")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--strategy", default=None)
    p_run.add_argument("--particles", type=int, default=None)
    p_run.add_argument("--runs", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep-lambda0", help="sweep the C0 reward factor")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--values", default="1,2,4")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_dump = sub.add_parser("dump-tree", help="run to a step and dump the tree")
    p_dump.add_argument("--config", default=None)
    p_dump.add_argument("--step", type=int, required=True)
    p_dump.add_argument("--strategy", default=None)
    p_dump.add_argument("--particles", type=int, default=None)
    p_dump.add_argument("--seed", type=int, default=None)
    p_dump.set_defaults(func=cmd_dump_tree)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TreeInvariantError, FilterCollapseError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
