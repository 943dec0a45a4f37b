import argparse
import json
import os
import re
import sys
from dataclasses import dataclass, asdict, replace
from typing import List, Optional

import numpy as np
import psutil
import torch

from Core.Logger import logger, attachRunLog, setVerbose
from Core.ConfigManager import ConfigManager
from Core.RunDirManager import RunDirManager
from Core.ErrorHandler import ErrorHandler, EXIT_OK, EXIT_USAGE

from Libraries.TimeFieldsLib import (
    TimeFieldsLibError, ConfigError, AblationMode, BenchReport, NeuralCostToGo, OracleCostToGo, PrmPlanner, Roadmap,
    audit_bounds, build_roadmap, build_speed_field, build_suite, default_suite, eval_field, export_pgm, fmm_plan,
    fmm_solve, generate_maze, generate_pairs, gradient_descent_plan, load_grid, load_model, mpc_plan, pairs_from_csv,
    pairs_to_csv, path_metrics, plot_field, plot_field_panels, precompute_samples, rrt_connect, run_ablation,
    run_baselines, run_scaling, save_grid, save_model, save_reports_xlsx, train, write_training_run
)
from Libraries.TimeFieldsLib.app.bench import held_out_pairs, prepare_environment, make_samples, train_mode
from Libraries.TimeFieldsLib.app.planner import load_path_csv
from Libraries.TimeFieldsLib.app.plotting import contour_crossings, contour_levels, field_contours, time_values
from Libraries.TimeFieldsLib.app.training import solve_oracle_pairs

APP_NAME = "TimeFieldsLab"
PLAN_METHODS = ["mpc", "mpc-oracle", "gradient", "fmm", "rrt", "prm"]


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        ErrorHandler.handleError(f"Usage: {message}")
        sys.exit(EXIT_USAGE)


@dataclass
class RunContext:
    config: ConfigManager
    run_dir: RunDirManager
    seed: int
    threads: int

    @classmethod
    def fromArgs(cls, args) -> "RunContext":
        config = ConfigManager(args.config)
        if args.seed is not None:
            config.setConfigKeySeed(args.seed)
        threads = args.threads or config.getConfigKeyThreads() or psutil.cpu_count(logical=False) or 1
        if threads < 1:
            raise ConfigError(f"--threads must be positive, got {threads}")
        config.setConfigKeyThreads(int(threads))
        torch.set_num_threads(int(threads))
        run_dir = RunDirManager(args.out_dir)
        attachRunLog(run_dir.out_dir)
        logger.info(f"{APP_NAME} {args.command}: seed={config.getConfigKeySeed()}, threads={threads}, out={run_dir.out_dir}")
        return cls(config, run_dir, config.getConfigKeySeed(), int(threads))


def _slug(title: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", title).strip("_").lower() or "report"


def _point(values, dim: int, name: str) -> np.ndarray:
    if len(values) != dim:
        raise ConfigError(f"{name} needs {dim} coordinates, got {len(values)}")
    return np.asarray(values, dtype=np.float64)


def writeReports(reports: List[BenchReport], ctx: RunContext, workbook: str) -> List[str]:
    """CSV (with and without wall-time columns), JSON and text table per report, plus one workbook."""
    written = []
    for report in reports:
        stem = ctx.run_dir.getPath("reports", _slug(report.title))
        written.append(str(report.to_csv(f"{stem}.csv")))
        written.append(str(report.to_csv(f"{stem}.stable.csv", include_timing=False)))
        written.append(str(report.to_json(f"{stem}.json")))
        with open(f"{stem}.txt", "w", encoding="utf-8") as f:
            f.write(report.to_table())
        written.append(f"{stem}.txt")
        logger.info("\n" + report.to_table())
    written.append(str(save_reports_xlsx(reports, ctx.run_dir.getPath("reports", workbook))))
    return written


def _loadEnv(path: str):
    env, d_min, d_max = load_grid(path)
    dist, speed = build_speed_field(env, d_min, d_max)
    return env, dist, speed


def _suite(ctx: RunContext, args):
    settings = ctx.config.getSuiteSettings()
    if getattr(args, "suite_size", None):
        settings["size"] = args.suite_size
    specs = default_suite(settings["size"], settings["shape_range"], settings["room_range"], ctx.seed, settings["dim"])
    return build_suite(specs)

# region Subcommands

def cmdGenEnv(args, ctx: RunContext) -> List[str]:
    spec = ctx.config.getMazeSpec()
    overrides = {"rng_seed": ctx.seed}
    if args.shape:
        overrides.update(shape=tuple(args.shape), dim=len(args.shape))
    if args.rooms is not None:
        overrides["rooms"] = args.rooms
    if args.clutter is not None:
        overrides["clutter_density"] = args.clutter
    spec = replace(spec, **overrides)
    env = generate_maze(spec)
    grid_path = save_grid(env, ctx.run_dir.getPath("grids", f"{args.name}.json"),
                          ctx.config.getConfigKeyDMin(), ctx.config.getConfigKeyDMax())
    written = [str(grid_path), str(grid_path.with_suffix(".raw"))]
    if env.dim == 2:
        written.append(str(export_pgm(env, ctx.run_dir.getPath("grids", f"{args.name}.pgm"))))
    logger.info(f"Generated {spec.rooms}-room maze {env.shape}, digest {env.digest[:12]}")
    return written


def cmdBuildRoadmap(args, ctx: RunContext) -> List[str]:
    env, dist, speed = _loadEnv(args.env)
    rc = ctx.config.getRoadmapConfig()
    roadmap = build_roadmap(env, dist, speed, rc.max_nodes, rc.min_radius, ctx.seed, rc.k_neighbors,
                            rc.max_rejections_factor * rc.max_nodes)
    logger.info(f"Roadmap: {len(roadmap.nodes)} nodes, {len(roadmap.edges)} edges in {roadmap.build_seconds:.2f} s")
    return [str(roadmap.to_json(ctx.run_dir.getPath("roadmaps", f"{args.name}.json")))]


def cmdMakeDataset(args, ctx: RunContext) -> List[str]:
    env, _, speed = _loadEnv(args.env)
    roadmap = Roadmap.from_file(args.roadmap)
    rc = ctx.config.getRoadmapConfig()
    count = args.count if args.count is not None else rc.pair_count
    pairs = generate_pairs(roadmap, env, speed, count, ctx.seed, args.tightened or rc.tightened,
                           args.realized or rc.realized, rc.stratification_bins, ctx.threads)
    written = [str(pairs_to_csv(pairs, ctx.run_dir.getPath("datasets", f"{args.name}.csv")))]
    if args.audit:
        audit = audit_bounds(pairs[:args.audit], speed)
        audit_path = ctx.run_dir.getPath("datasets", f"{args.name}.audit.json")
        with open(audit_path, "w", encoding="utf-8") as f:
            json.dump({**asdict(audit), "violation_rate": audit.violation_rate}, f, indent=2)
        logger.info(f"Bound audit: {audit.violations}/{audit.count} violations (rate {audit.violation_rate:.4f})")
        written.append(audit_path)
    return written


def cmdTrain(args, ctx: RunContext) -> List[str]:
    env, _, speed = _loadEnv(args.env)
    samples = precompute_samples(env, speed, pairs_from_csv(args.dataset))
    train_cfg = ctx.config.getTrainConfig()
    overrides = {"batch_size": min(train_cfg.batch_size, len(samples))}
    if args.mode:
        overrides["ablation_mode"] = AblationMode(args.mode)
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    train_cfg = replace(train_cfg, **overrides)
    arch = ctx.config.getArchConfig().for_dim(env.dim)
    model, history = train(env, speed, samples, arch, ctx.config.getLossWeights(), train_cfg)
    run_dir = ctx.run_dir.getPath("checkpoints", args.name)
    resolved = ctx.config.loadConfig()
    resolved["Training"]["AblationMode"] = train_cfg.ablation_mode.value
    files = write_training_run(run_dir, model, history, resolved, ctx.seed)
    written = [str(p) for p in files.values()]
    if args.eval_pairs:
        pairs = held_out_pairs(env, args.eval_pairs, ctx.seed + 1)
        report = eval_field(model, solve_oracle_pairs(speed, pairs), pairs, env.spacing)
        eval_path = os.path.join(run_dir, "field_eval.json")
        with open(eval_path, "w", encoding="utf-8") as f:
            json.dump(asdict(report), f, indent=2)
        logger.info(f"Field error: mean {report.mean_rel_error:.4f}, median {report.median_rel_error:.4f}")
        written.append(eval_path)
    return written


def cmdPlan(args, ctx: RunContext) -> List[str]:
    env, dist, speed = _loadEnv(args.env)
    qs, qg = _point(args.start, env.dim, "--start"), _point(args.goal, env.dim, "--goal")
    h = env.spacing
    bc = ctx.config.getBaselineConfig()
    mpc_cfg = ctx.config.getMpcSettings().for_env(env, ctx.seed)
    if args.method in ("mpc", "gradient"):
        if not args.checkpoint:
            raise ConfigError(f"--checkpoint is required for method {args.method}")
        model = load_model(args.checkpoint)
    if args.method == "mpc":
        result = mpc_plan(NeuralCostToGo(model), env, speed, qs, qg, mpc_cfg)
    elif args.method == "mpc-oracle":
        result = mpc_plan(OracleCostToGo(speed), env, speed, qs, qg, mpc_cfg)
    elif args.method == "gradient":
        result = gradient_descent_plan(model, env, speed, qs, qg, bc.gradient_step_cells * h, bc.gradient_max_steps,
                                       mpc_cfg.goal_tol)
    elif args.method == "fmm":
        result = fmm_plan(env, speed, qs, qg)
    elif args.method == "rrt":
        result = rrt_connect(env, qs, qg, bc.time_limit, bc.rrt_step_cells * h, ctx.seed, bc.shortcut_passes)
    else:
        result = PrmPlanner(env, bc.prm_nodes, bc.prm_k, ctx.seed).plan(qs, qg)
    metrics = path_metrics(env, result.path, dist)
    stem = ctx.run_dir.getPath("reports", f"plan_{args.name}_{args.method}")
    path_file = result.to_csv(f"{stem}.csv")
    summary = {
        "method": args.method,
        "success": bool(result.success),
        "failure_reason": result.failure_reason.value,
        "length": result.length,
        "wall_time": result.wall_time,
        "query_time": result.query_time,
        "steps": result.steps,
        "min_clearance": metrics.min_clearance,
        "collision_free": metrics.collision_free,
    }
    with open(f"{stem}.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    logger.info(f"Plan ({args.method}): success={result.success}, reason={result.failure_reason.value}, "
                f"length={result.length:.4f}, time={result.wall_time:.3f} s")
    return [str(path_file), f"{stem}.json"]


def cmdBenchAblation(args, ctx: RunContext) -> List[str]:
    envs = _suite(ctx, args)
    result = run_ablation(envs, ctx.config.getBenchConfig(ctx.threads))
    written = writeReports(result.reports, ctx, "ablation.xlsx")
    for index, by_mode in result.models.items():
        for mode, model in by_mode.items():
            if model is not None:
                path = ctx.run_dir.getPath("checkpoints", os.path.join("ablation", f"env{index}_{mode.value}.ckpt"))
                written.append(str(save_model(model, path)))
    return written


def cmdBenchScaling(args, ctx: RunContext) -> List[str]:
    envs = _suite(ctx, args)
    counts = args.counts or ctx.config.getConfigKeyScalingCounts()
    reports = run_scaling(envs, counts, ctx.config.getBenchConfig(ctx.threads))
    return writeReports(reports, ctx, "scaling.xlsx")


def cmdBenchBaselines(args, ctx: RunContext) -> List[str]:
    envs = _suite(ctx, args)
    cfg = ctx.config.getBenchConfig(ctx.threads)
    models_dir = args.models_dir or ctx.run_dir.getPath("checkpoints", "ablation")
    models = {}
    for index, env in enumerate(envs):
        path = os.path.join(models_dir, f"env{index}_full.ckpt")
        if os.path.isfile(path):
            models[index] = load_model(path)
        elif args.train_missing:
            art = prepare_environment(index, env, cfg)
            samples, _ = make_samples(art, cfg, cfg.roadmap.pair_count)
            model = train_mode(art, cfg, samples, AblationMode.FULL)
            if model is not None:
                models[index] = model
    report = run_baselines(envs, cfg, models)
    return writeReports([report], ctx, "baselines.xlsx")


def cmdPlotField(args, ctx: RunContext) -> List[str]:
    env, _, speed = _loadEnv(args.env)
    goal = _point(args.goal, env.dim, "--goal")
    labels = args.label or []
    sources = []
    for k, checkpoint in enumerate(args.checkpoint or []):
        label = labels[k] if k < len(labels) else os.path.splitext(os.path.basename(checkpoint))[0]
        sources.append((label, load_model(checkpoint)))
    if args.fmm or not sources:
        grid = fmm_solve(speed, goal)
        sources.insert(min(1, len(sources)), ("fmm", grid))
        if env.dim == 2:
            values = time_values(grid, env, goal)
            crossings = contour_crossings(field_contours(values, env, contour_levels(values)), env)
            if crossings:
                logger.warning(f"{crossings} FMM contour segments cross occupied cells")
    out_path = ctx.run_dir.getPath("plots", f"{args.name}.svg")
    if len(sources) == 1:
        paths = [load_path_csv(p) for p in args.path or []]
        plot_field(sources[0][1], env, goal, out_path, speed, paths)
    else:
        plot_field_panels(sources, env, goal, out_path, speed)
    return [out_path]

# endregion


def buildParser() -> CliParser:
    parser = CliParser(prog=APP_NAME, description="Hierarchical neural time fields: environments, training, planning and benchmarks")
    parser.add_argument("--config", type=str, default=None, help="JSON file overriding the default configuration")
    parser.add_argument("--seed", type=int, default=None, help="Global seed (overrides the config Seed)")
    parser.add_argument("--out-dir", dest="out_dir", type=str, default="runs", help="Run directory for all artifacts")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: physical CPU count)")
    parser.add_argument("--verbose", action="store_true", default=False, help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="Generate a multi-room maze grid")
    p.add_argument("--name", default="env")
    p.add_argument("--shape", type=int, nargs="+", default=None)
    p.add_argument("--rooms", type=int, default=None)
    p.add_argument("--clutter", type=float, default=None)
    p.set_defaults(handler=cmdGenEnv)

    p = sub.add_parser("build-roadmap", help="Pack free-space balls and connect them")
    p.add_argument("--env", required=True)
    p.add_argument("--name", default="roadmap")
    p.set_defaults(handler=cmdBuildRoadmap)

    p = sub.add_parser("make-dataset", help="Generate bounded training pairs from a roadmap")
    p.add_argument("--env", required=True)
    p.add_argument("--roadmap", required=True)
    p.add_argument("--name", default="pairs")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--tightened", action="store_true", default=False)
    p.add_argument("--realized", action="store_true", default=False)
    p.add_argument("--audit", type=int, default=0, help="Audit the upper bounds of the first N pairs against FMM")
    p.set_defaults(handler=cmdMakeDataset)

    p = sub.add_parser("train", help="Train a time field on a dataset")
    p.add_argument("--env", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--name", default="model")
    p.add_argument("--mode", choices=[m.value for m in AblationMode], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--eval-pairs", dest="eval_pairs", type=int, default=0)
    p.set_defaults(handler=cmdTrain)

    p = sub.add_parser("plan", help="Plan one query")
    p.add_argument("--env", required=True)
    p.add_argument("--start", type=float, nargs="+", required=True)
    p.add_argument("--goal", type=float, nargs="+", required=True)
    p.add_argument("--method", choices=PLAN_METHODS, default="mpc")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--name", default="query")
    p.set_defaults(handler=cmdPlan)

    for name, handler, help_text in (("bench-ablation", cmdBenchAblation, "Full / PDE-only / roadmap-only ablation"),
                                     ("bench-scaling", cmdBenchScaling, "Success rate against supervised pair count"),
                                     ("bench-baselines", cmdBenchBaselines, "All planners on the shared query set")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--suite-size", dest="suite_size", type=int, default=None)
        p.set_defaults(handler=handler)
        if name == "bench-scaling":
            p.add_argument("--counts", type=int, nargs="+", default=None)
        if name == "bench-baselines":
            p.add_argument("--models-dir", dest="models_dir", default=None)
            p.add_argument("--train-missing", dest="train_missing", action="store_true", default=False)

    p = sub.add_parser("plot-field", help="SVG of the speed raster and time-field contours")
    p.add_argument("--env", required=True)
    p.add_argument("--goal", type=float, nargs="+", required=True)
    p.add_argument("--checkpoint", action="append", default=None)
    p.add_argument("--label", action="append", default=None)
    p.add_argument("--fmm", action="store_true", default=False)
    p.add_argument("--path", action="append", default=None, help="Path CSV overlay (single-panel plots)")
    p.add_argument("--name", default="field")
    p.set_defaults(handler=cmdPlotField)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = buildParser().parse_args(argv)
    setVerbose(args.verbose)
    try:
        ctx = RunContext.fromArgs(args)
        artifacts = args.handler(args, ctx)
        ctx.run_dir.recordRun(args.command, ctx.seed, ctx.config.getConfigDigest(), [str(a) for a in artifacts])
        return EXIT_OK
    except ConfigError as e:
        ErrorHandler.handleError(str(e))
        return EXIT_USAGE
    except (TimeFieldsLibError, OSError, ValueError) as e:
        ErrorHandler.handleError(f"{args.command} failed: {e}")
        return ErrorHandler.exitCodeFor(e)


if __name__ == "__main__":
    sys.exit(main())
