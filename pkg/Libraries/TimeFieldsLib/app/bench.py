# TimeFieldsLib/app/bench.py

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .exceptions import DomainError, TrainingDivergenceError
from .geomenv import GridEnv, DistanceGrid, SpeedField, build_speed_field, DEFAULT_D_MIN, DEFAULT_D_MAX
from .maze import MazeSpec, generate_maze, sample_free_point, sample_queries
from .planner import (FailureReason, MpcConfig, NeuralCostToGo, PlanResult, PrmPlanner, fmm_plan, gradient_descent_plan,
                      mpc_plan, rrt_connect)
from .reports import BenchReport, MethodRow
from .roadmap import Roadmap, build_roadmap, generate_pairs
from .timefield import ArchSpec, TimeFieldModel
from .training import (AblationMode, LossWeights, TrainConfig, TrainingSample, eval_field, precompute_samples,
                       solve_oracle_pairs, train)

logger = logging.getLogger(__name__)

HELD_OUT_GOALS = 10


@dataclass
class RoadmapConfig:
    max_nodes: int = 200
    min_radius: float = 0.01
    max_rejections_factor: int = 50
    k_neighbors: int = 15
    pair_count: int = 20000
    tightened: bool = False
    realized: bool = False
    stratification_bins: int = 10


@dataclass
class ArchConfig:
    fourier_bands_2d: int = 6
    fourier_bands_3d: int = 4
    hidden_width: int = 128
    num_blocks: int = 3
    tau_floor: float = 0.05

    def for_dim(self, dim: int) -> ArchSpec:
        return ArchSpec(dim=dim, fourier_bands=self.fourier_bands_2d if dim == 2 else self.fourier_bands_3d,
                        hidden_width=self.hidden_width, num_blocks=self.num_blocks, tau_floor=self.tau_floor)


@dataclass
class MpcSettings:
    """MPC parameters in grid cells; `for_env` converts them to world units."""
    num_samples: int = 64
    horizon: int = 10
    step_cells: float = 2
    sigma: float = 1.0
    beta_steps: float = 1.0
    max_steps: int = 500
    goal_tol_cells: float = 3
    collision_penalty: float = 100.0

    def for_env(self, env: GridEnv, rng_seed) -> MpcConfig:
        return MpcConfig.for_env(env, self.step_cells, self.goal_tol_cells, self.beta_steps, num_samples=self.num_samples,
                                 horizon=self.horizon, sigma=self.sigma, max_steps=self.max_steps, rng_seed=rng_seed,
                                 collision_penalty=self.collision_penalty)


@dataclass
class BaselineConfig:
    time_limit: float = 10.0
    rrt_step_cells: float = 2
    shortcut_passes: int = 50
    prm_nodes: int = 500
    prm_k: int = 10
    gradient_step_cells: float = 1
    gradient_max_steps: int = 2000
    loss_variants: bool = False


@dataclass
class BenchConfig:
    d_min: float = DEFAULT_D_MIN
    d_max: float = DEFAULT_D_MAX
    roadmap: RoadmapConfig = field(default_factory=RoadmapConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    mpc: MpcSettings = field(default_factory=MpcSettings)
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    queries_per_env: int = 100
    min_separation: float = 0.3
    held_out_pairs: int = 500
    seed: int = 0
    threads: int = 1

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True, default=str).encode("utf-8")).hexdigest()


@dataclass
class EnvArtifacts:
    """Everything derived from one environment that the drivers share across methods."""
    index: int
    env: GridEnv
    dist: DistanceGrid
    speed: SpeedField
    roadmap: Roadmap
    queries: list
    held_out: list
    held_out_oracle: np.ndarray
    roadmap_seconds: float = 0.0


@dataclass
class AblationResult:
    reports: list[BenchReport]
    models: dict[int, dict[AblationMode, Optional[TimeFieldModel]]]


def default_suite(size: int = 18, shape_range=(64, 128), room_range=(3, 8), rng_seed=0, dim: int = 2) -> list[MazeSpec]:
    rng = np.random.default_rng(rng_seed)
    specs = []
    for k in range(size):
        side = int(rng.integers(shape_range[0], shape_range[1] + 1))
        rooms = int(rng.integers(room_range[0], room_range[1] + 1))
        specs.append(MazeSpec(dim=dim, shape=(side,) * dim, rooms=rooms, rng_seed=int(rng.integers(0, 2**31 - 1))))
    return specs


def build_suite(specs: list[MazeSpec]) -> list[GridEnv]:
    return [generate_maze(spec) for spec in specs]


def suite_digest(envs: list[GridEnv]) -> str:
    h = hashlib.sha256()
    for env in envs:
        h.update(env.digest.encode("ascii"))
    return h.hexdigest()


def _sub_seed(cfg: BenchConfig, *keys) -> int:
    return int(np.random.SeedSequence([cfg.seed, *keys]).generate_state(1)[0])


def held_out_pairs(env: GridEnv, n: int, rng_seed, goals: int = HELD_OUT_GOALS) -> list[tuple[np.ndarray, np.ndarray]]:
    """`n` evaluation pairs sharing a few goals so each goal needs one oracle solve."""
    rng = np.random.default_rng(rng_seed)
    goal_points = [sample_free_point(env, rng) for _ in range(min(goals, max(n, 1)))]
    return [(sample_free_point(env, rng), goal_points[k % len(goal_points)]) for k in range(n)]


def prepare_environment(index: int, env: GridEnv, cfg: BenchConfig) -> EnvArtifacts:
    dist, speed = build_speed_field(env, cfg.d_min, cfg.d_max)
    rc = cfg.roadmap
    roadmap = build_roadmap(env, dist, speed, rc.max_nodes, rc.min_radius, _sub_seed(cfg, index, 1),
                            rc.k_neighbors, rc.max_rejections_factor * rc.max_nodes)
    queries = sample_queries(env, cfg.queries_per_env, cfg.min_separation, _sub_seed(cfg, index, 2))
    held_out = held_out_pairs(env, cfg.held_out_pairs, _sub_seed(cfg, index, 3))
    oracle = solve_oracle_pairs(speed, held_out) if held_out else np.zeros(0)
    logger.info(f"Environment {index}: {len(roadmap.nodes)} roadmap nodes, {len(roadmap.edges)} edges")
    return EnvArtifacts(index, env, dist, speed, roadmap, queries, held_out, oracle, roadmap.build_seconds)


def make_samples(art: EnvArtifacts, cfg: BenchConfig, count: int) -> tuple[list[TrainingSample], float]:
    started = time.perf_counter()
    rc = cfg.roadmap
    pairs = generate_pairs(art.roadmap, art.env, art.speed, count, _sub_seed(cfg, art.index, 4), rc.tightened,
                           rc.realized, rc.stratification_bins, cfg.threads)
    samples = precompute_samples(art.env, art.speed, pairs)
    return samples, time.perf_counter() - started


def train_mode(art: EnvArtifacts, cfg: BenchConfig, samples: list[TrainingSample], mode: AblationMode) -> Optional[TimeFieldModel]:
    """Trains one ablation mode; a diverged run is logged and yields None."""
    train_cfg = TrainConfig(**{**asdict(cfg.train), "ablation_mode": mode,
                               "batch_size": min(cfg.train.batch_size, len(samples)),
                               "rng_seed": _sub_seed(cfg, art.index, 5)})
    try:
        model, _ = train(art.env, art.speed, samples, cfg.arch.for_dim(art.env.dim), cfg.weights, train_cfg)
    except TrainingDivergenceError as e:
        logger.warning(f"Environment {art.index}, mode {mode.value}: {e}")
        return None
    return model


def _map(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _failed(q) -> PlanResult:
    return PlanResult(np.asarray([q]), False, 0.0, 0.0, FailureReason.STUCK)


def evaluate_mpc(art: EnvArtifacts, cfg: BenchConfig, model: Optional[TimeFieldModel]) -> list[PlanResult]:
    if model is None:
        return [_failed(qs) for qs, _ in art.queries]
    cost = NeuralCostToGo(model)

    def run(item):
        k, (qs, qg) = item
        return mpc_plan(cost, art.env, art.speed, qs, qg, cfg.mpc.for_env(art.env, _sub_seed(cfg, art.index, 6, k)))
    return _map(run, list(enumerate(art.queries)), cfg.threads)


def _field_extras(art: EnvArtifacts, model: Optional[TimeFieldModel]) -> dict:
    if model is None or not art.held_out:
        return {"field_mean_rel_error": float("nan"), "field_median_rel_error": float("nan"), "diverged": model is None}
    report = eval_field(model, art.held_out_oracle, art.held_out, art.env.spacing)
    return {"field_mean_rel_error": report.mean_rel_error, "field_median_rel_error": report.median_rel_error,
            "diverged": False}


def _merge_rows(method: str, per_env: list[list[PlanResult]], **extras) -> MethodRow:
    return MethodRow.from_results(method, [r for results in per_env for r in results], **extras)


def run_ablation(env_suite: list[GridEnv], cfg: BenchConfig) -> AblationResult:
    """Full / PDE-only / roadmap-only on identical datasets and seeds; MPC over the shared queries."""
    if not env_suite:
        raise DomainError("Ablation needs a nonempty environment suite")
    modes = [AblationMode.FULL, AblationMode.PDE_ONLY, AblationMode.ROADMAP_ONLY]
    results = {m: [] for m in modes}
    field_errors = {m: [] for m in modes}
    reports, models = [], {}
    for index, env in enumerate(env_suite):
        art = prepare_environment(index, env, cfg)
        samples, _ = make_samples(art, cfg, cfg.roadmap.pair_count)
        models[index] = {}
        rows = []
        for mode in modes:
            model = train_mode(art, cfg, samples, mode)
            models[index][mode] = model
            plans = evaluate_mpc(art, cfg, model)
            extras = _field_extras(art, model)
            results[mode].append(plans)
            field_errors[mode].append(extras["field_mean_rel_error"])
            rows.append(MethodRow.from_results(mode.value, plans, **extras))
        reports.append(BenchReport(f"ablation env {index}", rows, env.digest, cfg.digest))
    aggregate = [_merge_rows(m.value, results[m], field_mean_rel_error=float(np.nanmean(field_errors[m]))
                             if np.isfinite(field_errors[m]).any() else float("nan")) for m in modes]
    reports.insert(0, BenchReport("ablation", aggregate, suite_digest(env_suite), cfg.digest))
    return AblationResult(reports, models)


def run_scaling(env_suite: list[GridEnv], sample_counts, cfg: BenchConfig) -> list[BenchReport]:
    """One roadmap per environment, then full and PDE-only training per supervised pair count."""
    counts = list(sample_counts)
    if not counts or any(b <= a for a, b in zip(counts, counts[1:])):
        raise DomainError(f"Sample counts must be nonempty and strictly ascending, got {counts}")
    modes = [AblationMode.FULL, AblationMode.PDE_ONLY]
    results = {(m, c): [] for m in modes for c in counts}
    dataset_seconds = {c: 0.0 for c in counts}
    roadmap_seconds = 0.0
    for index, env in enumerate(env_suite):
        art = prepare_environment(index, env, cfg)
        roadmap_seconds += art.roadmap_seconds
        for count in counts:
            samples, seconds = make_samples(art, cfg, count)
            dataset_seconds[count] += seconds
            for mode in modes:
                results[(mode, count)].append(evaluate_mpc(art, cfg, train_mode(art, cfg, samples, mode)))
    rows = [_merge_rows(f"{m.value}@{c}", results[(m, c)], samples=c, dataset_seconds=dataset_seconds[c],
                        roadmap_seconds=roadmap_seconds) for c in counts for m in modes]
    report = BenchReport("scaling", rows, suite_digest(env_suite), cfg.digest)
    small, large = counts[0], counts[-1]
    report.comparisons.append({
        "full_count": small,
        "full_sr": report.row(f"full@{small}").sr_percent,
        "pde_only_count": large,
        "pde_only_sr": report.row(f"pde_only@{large}").sr_percent,
    })
    return [report]


BASELINE_METHODS = ["ours-mpc", "gradient-descent", "fmm", "rrt-connect", "prm"]
LOSS_VARIANT_MODES = [AblationMode.EIKONAL_ONLY, AblationMode.EIKONAL_CURRICULUM, AblationMode.PDE_ONLY]


def variant_method(mode: AblationMode) -> str:
    return f"mpc-{AblationMode(mode).value}"


def run_baselines(env_suite: list[GridEnv], cfg: BenchConfig, models: dict[int, TimeFieldModel]) -> BenchReport:
    """
    All planners on the shared query set; rows needing a trained model are skipped when one is missing.
    With `loss_variants`, MPC over models trained with the earlier loss configurations is added, each
    trained on the same pairs and seed per environment.
    """
    bc = cfg.baselines
    methods = BASELINE_METHODS + ([variant_method(m) for m in LOSS_VARIANT_MODES] if bc.loss_variants else [])
    results = {m: [] for m in methods}
    missing = False
    for index, env in enumerate(env_suite):
        art = prepare_environment(index, env, cfg)
        h = env.spacing
        model = models.get(index)
        if model is None:
            logger.warning(f"No trained model for environment {index}; skipping model-based rows")
            missing = True
        else:
            results["ours-mpc"].append(evaluate_mpc(art, cfg, model))
            results["gradient-descent"].append(_map(
                lambda q: gradient_descent_plan(model, env, art.speed, q[0], q[1], bc.gradient_step_cells * h,
                                                bc.gradient_max_steps, cfg.mpc.goal_tol_cells * h), art.queries, cfg.threads))
        results["fmm"].append(_map(lambda q: fmm_plan(env, art.speed, q[0], q[1]), art.queries, cfg.threads))
        results["rrt-connect"].append(_map(
            lambda item: rrt_connect(env, item[1][0], item[1][1], bc.time_limit, bc.rrt_step_cells * h,
                                     _sub_seed(cfg, index, 7, item[0]), bc.shortcut_passes),
            list(enumerate(art.queries)), cfg.threads))
        prm = PrmPlanner(env, bc.prm_nodes, bc.prm_k, _sub_seed(cfg, index, 8))
        results["prm"].append([prm.plan(qs, qg) for qs, qg in art.queries])
        if bc.loss_variants:
            samples, _ = make_samples(art, cfg, cfg.roadmap.pair_count)
            for mode in LOSS_VARIANT_MODES:
                results[variant_method(mode)].append(evaluate_mpc(art, cfg, train_mode(art, cfg, samples, mode)))
    rows = []
    for method in methods:
        if method in ("ours-mpc", "gradient-descent") and missing:
            continue
        rows.append(_merge_rows(method, results[method]))
    return BenchReport("baselines", rows, suite_digest(env_suite), cfg.digest)
