# TimeFieldsLib/app/planner.py

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .exceptions import DomainError, GeometryError
from .fmm import TimeGrid, extract_path, fmm_solve, oracle_times
from .geomenv import (GridEnv, DistanceGrid, SpeedField, compute_edt, is_free, sample_speed, segment_free,
                      segment_samples)
from .timefield import TimeFieldModel, DTYPE, evaluate_batch, input_grads

logger = logging.getLogger(__name__)

UNREACHED_COST = 1e6
FREE_SAMPLE_ATTEMPTS = 10000


class FailureReason(str, Enum):
    NONE = "none"
    TIMEOUT = "timeout"
    STUCK = "stuck"
    COLLISION = "collision"
    DISCONNECTED = "disconnected"


@dataclass
class PlanResult:
    path: np.ndarray
    success: bool
    length: float
    wall_time: float
    failure_reason: FailureReason = FailureReason.NONE
    query_time: float = 0.0
    steps: int = 0

    def to_csv(self, path) -> Path:
        return save_path_csv(self.path, path)


@dataclass(frozen=True)
class MpcConfig:
    num_samples: int = 64
    horizon: int = 10
    delta: float = 0.0
    sigma: float = 1.0
    beta: float = 1.0
    max_steps: int = 500
    goal_tol: float = 0.0
    rng_seed: int = 0
    collision_penalty: float = 100.0

    @classmethod
    def for_env(cls, env: GridEnv, step_cells: float = 2, goal_tol_cells: float = 3, beta_steps: float = 1.0,
                **kwargs) -> "MpcConfig":
        """Grid-relative config; the temperature is given in step times (delta at unit speed)."""
        delta = step_cells * env.spacing
        return cls(delta=delta, goal_tol=goal_tol_cells * env.spacing, beta=beta_steps * delta, **kwargs)

    def validate_for(self, env: GridEnv):
        h = env.spacing
        if self.delta < h - 1e-15 or self.goal_tol < 2 * h - 1e-15:
            raise DomainError(f"MPC needs delta >= h and goal_tol >= 2h (h={h}, delta={self.delta}, goal_tol={self.goal_tol})")
        if self.beta <= 0 or self.num_samples < 1 or self.horizon < 1:
            raise DomainError(f"Invalid MPC sampling parameters: {self}")


@dataclass
class PathMetrics:
    length: float
    min_clearance: float
    collision_free: bool


def path_length(path: np.ndarray) -> float:
    path = np.asarray(path, dtype=np.float64)
    if len(path) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())


def path_collision_free(env: GridEnv, path: np.ndarray) -> bool:
    path = np.asarray(path, dtype=np.float64)
    if len(path) == 1:
        return bool(is_free(env, path[0]))
    return all(segment_free(env, a, b) for a, b in zip(path[:-1], path[1:]))


def path_metrics(env: GridEnv, path, dist: DistanceGrid = None) -> PathMetrics:
    path = np.asarray(path, dtype=np.float64)
    if len(path) == 0:
        raise DomainError("Path metrics need at least one point")
    dist = dist if dist is not None else compute_edt(env)
    if len(path) == 1:
        samples = path
    else:
        samples = np.concatenate([segment_samples(a, b, env.spacing) for a, b in zip(path[:-1], path[1:])])
    return PathMetrics(path_length(path), float(dist.sample(samples).min()), path_collision_free(env, path))


def _result(path, success: bool, reason: FailureReason, started: float, env: GridEnv = None,
            query_time: float = 0.0, steps: int = 0) -> PlanResult:
    path = np.asarray(path, dtype=np.float64)
    if success and env is not None and not path_collision_free(env, path):
        success, reason = False, FailureReason.COLLISION
    return PlanResult(path, success, path_length(path), time.perf_counter() - started,
                      FailureReason.NONE if success else reason, query_time, steps)


def _endpoints_free(env: GridEnv, qs, qg) -> bool:
    return bool(env.in_domain(qs) and env.in_domain(qg) and is_free(env, qs) and is_free(env, qg))


# region Cost-to-go adapters

class NeuralCostToGo:
    """T_theta(q, qg) over a batch of q."""
    batched = True

    def __init__(self, model: TimeFieldModel):
        self.model = model

    def __call__(self, q, qg):
        Q = np.atleast_2d(np.asarray(q, dtype=np.float64))
        G = np.broadcast_to(np.asarray(qg, dtype=np.float64), Q.shape)
        values = evaluate_batch(self.model, Q, G)
        return values if np.ndim(q) == 2 else float(values[0])


class OracleCostToGo:
    """FMM arrival time towards qg, solved once per goal and cached."""
    batched = True

    def __init__(self, speed: SpeedField):
        self.speed = speed
        self._grids: dict[tuple, TimeGrid] = {}

    def grid_for(self, qg) -> TimeGrid:
        key = tuple(np.asarray(qg, dtype=np.float64))
        if key not in self._grids:
            self._grids[key] = fmm_solve(self.speed, np.asarray(key))
        return self._grids[key]

    def __call__(self, q, qg):
        values = oracle_times(self.grid_for(qg), np.atleast_2d(np.asarray(q, dtype=np.float64)))
        values = np.where(np.isfinite(values), values, UNREACHED_COST)
        return values if np.ndim(q) == 2 else float(values[0])


def _evaluate_cost(cost_to_go: Callable, Q: np.ndarray, qg: np.ndarray) -> np.ndarray:
    if getattr(cost_to_go, "batched", False):
        return np.asarray(cost_to_go(Q, qg), dtype=np.float64)
    return np.asarray([cost_to_go(q, qg) for q in Q], dtype=np.float64)

# endregion


def _clip_norm(actions: np.ndarray, limit: float) -> np.ndarray:
    norms = np.linalg.norm(actions, axis=-1, keepdims=True)
    return actions * np.minimum(1.0, limit / np.maximum(norms, 1e-15))


def softmax_weights(cost: np.ndarray, beta: float) -> np.ndarray:
    """exp(-cost/beta) normalized to sum to one, taken relative to the cheapest sequence."""
    weights = np.exp(-(cost - cost.min()) / beta)
    return weights / weights.sum()


def mpc_plan(cost_to_go: Callable, env: GridEnv, speed: SpeedField, qs, qg, cfg: MpcConfig) -> PlanResult:
    """
    Receding-horizon path-integral control. Rollout cost is the running travel time delta/S plus a
    collision penalty, plus the cost-to-go at the horizon; the nominal sequence becomes the
    softmax-weighted average of the sampled sequences, with weights exp(-cost/beta).
    """
    started = time.perf_counter()
    qs = np.asarray(qs, dtype=np.float64)
    qg = np.asarray(qg, dtype=np.float64)
    cfg.validate_for(env)
    if not _endpoints_free(env, qs, qg):
        return _result([qs], False, FailureReason.COLLISION, started)
    rng = np.random.default_rng(cfg.rng_seed)
    K, H, dim = cfg.num_samples, cfg.horizon, env.dim
    nominal = np.zeros((H, dim))
    q = qs.copy()
    path = [q.copy()]
    query_time = 0.0
    for step in range(cfg.max_steps):
        if np.linalg.norm(q - qg) <= cfg.goal_tol:
            return _result(path, True, FailureReason.NONE, started, env, query_time, step)
        noise = rng.normal(size=(K, H, dim)) * cfg.sigma * cfg.delta
        actions = _clip_norm(nominal[None, :, :] + noise, cfg.delta)
        rollouts = np.clip(q + np.cumsum(actions, axis=1), 0.0, 1.0)
        flat = rollouts.reshape(-1, dim)
        running = cfg.delta / np.maximum(sample_speed(speed, flat), speed.s_min)
        running = running + cfg.collision_penalty * (~is_free(env, flat))
        query_started = time.perf_counter()
        terminal = _evaluate_cost(cost_to_go, rollouts[:, -1, :], qg)
        query_time += time.perf_counter() - query_started
        cost = running.reshape(K, H).sum(axis=1) + terminal
        weights = softmax_weights(cost, cfg.beta)
        nominal = _clip_norm(np.tensordot(weights, actions, axes=1), cfg.delta)
        q_next = np.clip(q + nominal[0], 0.0, 1.0)
        if segment_free(env, q, q_next):
            q = q_next
            path.append(q.copy())
        nominal = np.concatenate([nominal[1:], nominal[-1:]], axis=0)
    if np.linalg.norm(q - qg) <= cfg.goal_tol:
        return _result(path, True, FailureReason.NONE, started, env, query_time, cfg.max_steps)
    return _result(path, False, FailureReason.TIMEOUT, started, query_time=query_time, steps=cfg.max_steps)


def _descend(point: np.ndarray, grad: torch.Tensor, speed: SpeedField, env: GridEnv, step: float) -> Optional[np.ndarray]:
    grad = grad.detach().numpy()
    norm = float(np.linalg.norm(grad))
    if not np.isfinite(norm) or norm < 1e-12:
        return None
    nxt = np.clip(point - grad / norm * step * sample_speed(speed, point), 0.0, 1.0)
    return nxt if segment_free(env, point, nxt) else None


def gradient_descent_plan(model: TimeFieldModel, env: GridEnv, speed: SpeedField, qs, qg, step: float,
                          max_steps: int, goal_tol: float) -> PlanResult:
    """
    Moves the two ends alternately down their own gradient of T, scaled by the local speed, until they
    meet. The goal end always steps along the gradient taken after the start end has moved.
    """
    started = time.perf_counter()
    a = np.array(qs, dtype=np.float64)
    b = np.array(qg, dtype=np.float64)
    if not _endpoints_free(env, a, b):
        return _result([a], False, FailureReason.COLLISION, started)
    forward_part, backward_part = [a.copy()], [b.copy()]
    query_time = 0.0
    for iteration in range(max_steps):
        if np.linalg.norm(a - b) <= goal_tol and segment_free(env, a, b):
            return _result(forward_part + backward_part[::-1], True, FailureReason.NONE, started, env, query_time, iteration)
        moved = False
        for end, point, part in ((1, a, forward_part), (2, b, backward_part)):
            query_started = time.perf_counter()
            grads = input_grads(model, torch.as_tensor(a, dtype=DTYPE), torch.as_tensor(b, dtype=DTYPE))
            query_time += time.perf_counter() - query_started
            nxt = _descend(point, grads[end], speed, env, step)
            if nxt is not None:
                point[:] = nxt
                part.append(nxt.copy())
                moved = True
        if not moved:
            return _result(forward_part + backward_part[::-1], False, FailureReason.STUCK, started,
                           query_time=query_time, steps=iteration)
    return _result(forward_part + backward_part[::-1], False, FailureReason.STUCK, started,
                   query_time=query_time, steps=max_steps)


# region Baselines

def _sample_free(env: GridEnv, rng: np.random.Generator) -> Optional[np.ndarray]:
    for _ in range(FREE_SAMPLE_ATTEMPTS):
        q = rng.uniform(0.0, 1.0, size=env.dim) * env.extent
        if is_free(env, q):
            return q
    return None


class _Tree:
    def __init__(self, root: np.ndarray):
        self.points = [root]
        self.parents = [-1]

    def nearest(self, q: np.ndarray) -> int:
        return int(np.argmin(np.linalg.norm(np.asarray(self.points) - q, axis=1)))

    def add(self, q: np.ndarray, parent: int) -> int:
        self.points.append(q)
        self.parents.append(parent)
        return len(self.points) - 1

    def branch(self, index: int) -> list[np.ndarray]:
        out = []
        while index >= 0:
            out.append(self.points[index])
            index = self.parents[index]
        return out


TRAPPED, ADVANCED, REACHED = 0, 1, 2


def _extend(env: GridEnv, tree: _Tree, target: np.ndarray, step: float) -> tuple[int, int]:
    near = tree.nearest(target)
    origin = tree.points[near]
    gap = float(np.linalg.norm(target - origin))
    new = target.copy() if gap <= step else origin + (target - origin) * (step / gap)
    if not segment_free(env, origin, new):
        return TRAPPED, near
    index = tree.add(new, near)
    return (REACHED if gap <= step else ADVANCED), index


def _connect(env: GridEnv, tree: _Tree, target: np.ndarray, step: float, deadline: float) -> tuple[int, int]:
    while True:
        status, index = _extend(env, tree, target, step)
        if status != ADVANCED or time.perf_counter() > deadline:
            return status, index


def shortcut(env: GridEnv, path: list[np.ndarray], passes: int, rng: np.random.Generator) -> list[np.ndarray]:
    path = list(path)
    for _ in range(passes):
        if len(path) < 3:
            break
        i = int(rng.integers(0, len(path) - 2))
        j = int(rng.integers(i + 2, len(path)))
        if segment_free(env, path[i], path[j]):
            path = path[:i + 1] + path[j:]
    return path


def rrt_connect(env: GridEnv, qs, qg, max_time_s: float, step: float, rng_seed, shortcut_passes: int = 50) -> PlanResult:
    started = time.perf_counter()
    deadline = started + max_time_s
    qs = np.asarray(qs, dtype=np.float64)
    qg = np.asarray(qg, dtype=np.float64)
    if not _endpoints_free(env, qs, qg):
        return _result([qs], False, FailureReason.COLLISION, started)
    rng = np.random.default_rng(rng_seed)
    tree_a, tree_b = _Tree(qs), _Tree(qg)
    start_tree = tree_a
    iterations = 0
    while time.perf_counter() < deadline:
        iterations += 1
        q_rand = _sample_free(env, rng)
        if q_rand is None:
            break
        status, new_index = _extend(env, tree_a, q_rand, step)
        if status != TRAPPED:
            q_new = tree_a.points[new_index]
            status_b, index_b = _connect(env, tree_b, q_new, step, deadline)
            if status_b == REACHED:
                branch_a = tree_a.branch(new_index)[::-1]
                branch_b = tree_b.branch(index_b)[1:]
                path = branch_a + branch_b
                if tree_a is not start_tree:
                    path = path[::-1]
                path = shortcut(env, path, shortcut_passes, rng)
                logger.debug(f"RRT-Connect joined trees after {iterations} iterations")
                return _result(path, True, FailureReason.NONE, started, env, steps=iterations)
        tree_a, tree_b = tree_b, tree_a
    return _result([qs], False, FailureReason.TIMEOUT, started, steps=iterations)


class PrmPlanner:
    """Eager PRM; the sampled graph is built once and reused for every query in the environment."""

    def __init__(self, env: GridEnv, num_nodes: int, k: int, rng_seed):
        self.env = env
        self.k = k
        rng = np.random.default_rng(rng_seed)
        samples = [_sample_free(env, rng) for _ in range(num_nodes)]
        self.nodes = np.asarray([s for s in samples if s is not None], dtype=np.float64).reshape(-1, env.dim)
        self.tree = cKDTree(self.nodes) if len(self.nodes) else None
        rows, cols, weights = [], [], []
        if len(self.nodes) > 1:
            _, nbrs = self.tree.query(self.nodes, k=min(k + 1, len(self.nodes)))
            pairs = {(min(i, int(j)), max(i, int(j))) for i in range(len(self.nodes)) for j in np.atleast_1d(nbrs[i]) if int(j) != i}
            for i, j in sorted(pairs):
                if segment_free(env, self.nodes[i], self.nodes[j]):
                    rows.append(i)
                    cols.append(j)
                    weights.append(float(np.linalg.norm(self.nodes[i] - self.nodes[j])))
        self.edges = (rows, cols, weights)
        logger.debug(f"PRM graph: {len(self.nodes)} nodes, {len(rows)} edges")

    def _attach(self, q: np.ndarray, index: int, rows, cols, weights):
        if self.tree is None:
            return
        _, nbrs = self.tree.query(q, k=min(self.k, len(self.nodes)))
        for j in np.atleast_1d(nbrs):
            j = int(j)
            if segment_free(self.env, q, self.nodes[j]):
                rows.append(index)
                cols.append(j)
                weights.append(float(np.linalg.norm(q - self.nodes[j])))

    def plan(self, qs, qg) -> PlanResult:
        started = time.perf_counter()
        qs = np.asarray(qs, dtype=np.float64)
        qg = np.asarray(qg, dtype=np.float64)
        if not _endpoints_free(self.env, qs, qg):
            return _result([qs], False, FailureReason.COLLISION, started)
        if segment_free(self.env, qs, qg):
            return _result([qs, qg], True, FailureReason.NONE, started, self.env)
        n = len(self.nodes)
        rows, cols, weights = (list(v) for v in self.edges)
        self._attach(qs, n, rows, cols, weights)
        self._attach(qg, n + 1, rows, cols, weights)
        graph = coo_matrix((weights, (rows, cols)), shape=(n + 2, n + 2)).tocsr()
        dist, pred = dijkstra(graph, directed=False, indices=n, return_predecessors=True)
        if not np.isfinite(dist[n + 1]):
            return _result([qs], False, FailureReason.DISCONNECTED, started)
        points = np.vstack([self.nodes, qs, qg])
        order, index = [], n + 1
        while index >= 0:
            order.append(index)
            index = pred[index]
        return _result(points[order[::-1]], True, FailureReason.NONE, started, self.env)


def prm_plan(env: GridEnv, qs, qg, num_nodes: int, k: int, rng_seed) -> PlanResult:
    return PrmPlanner(env, num_nodes, k, rng_seed).plan(qs, qg)


def fmm_plan(env: GridEnv, speed: SpeedField, qs, qg) -> PlanResult:
    """FMM solve from the goal then descent from the start; wall time includes the solve."""
    started = time.perf_counter()
    qs = np.asarray(qs, dtype=np.float64)
    qg = np.asarray(qg, dtype=np.float64)
    if not is_free(env, qs):
        raise GeometryError(f"FMM planning start is occupied: {qs.tolist()}")
    grid = fmm_solve(speed, qg)
    descent = extract_path(grid, qs)
    return _result(descent.points, descent.success, FailureReason(descent.reason), started, env)

# endregion


def save_path_csv(path_points, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(path_points, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"q{k}" for k in range(points.shape[1] if points.ndim == 2 else 0)])
        for p in points:
            writer.writerow([repr(float(v)) for v in p])
    return path


def load_path_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))[1:]
    return np.asarray([[float(v) for v in row] for row in rows], dtype=np.float64)
