# TimeFieldsLib/app/roadmap.py

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree

from .exceptions import GeometryError, RoadmapError, DomainError
from .fmm import fmm_solve, oracle_times
from .geomenv import (GridEnv, DistanceGrid, SpeedField, clearances, is_free, sample_speed,
                      segment_free, segment_samples)

logger = logging.getLogger(__name__)

DEFAULT_K_NEIGHBORS = 15
ALL_PAIRS_NODE_LIMIT = 500
REJECTION_FACTOR = 50
STRATIFICATION_BINS = 10
PAIR_CHUNK = 1000
PERTURB_ATTEMPTS = 50


@dataclass(frozen=True)
class RoadmapNode:
    center: tuple
    radius: float


@dataclass(frozen=True)
class RoadmapEdge:
    i: int
    j: int
    length: float
    travel_time: float


@dataclass
class TrainingPair:
    qs: np.ndarray
    qg: np.ndarray
    src_node: int
    dst_node: int
    t_lb: float
    t_ub: float


@dataclass(eq=False)
class Roadmap:
    nodes: list[RoadmapNode]
    edges: list[RoadmapEdge] = field(default_factory=list)
    build_seconds: float = 0.0

    @cached_property
    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in self.nodes]
        for e in self.edges:
            adj[e.i].append(e.j)
            adj[e.j].append(e.i)
        return adj

    @property
    def centers(self) -> np.ndarray: return np.asarray([n.center for n in self.nodes], dtype=np.float64)
    @property
    def radii(self) -> np.ndarray: return np.asarray([n.radius for n in self.nodes], dtype=np.float64)

    def graph(self):
        n = len(self.nodes)
        if not self.edges:
            return coo_matrix((n, n)).tocsr()
        i = np.asarray([e.i for e in self.edges])
        j = np.asarray([e.j for e in self.edges])
        w = np.asarray([e.travel_time for e in self.edges])
        return coo_matrix((w, (i, j)), shape=(n, n)).tocsr()

    @cached_property
    def all_pairs_times(self) -> np.ndarray:
        """Dense node-to-node shortest travel times, computed once on demand."""
        return dijkstra(self.graph(), directed=False)

    def to_dict(self) -> dict:
        return {
            "nodes": [{"center": list(n.center), "radius": n.radius} for n in self.nodes],
            "edges": [asdict(e) for e in self.edges],
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=4), encoding="utf-8")
        return path

    @classmethod
    def from_string(cls, content: str) -> "Roadmap":
        data = json.loads(content)
        nodes = [RoadmapNode(tuple(float(c) for c in n["center"]), float(n["radius"])) for n in data["nodes"]]
        edges = [RoadmapEdge(int(e["i"]), int(e["j"]), float(e["length"]), float(e["travel_time"])) for e in data["edges"]]
        return cls(nodes, edges)

    @classmethod
    def from_file(cls, path) -> "Roadmap":
        return cls.from_string(Path(path).read_text(encoding="utf-8"))


def _uniform_in_box(rng: np.random.Generator, env: GridEnv, n: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(n, env.dim)) * env.extent


def pack_spheres(env: GridEnv, dist: DistanceGrid, max_nodes: int, min_radius: float, rng_seed,
                 max_rejections: int = None) -> list[RoadmapNode]:
    """
    Sphere-packing node placement: a uniform free sample is accepted iff it lies outside every
    accepted ball and its clearance is at least `min_radius`; the ball radius is that clearance.
    """
    if not env.free_mask.any():
        raise GeometryError("Environment has no free cells")
    max_rejections = max_rejections if max_rejections is not None else REJECTION_FACTOR * max_nodes
    rng = np.random.default_rng(rng_seed)
    centers = np.zeros((0, env.dim))
    radii = np.zeros(0)
    rejections = 0
    while len(radii) < max_nodes and rejections < max_rejections:
        q = _uniform_in_box(rng, env, 1)[0]
        accept = False
        if is_free(env, q):
            outside = len(radii) == 0 or bool(np.all(np.linalg.norm(centers - q, axis=1) > radii))
            if outside:
                r = float(clearances(env, dist, q[None, :])[0])
                accept = r >= min_radius and r > 0
        if accept:
            centers = np.vstack([centers, q])
            radii = np.append(radii, r)
            rejections = 0
        else:
            rejections += 1
    if len(radii) == 0:
        raise RoadmapError(f"Sphere packing accepted no node (min_radius={min_radius})")
    logger.info(f"Sphere packing accepted {len(radii)} nodes ({rejections} trailing rejections)")
    return [RoadmapNode(tuple(float(c) for c in center), float(r)) for center, r in zip(centers, radii)]


def edge_time(env: GridEnv, speed: SpeedField, qa, qb) -> float:
    """Trapezoid integral of 1/S along the segment with sample spacing at most h/2."""
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    samples = segment_samples(qa, qb, env.spacing)
    if not np.all(is_free(env, samples)):
        raise GeometryError(f"Edge {qa.tolist()} -> {qb.tolist()} collides")
    length = float(np.linalg.norm(qb - qa))
    if length == 0.0:
        return 0.0
    s = np.linalg.norm(samples - samples[0], axis=1)
    value = float(trapezoid(1.0 / sample_speed(speed, samples), s))
    return max(value, length)


def connect(nodes: list[RoadmapNode], env: GridEnv, speed: SpeedField, k_neighbors: int = DEFAULT_K_NEIGHBORS) -> list[RoadmapEdge]:
    """k-NN straight-line connection (k_neighbors = 0 tries all pairs)."""
    n = len(nodes)
    if n < 2:
        raise RoadmapError("Connecting a roadmap needs at least two nodes")
    centers = np.asarray([nd.center for nd in nodes], dtype=np.float64)
    if k_neighbors == 0:
        if n > ALL_PAIRS_NODE_LIMIT:
            logger.warning(f"All-pairs connection on {n} nodes (limit {ALL_PAIRS_NODE_LIMIT})")
        candidates = {(i, j) for i in range(n) for j in range(i + 1, n)}
    else:
        tree = cKDTree(centers)
        _, nbrs = tree.query(centers, k=min(k_neighbors + 1, n))
        candidates = {(min(i, int(j)), max(i, int(j))) for i in range(n) for j in np.atleast_1d(nbrs[i]) if int(j) != i}
    edges = []
    for i, j in sorted(candidates):
        if segment_free(env, centers[i], centers[j]):
            edges.append(RoadmapEdge(i, j, float(np.linalg.norm(centers[j] - centers[i])),
                                     edge_time(env, speed, centers[i], centers[j])))
    logger.info(f"Roadmap connection kept {len(edges)} of {len(candidates)} candidate edges")
    return edges


def build_roadmap(env: GridEnv, dist: DistanceGrid, speed: SpeedField, max_nodes: int, min_radius: float,
                  rng_seed, k_neighbors: int = DEFAULT_K_NEIGHBORS, max_rejections: int = None) -> Roadmap:
    started = time.perf_counter()
    nodes = pack_spheres(env, dist, max_nodes, min_radius, rng_seed, max_rejections)
    edges = connect(nodes, env, speed, k_neighbors) if len(nodes) >= 2 else []
    return Roadmap(nodes, edges, time.perf_counter() - started)


def shortest_times(roadmap: Roadmap, src_node: int) -> np.ndarray:
    if not 0 <= src_node < len(roadmap.nodes):
        raise RoadmapError(f"Node index {src_node} out of range")
    return dijkstra(roadmap.graph(), directed=False, indices=src_node)


def min_ball_speed(speed: SpeedField, center, radius: float) -> float:
    """Lowest speed any interpolant corner inside the ball can contribute."""
    env = speed.env
    h = env.spacing
    center = np.asarray(center, dtype=np.float64)
    reach = radius + h * math.sqrt(env.dim)
    lo = np.maximum(np.floor((center - reach) / h).astype(int), 0)
    hi = np.minimum(np.ceil((center + reach) / h).astype(int), np.asarray(env.shape) - 1)
    block = tuple(slice(a, b + 1) for a, b in zip(lo, hi))
    coords = np.stack(np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(lo, hi)), indexing="ij"), axis=-1) * h
    within = np.linalg.norm(coords - center, axis=-1) <= reach
    covered = speed.values[block][within]
    return float(min(covered.min() if covered.size else 1.0, sample_speed(speed, center)))


def _perturb(rng: np.random.Generator, env: GridEnv, center: np.ndarray, radius: float) -> np.ndarray:
    for _ in range(PERTURB_ATTEMPTS):
        direction = rng.normal(size=env.dim)
        direction /= max(np.linalg.norm(direction), 1e-12)
        q = center + direction * radius * rng.uniform() ** (1.0 / env.dim)
        if is_free(env, q) and env.in_domain(q):
            return q
    return center.copy()


def _stratified_pairs(rng: np.random.Generator, times: np.ndarray, count: int, bins: int) -> np.ndarray:
    finite = np.argwhere(np.isfinite(times))
    values = times[tuple(finite.T)]
    top = float(values.max())
    if top <= 0:
        which = np.zeros(len(values), dtype=int)
    else:
        which = np.minimum((values / top * bins).astype(int), bins - 1)
    members = [np.flatnonzero(which == b) for b in range(bins)]
    members = [m for m in members if len(m)]
    chosen = np.empty((count, 2), dtype=np.int64)
    for k in range(count):
        group = members[rng.integers(len(members))]
        chosen[k] = finite[group[rng.integers(len(group))]]
    return chosen


def _pairs_chunk(roadmap: Roadmap, env: GridEnv, speed: SpeedField, count: int, seed_seq, tightened: bool,
                 realized: bool, bins: int, sigmas: np.ndarray) -> list[TrainingPair]:
    rng = np.random.default_rng(seed_seq)
    times = roadmap.all_pairs_times
    centers, radii = roadmap.centers, roadmap.radii
    pairs = []
    for i, j in _stratified_pairs(rng, times, count, bins):
        qs = _perturb(rng, env, centers[i], radii[i])
        qg = _perturb(rng, env, centers[j], radii[j])
        d = float(times[i, j])
        ri, rj = radii[i], radii[j]
        if realized:
            ri, rj = float(np.linalg.norm(qs - centers[i])), float(np.linalg.norm(qg - centers[j]))
        t_ub = d + ri + rj
        t_lb = max(0.0, d - ri - rj)
        if tightened:
            t_ub = d + ri / sigmas[i] + rj / sigmas[j]
            t_lb = max(t_lb, float(np.linalg.norm(qs - qg)))
        pairs.append(TrainingPair(qs, qg, int(i), int(j), float(t_lb), float(t_ub)))
    return pairs


def generate_pairs(roadmap: Roadmap, env: GridEnv, speed: SpeedField, count: int, rng_seed, tightened: bool = False,
                   realized: bool = False, bins: int = STRATIFICATION_BINS, workers: int = 1) -> list[TrainingPair]:
    """
    Node pairs stratified by graph time, perturbed inside their balls, with roadmap time bounds.
    Work is split into fixed-size chunks with spawned seeds, so the output does not depend on `workers`.
    """
    if count <= 0:
        raise DomainError(f"Pair count must be positive, got {count}")
    if not np.isfinite(roadmap.all_pairs_times).any():
        raise RoadmapError("Roadmap has no node pair with a finite graph time")
    sigmas = np.asarray([min_ball_speed(speed, n.center, n.radius) for n in roadmap.nodes]) if tightened else None
    sizes = [PAIR_CHUNK] * (count // PAIR_CHUNK) + ([count % PAIR_CHUNK] if count % PAIR_CHUNK else [])
    seeds = np.random.SeedSequence(rng_seed).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        chunks = list(pool.map(lambda args: _pairs_chunk(roadmap, env, speed, args[0], args[1], tightened, realized, bins, sigmas),
                               zip(sizes, seeds)))
    pairs = [p for chunk in chunks for p in chunk]
    logger.info(f"Generated {len(pairs)} training pairs ({'tightened' if tightened else 'literal'} bounds)")
    return pairs


# region Pair files

def pairs_to_csv(pairs: list[TrainingPair], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = len(pairs[0].qs) if pairs else 2
    header = [f"qs{k}" for k in range(dim)] + [f"qg{k}" for k in range(dim)] + ["t_lb", "t_ub", "src_node", "dst_node"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for p in pairs:
            writer.writerow([repr(float(v)) for v in p.qs] + [repr(float(v)) for v in p.qg]
                            + [repr(p.t_lb), repr(p.t_ub), p.src_node, p.dst_node])
    return path


def pairs_from_csv(path) -> list[TrainingPair]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        dim = sum(1 for h in header if h.startswith("qs"))
        pairs = []
        for row in reader:
            values = [float(v) for v in row[:2 * dim + 2]]
            pairs.append(TrainingPair(np.asarray(values[:dim]), np.asarray(values[dim:2 * dim]),
                                      int(row[2 * dim + 2]), int(row[2 * dim + 3]), values[2 * dim], values[2 * dim + 1]))
    return pairs

# endregion


@dataclass
class BoundAudit:
    count: int
    violations: int
    max_excess: float
    tolerance: float

    @property
    def violation_rate(self) -> float: return self.violations / self.count if self.count else 0.0


def audit_bounds(pairs: list[TrainingPair], speed: SpeedField, tolerance: float = None) -> BoundAudit:
    """
    Checks each pair's upper bound against the FMM arrival time from its goal. A pair violates its
    bound when the oracle time exceeds t_ub + tolerance (default 4h / S_min) or the start is unreached.
    """
    env = speed.env
    tolerance = tolerance if tolerance is not None else 4.0 * env.spacing / speed.s_min
    violations, max_excess = 0, -math.inf
    for pair in pairs:
        oracle = float(oracle_times(fmm_solve(speed, pair.qg), pair.qs)[0])
        excess = oracle - pair.t_ub if np.isfinite(oracle) else math.inf
        max_excess = max(max_excess, excess)
        if excess > tolerance:
            violations += 1
    if violations:
        logger.warning(f"{violations} of {len(pairs)} pairs exceed their upper bound by more than {tolerance:.4g}")
    return BoundAudit(len(pairs), violations, max_excess, tolerance)
