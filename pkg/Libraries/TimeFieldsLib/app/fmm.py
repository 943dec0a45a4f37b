# TimeFieldsLib/app/fmm.py

import heapq
import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .exceptions import DomainError, GeometryError, OracleError
from .geomenv import GridEnv, SpeedField, is_free, segment_free, _as_points

logger = logging.getLogger(__name__)

EXACT_BAND_CELLS = 5.0
DESCENT_GOAL_CELLS = 2.0
# sample spacing of segment quadratures, in cells
QUADRATURE_CELLS = 0.25
WEIGHT_ITERATIONS = 3
FAR, BAND, ACCEPTED = 0, 1, 2


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Arrival times from `source`; +inf on occupied and unreached cells."""
    values: np.ndarray
    source: np.ndarray
    env: GridEnv
    pop_log: np.ndarray = field(default=None, repr=False)

    @property
    def spacing(self) -> float: return self.env.spacing


@dataclass
class DescentPath:
    points: np.ndarray
    success: bool
    reason: str = "none"


@dataclass(frozen=True)
class _Simplex:
    """
    Upwind edge a..b seen from a target cell, as flat offsets: a = target + e, b = a + p with p a
    unit step along an axis where e is zero. `near`/`far` are the corners of the box spanned by e,
    without and with the p shift.
    """
    a: int
    b: int
    m: int
    near: tuple
    far: tuple
    a_pinch: tuple
    b_pinch: tuple


def _strides(shape) -> list[int]:
    return [int(np.prod(shape[k + 1:])) for k in range(len(shape))]


def _flat(offset, strides) -> int:
    return sum(int(o) * s for o, s in zip(offset, strides))


def _pinch_pairs(offset, strides) -> tuple:
    """Pairs of axis steps that, both occupied, close the diagonal step `offset`."""
    steps = [tuple(v if k == axis else 0 for k in range(len(offset))) for axis, v in enumerate(offset) if v]
    return tuple((_flat(s, strides), _flat(t, strides)) for s, t in itertools.combinations(steps, 2))


def _ring_offsets(shape) -> list[int]:
    strides = _strides(shape)
    return [_flat(o, strides) for o in itertools.product((-1, 0, 1), repeat=len(shape)) if any(o)]


def _simplices(shape) -> list[_Simplex]:
    dim, strides = len(shape), _strides(shape)
    out = []
    for e in itertools.product((-1, 0, 1), repeat=dim):
        free_axes = [k for k in range(dim) if e[k] == 0]
        if len(free_axes) in (0, dim):
            continue
        box = [_flat(c, strides) for c in itertools.product(*((0, v) if v else (0,) for v in e))]
        for axis in free_axes:
            for sign in (-1, 1):
                p = tuple(sign if k == axis else 0 for k in range(dim))
                shift = _flat(p, strides)
                eb = tuple(x + y for x, y in zip(e, p))
                out.append(_Simplex(_flat(e, strides), _flat(eb, strides), dim - len(free_axes), tuple(box),
                                    tuple(c + shift for c in box), _pinch_pairs(e, strides),
                                    _pinch_pairs(eb, strides)))
    return out


def _pinched(occ: list, f: int, pairs: tuple) -> bool:
    return any(occ[f + s] and occ[f + t] for s, t in pairs)


def _index_interpolator(values: np.ndarray) -> RegularGridInterpolator:
    axes = tuple(np.arange(n, dtype=np.float64) for n in values.shape)
    return RegularGridInterpolator(axes, values, method="linear")


def _mean_slowness(slowness: RegularGridInterpolator, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Composite trapezoid of the multilinear slowness along index-space segments, divided by their length."""
    span = ends - starts
    longest = float(np.max(np.linalg.norm(span, axis=1))) if len(span) else 0.0
    n = max(1, int(math.ceil(longest / QUADRATURE_CELLS)))
    t = np.linspace(0.0, 1.0, n + 1)
    pts = starts[None, :, :] + t[:, None, None] * span[None, :, :]
    upper = np.asarray(slowness.values.shape) - 1
    values = slowness(np.clip(pts.reshape(-1, starts.shape[1]), 0.0, upper)).reshape(n + 1, len(starts))
    return trapezoid(values, t, axis=0)


def _exact_band(env: GridEnv, slowness: RegularGridInterpolator, src: np.ndarray) -> dict:
    """Free cells within EXACT_BAND_CELLS of the source in straight line of sight, valued by the line integral of 1/S."""
    h = env.spacing
    radius = EXACT_BAND_CELLS * h
    lo = np.maximum(np.floor((src - radius) / h).astype(int), 0)
    hi = np.minimum(np.ceil((src + radius) / h).astype(int), np.asarray(env.shape) - 1)
    cells = []
    for idx in itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi))):
        if env.occupancy[idx]:
            continue
        center = np.asarray(idx) * h
        if np.linalg.norm(center - src) <= radius + 1e-12 and segment_free(env, src, center):
            cells.append(idx)
    if not cells:
        return {}
    ends = np.asarray(cells, dtype=np.float64)
    starts = np.repeat((src / h)[None, :], len(cells), axis=0)
    lengths = np.linalg.norm(ends * h - src, axis=1)
    return dict(zip(cells, (lengths * _mean_slowness(slowness, starts, ends)).tolist()))


def _interior_weight(delta: float, h: float, m: int, c0: float, c1: float) -> float:
    """Stationary point of T_a + lam*delta + h*sqrt(m + lam^2)*(c0 + c1*lam), slowness frozen per sweep."""
    lam = 0.0
    for _ in range(WEIGHT_ITERATIONS):
        r = -delta / ((c0 + c1 * lam) * h)
        if r <= 0.0:
            return 0.0
        if r * r * (m + 1) >= 1.0:
            return 1.0
        lam = r * math.sqrt(m / (1.0 - r * r))
    return lam


def _upwind_time(T: list, state: bytearray, occ: list, slow: list, f: int, h: float, simplices: list) -> float:
    """
    Semi-Lagrangian update: over every upwind edge a..b, minimise the linearly interpolated time at
    x = a + lam*(b - a) plus the segment to x charged with its trapezoid mean slowness.
    """
    best = math.inf
    w_t = slow[f]
    for s in simplices:
        a, b = f + s.a, f + s.b
        a_ok = state[a] == ACCEPTED and not _pinched(occ, f, s.a_pinch)
        b_ok = state[b] == ACCEPTED and not _pinched(occ, f, s.b_pinch)
        if not (a_ok or b_ok):
            continue
        w_near = sum(slow[f + c] for c in s.near) / len(s.near)
        w_far = sum(slow[f + c] for c in s.far) / len(s.far)
        w_a, w_b = slow[a], slow[b]
        # mean slowness on the segment to x(lam) is c0 + c1*lam
        c0 = 0.25 * w_t + 0.5 * w_near + 0.25 * w_a
        c1 = 0.25 * (w_far - w_near) + 0.25 * (w_b - w_a)
        if a_ok:
            best = min(best, T[a] + h * math.sqrt(s.m) * c0)
        if b_ok:
            best = min(best, T[b] + h * math.sqrt(s.m + 1) * (c0 + c1))
        if a_ok and b_ok:
            delta = T[b] - T[a]
            lam = _interior_weight(delta, h, s.m, c0, c1)
            if 0.0 < lam < 1.0:
                best = min(best, T[a] + lam * delta + h * math.sqrt(s.m + lam * lam) * (c0 + c1 * lam))
    return best


def fmm_solve(speed: SpeedField, source) -> TimeGrid:
    """
    Min-heap marching over the full neighbour ring (8 cells in 2D, 26 in 3D). Cells in the exact
    band start tentative and may still be lowered; finalised times are clamped to the popped time.
    """
    env = speed.env
    src = np.asarray(source, dtype=np.float64)
    if not env.in_domain(src):
        raise DomainError(f"FMM source outside the unit box: {src.tolist()}")
    if not is_free(env, src):
        raise GeometryError(f"FMM source is occupied: {src.tolist()}")
    h = env.spacing
    slowness = 1.0 / np.asarray(speed.values, dtype=np.float64)
    n = int(np.prod(env.shape))
    T = [math.inf] * n
    state = bytearray(n)
    occ = env.occupancy.ravel().tolist()
    slow = slowness.ravel().tolist()
    ring = _ring_offsets(env.shape)
    simplices = _simplices(env.shape)
    heap = []
    for idx, value in _exact_band(env, _index_interpolator(slowness), src).items():
        f = int(np.ravel_multi_index(idx, env.shape))
        T[f] = value
        state[f] = BAND
        heapq.heappush(heap, (value, f))
    pops = []
    # the outer layer is occupied, so ring neighbours of a free cell never leave the grid
    while heap:
        t, f = heapq.heappop(heap)
        if state[f] == ACCEPTED or t > T[f]:
            continue
        state[f] = ACCEPTED
        pops.append(t)
        for d in ring:
            g = f + d
            if occ[g] or state[g] == ACCEPTED:
                continue
            t_new = max(_upwind_time(T, state, occ, slow, g, h, simplices), t)
            if t_new < T[g]:
                T[g] = t_new
                state[g] = BAND
                heapq.heappush(heap, (t_new, g))
    values = np.asarray(T, dtype=np.float64).reshape(env.shape)
    values.setflags(write=False)
    logger.debug(f"FMM solve from {src.tolist()}: {len(pops)} cells finalised")
    return TimeGrid(values, src, env, np.asarray(pops))


def _corner_weights(env: GridEnv, pts: np.ndarray):
    h = env.spacing
    upper = np.asarray(env.shape) - 1
    g = np.clip(pts / h, 0.0, upper)
    base = np.minimum(np.floor(g).astype(np.int64), upper - 1)
    frac = g - base
    corners, weights = [], []
    for bits in itertools.product((0, 1), repeat=env.dim):
        bits = np.asarray(bits)
        corners.append(base + bits)
        weights.append(np.prod(np.where(bits == 1, frac, 1.0 - frac), axis=1))
    return corners, weights


def oracle_times(tg: TimeGrid, Q) -> np.ndarray:
    """Vectorised oracle_time; NaN where every weighted corner is unreached."""
    pts, _ = _as_points(Q)
    corners, weights = _corner_weights(tg.env, pts)
    num = np.zeros(len(pts))
    den = np.zeros(len(pts))
    for c, w in zip(corners, weights):
        v = tg.values[tuple(c.T)]
        ok = np.isfinite(v)
        num += np.where(ok, w * np.where(ok, v, 0.0), 0.0)
        den += np.where(ok, w, 0.0)
    out = np.full(len(pts), np.nan)
    good = den > 1e-12
    out[good] = num[good] / den[good]
    return out


def oracle_time(tg: TimeGrid, q) -> float:
    """Multilinear interpolation that ignores +inf corners."""
    q = np.asarray(q, dtype=np.float64)
    if not tg.env.in_domain(q):
        raise DomainError(f"Oracle query outside the unit box: {q.tolist()}")
    value = oracle_times(tg, q)[0]
    if not np.isfinite(value):
        raise OracleError(f"No reached corner around {q.tolist()}")
    return float(value)


def _time_gradient(tg: TimeGrid, q: np.ndarray, eps: float) -> np.ndarray:
    dim = len(q)
    stencil = np.repeat(q[None, :], 2 * dim + 1, axis=0)
    for axis in range(dim):
        stencil[2 * axis, axis] += eps
        stencil[2 * axis + 1, axis] -= eps
    stencil = np.clip(stencil, 0.0, 1.0)
    v = oracle_times(tg, stencil)
    center = v[-1]
    grad = np.zeros(dim)
    for axis in range(dim):
        vp, vm = v[2 * axis], v[2 * axis + 1]
        if np.isfinite(vp) and np.isfinite(vm):
            grad[axis] = (vp - vm) / (stencil[2 * axis, axis] - stencil[2 * axis + 1, axis])
        elif np.isfinite(vp) and np.isfinite(center):
            grad[axis] = (vp - center) / max(stencil[2 * axis, axis] - q[axis], 1e-15)
        elif np.isfinite(vm) and np.isfinite(center):
            grad[axis] = (center - vm) / max(q[axis] - stencil[2 * axis + 1, axis], 1e-15)
    return grad


def extract_path(tg: TimeGrid, start, step: float = None) -> DescentPath:
    """Steepest descent on the interpolated arrival time until within 2h of the source."""
    env = tg.env
    h = env.spacing
    step = step if step is not None else h / 2.0
    q = np.asarray(start, dtype=np.float64)
    if not is_free(env, q):
        raise GeometryError(f"Descent start is occupied: {q.tolist()}")
    points = [q.copy()]
    if not np.isfinite(oracle_times(tg, q)[0]):
        return DescentPath(np.asarray(points), False, "disconnected")
    for _ in range(int(math.ceil(10.0 / step))):
        to_source = float(np.linalg.norm(q - tg.source))
        if to_source <= DESCENT_GOAL_CELLS * h:
            if to_source > 0 and segment_free(env, q, tg.source):
                points.append(tg.source.copy())
            return DescentPath(np.asarray(points), True)
        grad = _time_gradient(tg, q, h / 4.0)
        norm = float(np.linalg.norm(grad))
        if not np.isfinite(norm) or norm < 1e-9:
            return DescentPath(np.asarray(points), False, "stuck")
        q_next = np.clip(q - step * grad / norm, 0.0, 1.0)
        if not segment_free(env, q, q_next):
            return DescentPath(np.asarray(points), False, "collision")
        points.append(q_next)
        q = q_next
    return DescentPath(np.asarray(points), False, "timeout")


# region Dense-graph oracle

def _stencil_offsets(dim: int) -> list[np.ndarray]:
    if dim == 2:
        return [np.array(o) for o in itertools.product(range(-2, 3), repeat=2)
                if o != (0, 0) and math.gcd(abs(o[0]), abs(o[1])) == 1]
    return [np.array(o) for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)]


def dense_graph_times(speed: SpeedField, source) -> np.ndarray:
    """
    Dijkstra on the dense grid graph (16-neighbour in 2D, 26-neighbour in 3D). An edge costs the
    composite trapezoid of multilinear 1/S sampled every QUADRATURE_CELLS along it; edges crossing
    an occupied cell or squeezing between two occupied cells are dropped. Seeded with the same
    exact band as fmm_solve.
    """
    env = speed.env
    h = env.spacing
    src = np.asarray(source, dtype=np.float64)
    if not is_free(env, src):
        raise GeometryError(f"Oracle source is occupied: {src.tolist()}")
    slowness = _index_interpolator(1.0 / np.asarray(speed.values, dtype=np.float64))
    shape = np.asarray(env.shape)
    n = int(np.prod(shape))
    free_idx = np.argwhere(env.free_mask)
    flat = np.ravel_multi_index(free_idx.T, env.shape)
    rows, cols, costs = [], [], []
    for off in _stencil_offsets(env.dim):
        nb = free_idx + off
        inside = np.all((nb >= 0) & (nb < shape), axis=1)
        a, b = free_idx[inside], nb[inside]
        keep = ~env.occupancy[tuple(b.T)]
        length = float(np.linalg.norm(off))
        samples = max(2, int(math.ceil(length / 0.5)) + 1)
        for t in np.linspace(0.0, 1.0, samples)[1:-1]:
            mid = np.rint(a + t * off).astype(np.int64)
            keep &= ~env.occupancy[tuple(mid.T)]
        if np.abs(off).max() == 1:
            steps = [np.where(np.arange(env.dim) == axis, off, 0) for axis in np.flatnonzero(off)]
            for s, u in itertools.combinations(steps, 2):
                keep &= ~(env.occupancy[tuple((a + s).T)] & env.occupancy[tuple((a + u).T)])
        a, b = a[keep], b[keep]
        if not len(a):
            continue
        rows.append(np.ravel_multi_index(a.T, env.shape))
        cols.append(np.ravel_multi_index(b.T, env.shape))
        costs.append(h * length * _mean_slowness(slowness, a.astype(np.float64), b.astype(np.float64)))
    # virtual source node n; +1 shift keeps zero-length seed edges in the sparse graph
    band = _exact_band(env, slowness, src)
    seeds = np.asarray([np.ravel_multi_index(idx, env.shape) for idx in band])
    rows.append(np.full(len(seeds), n))
    cols.append(seeds)
    costs.append(np.asarray(list(band.values())) + 1.0)
    graph = coo_matrix((np.concatenate(costs), (np.concatenate(rows), np.concatenate(cols))), shape=(n + 1, n + 1)).tocsr()
    dist = dijkstra(graph, directed=True, indices=n)[:n] - 1.0
    out = np.full(n, math.inf)
    out[flat] = dist[flat]
    return out.reshape(env.shape)

# endregion
