# TimeFieldsLib/app/maze.py

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .exceptions import DomainError, GeometryError, MazeSpecError
from .geomenv import GridEnv, is_free

logger = logging.getLogger(__name__)

MAX_REGENERATIONS = 50
QUERY_ATTEMPTS_PER_PAIR = 1000
CLUTTER_BOX_CELLS = (2, 5)


@dataclass(frozen=True)
class MazeSpec:
    dim: int = 2
    shape: tuple = (64, 64)
    rooms: int = 3
    door_width_cells: int = 4
    wall_thickness_cells: int = 1
    clutter_density: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        if self.dim not in (2, 3) or len(self.shape) != self.dim:
            raise MazeSpecError(f"Shape {self.shape} does not match dim {self.dim}")
        if min(self.shape) < 8:
            raise MazeSpecError(f"Every axis needs at least 8 cells, got {self.shape}")
        if self.rooms < 1 or self.door_width_cells < 2 or self.wall_thickness_cells < 1:
            raise MazeSpecError(f"Invalid room layout: rooms={self.rooms}, door={self.door_width_cells}, "
                                f"wall={self.wall_thickness_cells}")
        if not 0.0 <= self.clutter_density <= 0.2:
            raise MazeSpecError(f"clutter_density must lie in [0, 0.2], got {self.clutter_density}")

    @property
    def min_room_cells(self) -> int: return self.door_width_cells + 2


def _split_room(occ: np.ndarray, region: list, spec: MazeSpec, rng: np.random.Generator):
    """Puts one wall with a door across `region`; returns the two sub-regions or None if it does not fit."""
    sizes = [hi - lo for lo, hi in region]
    t, m = spec.wall_thickness_cells, spec.min_room_cells
    for axis in np.argsort(sizes)[::-1]:
        lo, hi = region[axis]
        if hi - lo < 2 * m + t or any(sizes[a] < spec.door_width_cells for a in range(len(region)) if a != axis):
            continue
        pos = int(rng.integers(lo + m, hi - m - t + 1))
        wall = [slice(a, b) for a, b in region]
        wall[axis] = slice(pos, pos + t)
        occ[tuple(wall)] = True
        door = list(wall)
        for other, (a, b) in enumerate(region):
            if other != axis:
                start = int(rng.integers(a, b - spec.door_width_cells + 1))
                door[other] = slice(start, start + spec.door_width_cells)
        occ[tuple(door)] = False
        first, second = list(region), list(region)
        first[axis] = (lo, pos)
        second[axis] = (pos + t, hi)
        return first, second
    return None


def _add_clutter(occ: np.ndarray, spec: MazeSpec, rng: np.random.Generator):
    interior = tuple(slice(1, s - 1) for s in spec.shape)
    target = spec.clutter_density * occ[interior].size
    placed = 0
    while placed < target:
        size = rng.integers(CLUTTER_BOX_CELLS[0], CLUTTER_BOX_CELLS[1] + 1, size=spec.dim)
        corner = [int(rng.integers(1, s - 1 - k)) for s, k in zip(spec.shape, size)]
        box = tuple(slice(c, c + k) for c, k in zip(corner, size))
        placed += int((~occ[box]).sum())
        occ[box] = True


def free_components(env: GridEnv) -> int:
    structure = ndimage.generate_binary_structure(env.dim, 1)
    _, count = ndimage.label(env.free_mask, structure=structure)
    return int(count)


def _generate_once(spec: MazeSpec, seed) -> GridEnv:
    rng = np.random.default_rng(seed)
    occ = np.zeros(spec.shape, dtype=bool)
    regions = [[(1, s - 1) for s in spec.shape]]
    while len(regions) < spec.rooms:
        regions.sort(key=lambda r: -int(np.prod([hi - lo for lo, hi in r])))
        for k, region in enumerate(regions):
            halves = _split_room(occ, region, spec, rng)
            if halves is not None:
                regions[k:k + 1] = list(halves)
                break
        else:
            raise MazeSpecError(f"{spec.rooms} rooms do not fit in shape {spec.shape} "
                                f"(stopped at {len(regions)})")
    if spec.clutter_density > 0:
        _add_clutter(occ, spec, rng)
    return GridEnv(occ, 1.0 / (max(spec.shape) - 1))


def generate_maze(spec: MazeSpec) -> GridEnv:
    """Recursive-division rooms with doors plus optional box clutter, regenerated until free space is one component."""
    for attempt in range(MAX_REGENERATIONS):
        seed = np.random.SeedSequence([spec.rng_seed, attempt])
        env = _generate_once(spec, seed)
        if free_components(env) == 1:
            if attempt:
                logger.debug(f"Maze seed {spec.rng_seed} connected after {attempt} regenerations")
            return env
    raise MazeSpecError(f"No connected maze for {spec} after {MAX_REGENERATIONS} attempts")


def sample_free_point(env: GridEnv, rng: np.random.Generator) -> np.ndarray:
    while True:
        q = rng.uniform(0.0, 1.0, size=env.dim) * env.extent
        if is_free(env, q):
            return q


def sample_queries(env: GridEnv, n: int, min_separation: float, rng_seed) -> list[tuple[np.ndarray, np.ndarray]]:
    if n < 0:
        raise DomainError(f"Query count must be nonnegative, got {n}")
    if n == 0:
        return []
    if not env.free_mask.any():
        raise GeometryError("Environment has no free cells")
    rng = np.random.default_rng(rng_seed)
    queries = []
    for _ in range(n * QUERY_ATTEMPTS_PER_PAIR):
        qs, qg = sample_free_point(env, rng), sample_free_point(env, rng)
        if np.linalg.norm(qs - qg) >= min_separation:
            queries.append((qs, qg))
            if len(queries) == n:
                return queries
    raise DomainError(f"Found only {len(queries)} of {n} queries with separation >= {min_separation}")
