# TimeFieldsLib/app/geomenv.py

import hashlib
import json
import math
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .exceptions import DomainError, GeometryError

logger = logging.getLogger(__name__)

GRID_FORMAT_VERSION = 1
DEFAULT_D_MIN = 0.015
DEFAULT_D_MAX = 0.15
DOMAIN_EPS = 1e-12


def _as_points(q) -> tuple[np.ndarray, bool]:
    """Returns (points as (n, dim) float64, whether the input was a single point)."""
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


@dataclass(frozen=True, eq=False)
class GridEnv:
    """
    Occupancy grid over the unit box. Cell i along an axis has its center at i * spacing;
    the cells on the outer layer are always occupied (the box wall).
    """
    occupancy: np.ndarray
    spacing: float

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool, copy=True)
        if occ.ndim not in (2, 3):
            raise DomainError(f"Grid dimension must be 2 or 3, got {occ.ndim}")
        if min(occ.shape) < 8:
            raise DomainError(f"Every axis needs at least 8 cells, got shape {occ.shape}")
        if self.spacing <= 0:
            raise DomainError(f"Spacing must be positive, got {self.spacing}")
        if self.spacing * (max(occ.shape) - 1) > 1.0 + DOMAIN_EPS:
            raise DomainError(f"Grid with shape {occ.shape} and spacing {self.spacing} exceeds the unit box")
        for axis in range(occ.ndim):
            index = [slice(None)] * occ.ndim
            index[axis] = 0
            occ[tuple(index)] = True
            index[axis] = -1
            occ[tuple(index)] = True
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def empty(cls, shape, spacing: float = None) -> "GridEnv":
        spacing = spacing if spacing is not None else 1.0 / (max(shape) - 1)
        return cls(np.zeros(tuple(shape), dtype=bool), spacing)

    @property
    def dim(self) -> int: return self.occupancy.ndim
    @property
    def shape(self) -> tuple: return self.occupancy.shape
    @property
    def extent(self) -> np.ndarray: return (np.asarray(self.shape) - 1) * self.spacing
    @property
    def free_mask(self) -> np.ndarray: return ~self.occupancy

    def in_domain(self, q) -> np.ndarray:
        pts, single = _as_points(q)
        ok = np.all((pts >= -DOMAIN_EPS) & (pts <= 1.0 + DOMAIN_EPS), axis=1) & np.all(np.isfinite(pts), axis=1)
        return bool(ok[0]) if single else ok

    def cell_index(self, q) -> np.ndarray:
        """Index of the cell whose center is nearest to each point; -1 rows for points outside the grid."""
        pts, single = _as_points(q)
        idx = np.rint(pts / self.spacing).astype(np.int64)
        outside = np.any((idx < 0) | (idx >= np.asarray(self.shape)), axis=1) | ~self.in_domain(pts)
        idx[outside] = -1
        return idx[0] if single else idx

    def cell_centers(self, indices: np.ndarray) -> np.ndarray:
        return np.asarray(indices, dtype=np.float64) * self.spacing

    def free_cell_indices(self) -> np.ndarray:
        return np.argwhere(self.free_mask)

    @property
    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"shape": list(self.shape), "spacing": self.spacing}).encode("utf-8"))
        h.update(np.packbits(self.occupancy).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class DistanceGrid:
    """Exact Euclidean distance from each cell center to the nearest occupied cell center."""
    values: np.ndarray
    env: GridEnv

    @property
    def spacing(self) -> float: return self.env.spacing

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        axes = tuple(np.arange(n) * self.spacing for n in self.values.shape)
        return RegularGridInterpolator(axes, self.values, method="linear")

    def sample(self, q):
        pts, single = _as_points(q)
        pts = np.clip(pts, 0.0, (np.asarray(self.values.shape) - 1) * self.spacing)
        out = self.interpolator(pts)
        return float(out[0]) if single else out


@dataclass(frozen=True, eq=False)
class SpeedField:
    """Clipped obstacle-distance speed on the grid; values lie in [d_min/d_max, 1]."""
    values: np.ndarray
    d_min: float
    d_max: float
    env: GridEnv

    @property
    def s_min(self) -> float: return self.d_min / self.d_max
    @property
    def spacing(self) -> float: return self.env.spacing

    @cached_property
    def interpolator(self) -> RegularGridInterpolator:
        axes = tuple(np.arange(n) * self.spacing for n in self.values.shape)
        return RegularGridInterpolator(axes, self.values, method="linear")


def compute_edt(env: GridEnv) -> DistanceGrid:
    """Exact EDT through the separable feature transform; distances are sqrt(integer squared offset) * h."""
    free = env.free_mask
    if not free.any():
        return DistanceGrid(np.zeros(env.shape), env)
    indices = ndimage.distance_transform_edt(free, return_distances=False, return_indices=True)
    grid = np.indices(env.shape)
    d2 = np.zeros(env.shape, dtype=np.int64)
    for axis in range(env.dim):
        offset = (indices[axis] - grid[axis]).astype(np.int64)
        d2 += offset * offset
    values = np.sqrt(d2.astype(np.float64)) * env.spacing
    values.setflags(write=False)
    return DistanceGrid(values, env)


def speed_from_distance(dist: DistanceGrid, d_min: float = DEFAULT_D_MIN, d_max: float = DEFAULT_D_MAX) -> SpeedField:
    if not (0 < d_min < d_max):
        raise DomainError(f"Speed thresholds need 0 < d_min < d_max, got d_min={d_min}, d_max={d_max}")
    values = np.clip(np.asarray(dist.values) / d_max, d_min / d_max, 1.0)
    values.setflags(write=False)
    return SpeedField(values, float(d_min), float(d_max), dist.env)


def build_speed_field(env: GridEnv, d_min: float = DEFAULT_D_MIN, d_max: float = DEFAULT_D_MAX) -> tuple[DistanceGrid, SpeedField]:
    dist = compute_edt(env)
    return dist, speed_from_distance(dist, d_min, d_max)


def _clamp_to_grid(field_shape, spacing, pts: np.ndarray) -> np.ndarray:
    return np.clip(pts, 0.0, (np.asarray(field_shape) - 1) * spacing)


def sample_speed(field: SpeedField, q):
    pts, single = _as_points(q)
    if not np.all(field.env.in_domain(pts)):
        raise DomainError(f"Point outside the unit box: {pts[~field.env.in_domain(pts)][0].tolist()}")
    out = np.clip(field.interpolator(_clamp_to_grid(field.values.shape, field.spacing, pts)), field.s_min, 1.0)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class SpeedGradient:
    value: np.ndarray
    one_sided: bool


def speed_gradient(field: SpeedField, q):
    """
    Central difference of the interpolant with stencil h. Stencil points that leave the grid
    are clamped back, which turns the difference one-sided; such results are flagged.
    Batched input returns (gradients, one_sided_mask).
    """
    pts, single = _as_points(q)
    if not np.all(field.env.in_domain(pts)):
        raise DomainError("Point outside the unit box")
    h = field.spacing
    upper = (np.asarray(field.values.shape) - 1) * h
    grads = np.zeros_like(pts)
    one_sided = np.zeros(len(pts), dtype=bool)
    for axis in range(pts.shape[1]):
        plus, minus = pts.copy(), pts.copy()
        plus[:, axis] += h
        minus[:, axis] -= h
        plus[:, axis] = np.minimum(plus[:, axis], upper[axis])
        minus[:, axis] = np.maximum(minus[:, axis], 0.0)
        step = plus[:, axis] - minus[:, axis]
        one_sided |= step < 2 * h - 1e-12
        vp = field.interpolator(_clamp_to_grid(field.values.shape, h, plus))
        vm = field.interpolator(_clamp_to_grid(field.values.shape, h, minus))
        grads[:, axis] = np.where(step > 0, (vp - vm) / np.where(step > 0, step, 1.0), 0.0)
    if single:
        return SpeedGradient(grads[0], bool(one_sided[0]))
    return grads, one_sided


def is_free(env: GridEnv, q):
    pts, single = _as_points(q)
    idx = env.cell_index(pts)
    inside = idx[:, 0] >= 0
    free = np.zeros(len(pts), dtype=bool)
    if inside.any():
        free[inside] = ~env.occupancy[tuple(idx[inside].T)]
    return bool(free[0]) if single else free


def segment_samples(qa, qb, spacing: float) -> np.ndarray:
    qa = np.asarray(qa, dtype=np.float64)
    qb = np.asarray(qb, dtype=np.float64)
    # canonical endpoint order keeps the sample set identical for (qa, qb) and (qb, qa)
    if tuple(qb) < tuple(qa):
        qa, qb = qb, qa
    length = float(np.linalg.norm(qb - qa))
    n = max(1, int(math.ceil(length / (spacing / 2.0))))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return qa[None, :] + t * (qb - qa)[None, :]


def segment_free(env: GridEnv, qa, qb) -> bool:
    return bool(np.all(is_free(env, segment_samples(qa, qb, env.spacing))))


def clearance(env: GridEnv, dist: DistanceGrid, q) -> float:
    """Interpolated EDT minus one cell, floored at 0; the open ball of this radius holds no occupied center."""
    if not env.in_domain(q):
        raise DomainError(f"Point outside the unit box: {np.asarray(q).tolist()}")
    if not is_free(env, q):
        raise GeometryError(f"Clearance requested at an occupied point: {np.asarray(q).tolist()}")
    return max(0.0, dist.sample(q) - env.spacing)


def clearances(env: GridEnv, dist: DistanceGrid, Q: np.ndarray) -> np.ndarray:
    """Vectorised clearance for free points; occupied points get 0."""
    Q = np.asarray(Q, dtype=np.float64)
    values = np.maximum(0.0, dist.sample(Q) - env.spacing)
    return np.where(is_free(env, Q), values, 0.0)


# region Grid files

def save_grid(env: GridEnv, path, d_min: float = DEFAULT_D_MIN, d_max: float = DEFAULT_D_MAX) -> Path:
    """Writes the JSON descriptor at `path` and the row-major occupancy bytes next to it (`.raw`)."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    descriptor = {
        "version": GRID_FORMAT_VERSION,
        "dim": env.dim,
        "shape": list(env.shape),
        "spacing": env.spacing,
        "d_min": d_min,
        "d_max": d_max,
        "dtype": "uint8",
        "raw": raw_path.name,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.ascontiguousarray(env.occupancy, dtype=np.uint8).tobytes(order="C"))
    path.write_text(json.dumps(descriptor, indent=4), encoding="utf-8")
    logger.debug(f"Saved grid {env.shape} to {path}")
    return path


def load_grid(path) -> tuple[GridEnv, float, float]:
    path = Path(path)
    descriptor = json.loads(path.read_text(encoding="utf-8"))
    if descriptor.get("version") != GRID_FORMAT_VERSION:
        raise DomainError(f"Unsupported grid format version: {descriptor.get('version')}")
    shape = tuple(descriptor["shape"])
    data = np.frombuffer((path.parent / descriptor["raw"]).read_bytes(), dtype=np.uint8)
    if data.size != int(np.prod(shape)):
        raise DomainError(f"Grid raw file holds {data.size} cells, descriptor expects {int(np.prod(shape))}")
    env = GridEnv(data.reshape(shape).astype(bool), descriptor["spacing"])
    return env, float(descriptor.get("d_min", DEFAULT_D_MIN)), float(descriptor.get("d_max", DEFAULT_D_MAX))


def save_values(values: np.ndarray, spacing: float, path, extra: dict = None) -> Path:
    """Same descriptor + raw layout as occupancy grids, with float64 little-endian cells."""
    path = Path(path)
    raw_path = path.with_suffix(".raw")
    arr = np.asarray(values, dtype="<f8")
    descriptor = {"version": GRID_FORMAT_VERSION, "dim": arr.ndim, "shape": list(arr.shape),
                  "spacing": spacing, "dtype": "float64", "raw": raw_path.name, **(extra or {})}
    path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.ascontiguousarray(arr).tobytes(order="C"))
    path.write_text(json.dumps(descriptor, indent=4), encoding="utf-8")
    return path


def load_values(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    descriptor = json.loads(path.read_text(encoding="utf-8"))
    arr = np.frombuffer((path.parent / descriptor["raw"]).read_bytes(), dtype="<f8")
    return arr.reshape(tuple(descriptor["shape"])).copy(), descriptor


def export_pgm(env: GridEnv, path) -> Path:
    """ASCII P2, maxval 1, 1 = obstacle; row r holds axis-1 index r, column c holds axis-0 index c."""
    if env.dim != 2:
        raise DomainError("PGM export is only defined for 2D grids")
    path = Path(path)
    width, height = env.shape
    rows = [" ".join(str(int(v)) for v in env.occupancy[:, r]) for r in range(height)]
    path.write_text(f"P2\n{width} {height}\n1\n" + "\n".join(rows) + "\n", encoding="ascii")
    return path


def import_pgm(path, spacing: float = None) -> GridEnv:
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise DomainError(f"Not an ASCII PGM (P2) file: {path}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pixels = np.asarray(tokens[4:4 + width * height], dtype=np.int64)
    if pixels.size != width * height:
        raise DomainError(f"PGM body holds {pixels.size} pixels, header expects {width * height}")
    occ = (pixels.reshape(height, width).T >= max(1, maxval))
    return GridEnv(occ, spacing if spacing is not None else 1.0 / (max(width, height) - 1))

# endregion
