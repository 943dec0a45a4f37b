# TimeFieldsLib/app/plotting.py

import logging
from pathlib import Path
from typing import Union

import numpy as np
from lxml import etree
from skimage import measure

from .exceptions import PlottingError
from .fmm import TimeGrid
from .geomenv import GridEnv, SpeedField, build_speed_field
from .timefield import TimeFieldModel, evaluate_batch

logger = logging.getLogger(__name__)

SVG_NS = "http://www.w3.org/2000/svg"
CELL_PX = 6
PANEL_GAP_PX = 24
TITLE_PX = 18
CONTOUR_LEVELS = 20

FieldSource = Union[TimeFieldModel, TimeGrid]


def time_values(source: FieldSource, env: GridEnv, goal) -> np.ndarray:
    """Travel time to `goal` at every cell center; NaN on occupied or unreached cells."""
    if isinstance(source, TimeGrid):
        values = np.array(source.values, dtype=np.float64)
    else:
        centers = np.stack(np.meshgrid(*(np.arange(s) for s in env.shape), indexing="ij"), axis=-1).reshape(-1, env.dim)
        points = centers * env.spacing
        goals = np.broadcast_to(np.asarray(goal, dtype=np.float64), points.shape)
        values = evaluate_batch(source, points, goals).reshape(env.shape)
    values[env.occupancy | ~np.isfinite(values)] = np.nan
    return values


def contour_levels(values: np.ndarray, count: int = CONTOUR_LEVELS) -> np.ndarray:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return np.zeros(0)
    return np.linspace(float(finite.min()), float(finite.max()), count + 2)[1:-1]


def field_contours(values: np.ndarray, env: GridEnv, levels) -> list[tuple[float, np.ndarray]]:
    """Marching-squares iso-lines in world coordinates, restricted to squares with four free finite corners."""
    mask = np.isfinite(values) & ~env.occupancy
    filled = np.where(mask, values, 0.0)
    out = []
    for level in levels:
        for contour in measure.find_contours(filled, level, mask=mask):
            out.append((float(level), contour * env.spacing))
    return out


def contour_crossings(contours, env: GridEnv) -> int:
    """Number of contour segments whose midpoint falls in an occupied cell."""
    count = 0
    for _, line in contours:
        if len(line) < 2:
            continue
        mids = 0.5 * (line[1:] + line[:-1])
        idx = env.cell_index(mids)
        inside = idx[:, 0] >= 0
        count += int(env.occupancy[tuple(idx[inside].T)].sum())
    return count


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _panel(parent, env: GridEnv, speed: SpeedField, contours, goal, paths, offset_x: float, offset_y: float, title: str = None):
    width, height = env.shape
    group = etree.SubElement(parent, f"{{{SVG_NS}}}g", transform=f"translate({_fmt(offset_x)},{_fmt(offset_y)})")
    if title:
        label = etree.SubElement(group, f"{{{SVG_NS}}}text", x="0", y=_fmt(-4), attrib={"font-size": "12", "font-family": "sans-serif"})
        label.text = title
    raster = etree.SubElement(group, f"{{{SVG_NS}}}g", attrib={"shape-rendering": "crispEdges"})
    for i in range(width):
        for j in range(height):
            shade = 0 if env.occupancy[i, j] else int(round(80 + 175 * float(speed.values[i, j])))
            etree.SubElement(raster, f"{{{SVG_NS}}}rect", x=str(i * CELL_PX), y=str((height - 1 - j) * CELL_PX),
                             width=str(CELL_PX), height=str(CELL_PX), fill=f"rgb({shade},{shade},{shade})")

    def to_px(points: np.ndarray) -> str:
        g = np.asarray(points) / env.spacing
        return " ".join(f"{_fmt((x + 0.5) * CELL_PX)},{_fmt((height - 1 - y + 0.5) * CELL_PX)}" for x, y in g)

    lines = etree.SubElement(group, f"{{{SVG_NS}}}g", fill="none", stroke="#1f77b4", attrib={"stroke-width": "1"})
    for level, line in contours:
        etree.SubElement(lines, f"{{{SVG_NS}}}polyline", points=to_px(line), attrib={"data-level": f"{level:.6g}"})
    for path in paths or []:
        etree.SubElement(group, f"{{{SVG_NS}}}polyline", points=to_px(path), fill="none", stroke="#d62728",
                         attrib={"stroke-width": "2"})
    gx, gy = np.asarray(goal, dtype=np.float64) / env.spacing
    etree.SubElement(group, f"{{{SVG_NS}}}circle", cx=_fmt((gx + 0.5) * CELL_PX), cy=_fmt((height - 1 - gy + 0.5) * CELL_PX),
                     r=str(CELL_PX), fill="#ff7f0e", stroke="black")


def _write(root, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_bytes(etree.tostring(root, pretty_print=True, xml_declaration=True, encoding="UTF-8"))
    return out_path


def _check_2d(env: GridEnv):
    if env.dim != 2:
        raise PlottingError(f"Field plots are 2D only, got a {env.dim}D environment")


def plot_field(source: FieldSource, env: GridEnv, goal, out_path, speed: SpeedField = None, paths=None,
               levels: int = CONTOUR_LEVELS) -> Path:
    """Speed raster, iso-contours of T(., goal), goal marker and optional path overlays as one SVG."""
    _check_2d(env)
    speed = speed if speed is not None else build_speed_field(env)[1]
    values = time_values(source, env, goal)
    contours = field_contours(values, env, contour_levels(values, levels))
    width, height = env.shape[0] * CELL_PX, env.shape[1] * CELL_PX
    root = etree.Element(f"{{{SVG_NS}}}svg", nsmap={None: SVG_NS}, width=str(width), height=str(height),
                         viewBox=f"0 0 {width} {height}")
    _panel(root, env, speed, contours, goal, paths, 0, 0)
    logger.debug(f"Field plot with {len(contours)} contour lines -> {out_path}")
    return _write(root, out_path)


def plot_field_panels(panels: list[tuple[str, FieldSource]], env: GridEnv, goal, out_path, speed: SpeedField = None,
                      levels: int = CONTOUR_LEVELS) -> Path:
    """Side-by-side panels (e.g. trained / FMM / PDE-only / roadmap-only) sharing one environment and goal."""
    _check_2d(env)
    if not panels:
        raise PlottingError("No panels to plot")
    speed = speed if speed is not None else build_speed_field(env)[1]
    panel_w, panel_h = env.shape[0] * CELL_PX, env.shape[1] * CELL_PX
    width = len(panels) * panel_w + (len(panels) - 1) * PANEL_GAP_PX
    height = panel_h + TITLE_PX
    root = etree.Element(f"{{{SVG_NS}}}svg", nsmap={None: SVG_NS}, width=str(width), height=str(height),
                         viewBox=f"0 0 {width} {height}")
    for k, (title, source) in enumerate(panels):
        values = time_values(source, env, goal)
        contours = field_contours(values, env, contour_levels(values, levels))
        _panel(root, env, speed, contours, goal, None, k * (panel_w + PANEL_GAP_PX), TITLE_PX, title)
    return _write(root, out_path)
