import numpy as np
import pytest
from lxml import etree

from Libraries.TimeFieldsLib import GridEnv, PlottingError, build_speed_field, fmm_solve, init_model, plot_field, plot_field_panels
from Libraries.TimeFieldsLib.app.plotting import (SVG_NS, contour_crossings, contour_levels, field_contours,
                                                  time_values)

GOAL = np.array([0.75, 0.75])


@pytest.fixture
def door_grid(two_room_env):
    return fmm_solve(build_speed_field(two_room_env)[1], GOAL)


def polylines(path):
    return etree.parse(str(path)).getroot().findall(f".//{{{SVG_NS}}}polyline")


def test_time_values_mask_walls(two_room_env, door_grid, tiny_arch):
    values = time_values(door_grid, two_room_env, GOAL)
    assert np.all(np.isnan(values[two_room_env.occupancy]))
    assert np.isfinite(values[~two_room_env.occupancy]).all()
    cone = time_values(init_model(tiny_arch, rng_seed=0, frozen_tau=1.0), two_room_env, GOAL)
    h = two_room_env.spacing
    assert cone[8, 8] == pytest.approx(np.hypot(0.75 - 8 * h, 0.75 - 8 * h))


def test_levels_span_the_finite_range():
    values = np.array([[0.0, 1.0], [np.nan, 2.1]])
    levels = contour_levels(values, count=20)
    assert len(levels) == 20
    assert 0.0 < levels.min() and levels.max() < 2.1
    assert len(contour_levels(np.full((2, 2), np.nan))) == 0


def test_contours_stay_out_of_walls(two_room_env, door_grid):
    values = time_values(door_grid, two_room_env, GOAL)
    contours = field_contours(values, two_room_env, contour_levels(values))
    assert contours
    assert contour_crossings(contours, two_room_env) == 0


def test_plot_field_writes_parseable_svg(tmp_path, two_room_env, door_grid):
    path = plot_field(door_grid, two_room_env, GOAL, tmp_path / "field.svg",
                      paths=[np.array([[0.25, 0.2], [0.5, 0.5], [0.75, 0.75]])])
    root = etree.parse(str(path)).getroot()
    assert root.tag == f"{{{SVG_NS}}}svg"
    assert len(root.findall(f".//{{{SVG_NS}}}rect")) == two_room_env.occupancy.size
    assert len(root.findall(f".//{{{SVG_NS}}}circle")) == 1
    assert any(line.get("stroke") == "#d62728" for line in polylines(path))


def test_plot_is_deterministic(tmp_path, two_room_env, door_grid):
    a = plot_field(door_grid, two_room_env, GOAL, tmp_path / "a.svg")
    b = plot_field(door_grid, two_room_env, GOAL, tmp_path / "b.svg")
    assert a.read_bytes() == b.read_bytes()


def test_panels_share_environment(tmp_path, two_room_env, door_grid, tiny_arch):
    cone = init_model(tiny_arch, rng_seed=0, frozen_tau=1.0)
    path = plot_field_panels([("ours", cone), ("fmm", door_grid)], two_room_env, GOAL, tmp_path / "panels.svg")
    root = etree.parse(str(path)).getroot()
    titles = [t.text for t in root.findall(f".//{{{SVG_NS}}}text")]
    assert titles == ["ours", "fmm"]
    assert len(root.findall(f".//{{{SVG_NS}}}circle")) == 2
    with pytest.raises(PlottingError):
        plot_field_panels([], two_room_env, GOAL, tmp_path / "none.svg")


def test_three_dimensional_plots_are_rejected(tmp_path, tiny_arch):
    env = GridEnv.empty((8, 8, 8))
    with pytest.raises(PlottingError):
        plot_field(init_model(tiny_arch, rng_seed=0), env, [0.5, 0.5, 0.5], tmp_path / "cube.svg")
