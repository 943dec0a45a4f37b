import numpy as np
import pytest

from Libraries.TimeFieldsLib import (GridEnv, SpeedField, ArchSpec, MazeSpec, TrainingPair, TrainingSample,
                                     generate_maze, build_speed_field)


@pytest.fixture(scope="session")
def empty_env() -> GridEnv:
    """33 x 33 box, h = 1/32; only the outer wall is occupied."""
    return GridEnv.empty((33, 33))


@pytest.fixture(scope="session")
def two_room_env() -> GridEnv:
    """Vertical wall at x = 0.5 with a 12-cell door in the middle."""
    occ = np.zeros((33, 33), dtype=bool)
    occ[16, :] = True
    occ[16, 11:23] = False
    return GridEnv(occ, 1.0 / 32)


@pytest.fixture(scope="session")
def walled_env() -> GridEnv:
    """Same wall as `two_room_env` without a door: two disconnected halves."""
    occ = np.zeros((33, 33), dtype=bool)
    occ[16, :] = True
    return GridEnv(occ, 1.0 / 32)


@pytest.fixture(scope="session")
def small_maze() -> GridEnv:
    return generate_maze(MazeSpec(shape=(40, 40), rooms=3, rng_seed=0))


@pytest.fixture
def unit_speed():
    """Factory for a speed field identically 1 on a given environment."""
    def make(env: GridEnv, value: float = 1.0) -> SpeedField:
        return SpeedField(np.full(env.shape, value), 0.015, 0.15, env)
    return make


@pytest.fixture
def speed_of():
    def make(env: GridEnv) -> SpeedField:
        return build_speed_field(env)[1]
    return make


@pytest.fixture(scope="session")
def tiny_arch() -> ArchSpec:
    return ArchSpec(dim=2, fourier_bands=2, hidden_width=16, num_blocks=2)


@pytest.fixture
def make_sample():
    """Factory for hand-built samples: no environment involved, every field given explicitly."""
    def make(qs, qg, s_star_s=1.0, s_star_g=1.0, grad_s=(0.0, 0.0), grad_g=(0.0, 0.0), t_lb=0.0, t_ub=10.0):
        pair = TrainingPair(np.asarray(qs, dtype=np.float64), np.asarray(qg, dtype=np.float64), 0, 0, t_lb, t_ub)
        return TrainingSample(pair, float(s_star_s), float(s_star_g), np.asarray(grad_s, dtype=np.float64),
                              np.asarray(grad_g, dtype=np.float64))
    return make
