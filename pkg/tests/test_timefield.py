import json

import numpy as np
import pytest

from Libraries.TimeFieldsLib import (ArchSpec, DomainError, CheckpointError, init_model, forward,
                                     forward_with_input_grads, save_model, load_model)
from Libraries.TimeFieldsLib.app.timefield import evaluate_batch, write_model_card


@pytest.fixture
def model(tiny_arch):
    return init_model(tiny_arch, rng_seed=3)


def random_pairs(n: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, (n, 2)), rng.uniform(0.05, 0.95, (n, 2))


def central_difference(model, qs, qg, step: float = 1e-5):
    gs, gg = np.zeros(2), np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = step
        gs[k] = (forward(model, qs + e, qg) - forward(model, qs - e, qg)) / (2 * step)
        gg[k] = (forward(model, qs, qg + e) - forward(model, qs, qg - e)) / (2 * step)
    return gs, gg


# region Architecture

@pytest.mark.parametrize("kwargs", [{"dim": 4}, {"hidden_width": 0}, {"tau_floor": 0.0}, {"tau_floor": 0.5},
                                    {"fourier_bands": -1}])
def test_arch_spec_validation(kwargs):
    with pytest.raises(DomainError):
        ArchSpec(**kwargs)


def test_arch_sizes():
    arch = ArchSpec.for_dim(3, hidden_width=32)
    assert arch.fourier_bands == 4
    assert arch.encoder_input_size == 3 * 9
    assert arch.combined_size == 64


def test_layout_covers_every_parameter(model):
    layout = model.layout
    assert sum(extent for _, extent in layout.values()) == model.param_count
    ends = sorted(offset + extent for offset, extent in layout.values())
    assert ends[-1] == model.param_count
    assert len(model.flat_parameters()) == model.param_count


def test_init_is_deterministic(tiny_arch):
    a = init_model(tiny_arch, rng_seed=11).flat_parameters()
    b = init_model(tiny_arch, rng_seed=11).flat_parameters()
    c = init_model(tiny_arch, rng_seed=12).flat_parameters()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)

# endregion


# region Field properties

def test_coincident_points_take_zero_time(model):
    assert forward(model, [0.3, 0.4], [0.3, 0.4]) == 0.0


def check_field_invariants(model, seed: int, count: int = 10_000):
    QS, QG = random_pairs(count, seed=seed)
    times = evaluate_batch(model, QS, QG)
    np.testing.assert_array_equal(times, evaluate_batch(model, QG, QS))
    assert not evaluate_batch(model, QS, QS).any()
    d = np.linalg.norm(QS - QG, axis=1)
    assert np.all(times >= d * (1 - 1e-12))
    assert np.all(times <= d / model.arch.tau_floor * (1 + 1e-12))


@pytest.mark.parametrize("seed", range(10))
def test_untrained_fields_keep_their_invariants(tiny_arch, seed):
    check_field_invariants(init_model(tiny_arch, rng_seed=100 + seed), seed)


def test_forward_rejects_non_finite_input(model):
    with pytest.raises(DomainError):
        forward(model, [np.nan, 0.4], [0.3, 0.4])


def test_frozen_tau_gives_scaled_cone(tiny_arch):
    cone = init_model(tiny_arch, rng_seed=0, frozen_tau=0.5)
    assert forward(cone, [0.1, 0.2], [0.4, 0.6]) == pytest.approx(2 * 0.5, rel=1e-14)

# endregion


# region Input gradients

@pytest.mark.parametrize("seed", range(10))
def test_input_grads_match_finite_differences(tiny_arch, seed):
    model = init_model(tiny_arch, rng_seed=seed)
    QS, QG = random_pairs(10, seed=20 + seed)
    for qs, qg in zip(QS, QG):
        ev = forward_with_input_grads(model, qs, qg)
        fd_s, fd_g = central_difference(model, qs, qg)
        assert np.linalg.norm(ev.grad_qs - fd_s) <= 1e-6 * np.linalg.norm(ev.grad_qs)
        assert np.linalg.norm(ev.grad_qg - fd_g) <= 1e-6 * np.linalg.norm(ev.grad_qg)
        assert ev.t == pytest.approx(forward(model, qs, qg), rel=1e-14)


def test_cone_gradient_points_away_from_start(tiny_arch):
    cone = init_model(tiny_arch, rng_seed=0, frozen_tau=1.0)
    qs, qg = np.array([0.2, 0.3]), np.array([0.5, 0.7])
    ev = forward_with_input_grads(cone, qs, qg)
    np.testing.assert_allclose(ev.grad_qg, (qg - qs) / 0.5, rtol=1e-12)
    np.testing.assert_allclose(ev.grad_qs, (qs - qg) / 0.5, rtol=1e-12)


def test_swapping_arguments_swaps_gradients(model):
    a, b = np.array([0.15, 0.8]), np.array([0.7, 0.35])
    ab = forward_with_input_grads(model, a, b)
    ba = forward_with_input_grads(model, b, a)
    assert ab.t == ba.t
    np.testing.assert_allclose(ab.grad_qs, ba.grad_qg, rtol=1e-12)
    np.testing.assert_allclose(ab.grad_qg, ba.grad_qs, rtol=1e-12)


def test_input_grads_reject_coincident_points(model):
    with pytest.raises(DomainError):
        forward_with_input_grads(model, [0.5, 0.5], [0.5, 0.5 + 1e-8])

# endregion


# region Checkpoints

def test_checkpoint_restores_identical_outputs(tmp_path, model, tiny_arch):
    path = save_model(model, tmp_path / "model.ckpt")
    loaded = load_model(path, expected_arch=tiny_arch)
    QS, QG = random_pairs(50, seed=4)
    np.testing.assert_array_equal(evaluate_batch(model, QS, QG), evaluate_batch(loaded, QS, QG))
    header = json.loads(path.read_bytes().split(b"\n", 1)[0])
    assert header["param_count"] == model.param_count
    assert path.stat().st_size == len(json.dumps(header).encode("utf-8")) + 1 + 8 * model.param_count


def test_checkpoint_keeps_frozen_tau(tmp_path, tiny_arch):
    cone = init_model(tiny_arch, rng_seed=0, frozen_tau=0.5)
    loaded = load_model(save_model(cone, tmp_path / "cone.ckpt"))
    assert loaded.frozen_tau == 0.5


def test_truncated_checkpoint_is_rejected(tmp_path, model):
    path = save_model(model, tmp_path / "model.ckpt")
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_checkpoint_architecture_mismatch(tmp_path, model):
    path = save_model(model, tmp_path / "model.ckpt")
    with pytest.raises(CheckpointError):
        load_model(path, expected_arch=ArchSpec(dim=2, fourier_bands=2, hidden_width=32, num_blocks=2))


def test_checkpoint_version_and_payload_checks(tmp_path, model):
    path = save_model(model, tmp_path / "model.ckpt")
    header, block = path.read_bytes().split(b"\n", 1)
    meta = json.loads(header)
    meta["version"] = 99
    path.write_bytes(json.dumps(meta).encode("utf-8") + b"\n" + block)
    with pytest.raises(CheckpointError):
        load_model(path)
    values = np.frombuffer(block, dtype="<f8").copy()
    values[0] = np.nan
    path.write_bytes(header + b"\n" + values.astype("<f8").tobytes())
    with pytest.raises(CheckpointError):
        load_model(path)
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_model(path)


def test_model_card_hashes_training_config(tmp_path, model):
    a = json.loads(write_model_card(model, tmp_path / "a.json", seed=1, training_config={"epochs": 5}).read_text())
    b = json.loads(write_model_card(model, tmp_path / "b.json", seed=1, training_config={"epochs": 6}).read_text())
    assert a["param_count"] == model.param_count
    assert a["training_config_sha256"] != b["training_config_sha256"]


def test_set_flat_parameters_rejects_wrong_length(model):
    with pytest.raises(CheckpointError):
        model.set_flat_parameters(np.zeros(model.param_count + 1))

# endregion
