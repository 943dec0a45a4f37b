import numpy as np
import pytest

from Libraries.TimeFieldsLib import (BenchConfig, DomainError, LossWeights, TrainConfig, OracleCostToGo, init_model,
                                     mpc_plan, default_suite, build_suite, run_ablation, run_scaling, run_baselines,
                                     is_free)
from Libraries.TimeFieldsLib.app.bench import (RoadmapConfig, ArchConfig, MpcSettings, BaselineConfig, suite_digest,
                                               held_out_pairs, prepare_environment)
from Libraries.TimeFieldsLib.app.timefield import ArchSpec


def tiny_config(**overrides) -> BenchConfig:
    # 40x40 mazes have spacing 1/39, above the default delta_t
    options = dict(
        roadmap=RoadmapConfig(max_nodes=40, pair_count=64),
        arch=ArchConfig(fourier_bands_2d=2, hidden_width=16, num_blocks=1),
        weights=LossWeights(delta_t=0.03),
        train=TrainConfig(epochs=3, batch_size=16, log_every=0),
        mpc=MpcSettings(num_samples=16, max_steps=20),
        baselines=BaselineConfig(time_limit=2.0, prm_nodes=100, gradient_max_steps=100),
        queries_per_env=3,
        held_out_pairs=10,
    )
    options.update(overrides)
    return BenchConfig(**options)


@pytest.fixture(scope="module")
def tiny_suite():
    return build_suite(default_suite(size=2, shape_range=(40, 40), room_range=(2, 2), rng_seed=0))


# region Suite

def test_default_suite_is_deterministic_and_in_range():
    a = default_suite(size=6, rng_seed=3)
    assert a == default_suite(size=6, rng_seed=3)
    for spec in a:
        assert 64 <= spec.shape[0] <= 128
        assert spec.shape[0] == spec.shape[1]
        assert 3 <= spec.rooms <= 8


def test_suite_digest_tracks_content(tiny_suite):
    assert suite_digest(tiny_suite) == suite_digest(list(tiny_suite))
    assert suite_digest(tiny_suite) != suite_digest(tiny_suite[:1])


def test_held_out_pairs_share_goals(small_maze):
    pairs = held_out_pairs(small_maze, 40, rng_seed=0)
    assert len(pairs) == 40
    assert len({tuple(qg) for _, qg in pairs}) <= 10
    for qs, qg in pairs:
        assert is_free(small_maze, qs) and is_free(small_maze, qg)


def test_config_digest_changes_with_seed():
    assert tiny_config().digest == tiny_config().digest
    assert tiny_config().digest != tiny_config(seed=1).digest


def test_prepare_environment(tiny_suite):
    art = prepare_environment(0, tiny_suite[0], tiny_config())
    assert len(art.queries) == 3
    assert len(art.held_out) == 10
    assert art.held_out_oracle.shape == (10,)
    assert 2 <= len(art.roadmap.nodes) <= 40

# endregion


# region Ablation

def test_ablation_reports(tiny_suite):
    result = run_ablation(tiny_suite, tiny_config())
    aggregate = result.reports[0]
    assert aggregate.title == "ablation"
    assert [r.method for r in aggregate.rows] == ["full", "pde_only", "roadmap_only"]
    assert len(result.reports) == 1 + len(tiny_suite)
    for row in aggregate.rows:
        assert row.n_queries == 3 * len(tiny_suite)
        assert 0.0 <= row.sr_percent <= 100.0
    assert set(result.models) == {0, 1}
    assert all(len(per_mode) == 3 for per_mode in result.models.values())


def test_ablation_is_reproducible(tiny_suite):
    cfg = tiny_config()
    a = run_ablation(tiny_suite[:1], cfg)
    b = run_ablation(tiny_suite[:1], cfg)
    for ra, rb in zip(a.reports, b.reports):
        assert ra.to_csv_string(include_timing=False) == rb.to_csv_string(include_timing=False)


def test_ablation_needs_environments():
    with pytest.raises(DomainError):
        run_ablation([], tiny_config())

# endregion


# region Scaling

@pytest.mark.parametrize("counts", [[], [32, 16], [16, 16]])
def test_scaling_needs_ascending_counts(tiny_suite, counts):
    with pytest.raises(DomainError):
        run_scaling(tiny_suite, counts, tiny_config())


def test_scaling_rows_share_one_roadmap(tiny_suite):
    report, = run_scaling(tiny_suite[:1], [16, 32], tiny_config())
    assert [r.method for r in report.rows] == ["full@16", "pde_only@16", "full@32", "pde_only@32"]
    assert len({r.extras["roadmap_seconds"] for r in report.rows}) == 1
    assert report.row("full@32").extras["samples"] == 32
    comparison, = report.comparisons
    assert (comparison["full_count"], comparison["pde_only_count"]) == (16, 32)

# endregion


# region Baselines

def test_baselines_without_models(tiny_suite):
    report = run_baselines(tiny_suite[:1], tiny_config(), {})
    assert [r.method for r in report.rows] == ["fmm", "rrt-connect", "prm"]
    assert all(r.n_queries == 3 for r in report.rows)


def test_baselines_with_a_model(tiny_suite):
    cone = init_model(ArchSpec(dim=2, fourier_bands=2, hidden_width=16, num_blocks=1), rng_seed=0, frozen_tau=1.0)
    report = run_baselines(tiny_suite[:1], tiny_config(), {0: cone})
    assert [r.method for r in report.rows] == ["ours-mpc", "gradient-descent", "fmm", "rrt-connect", "prm"]


def test_baselines_with_loss_variants(tiny_suite):
    cfg = tiny_config(baselines=BaselineConfig(time_limit=2.0, prm_nodes=100, gradient_max_steps=100, loss_variants=True))
    report = run_baselines(tiny_suite[:1], cfg, {})
    assert [r.method for r in report.rows] == ["fmm", "rrt-connect", "prm", "mpc-eikonal_only", "mpc-eikonal_curriculum",
                                               "mpc-pde_only"]
    assert all(r.n_queries == 3 for r in report.rows)
    again = run_baselines(tiny_suite[:1], cfg, {})
    assert report.to_csv_string(include_timing=False) == again.to_csv_string(include_timing=False)

# endregion


# region End-to-end

@pytest.mark.slow
def test_oracle_mpc_success_rate():
    cfg = BenchConfig(queries_per_env=50)
    planned = solved = 0
    for index, env in enumerate(build_suite(default_suite(size=18))):
        art = prepare_environment(index, env, BenchConfig(queries_per_env=50, held_out_pairs=0,
                                                          roadmap=RoadmapConfig(max_nodes=20)))
        cost = OracleCostToGo(art.speed)
        for k, (qs, qg) in enumerate(art.queries):
            solved += mpc_plan(cost, env, art.speed, qs, qg, cfg.mpc.for_env(env, k)).success
            planned += 1
    assert solved / planned >= 0.95


@pytest.mark.slow
def test_classical_baselines_near_saturate():
    cfg = BenchConfig(queries_per_env=20, held_out_pairs=0, roadmap=RoadmapConfig(max_nodes=20))
    report = run_baselines(build_suite(default_suite()), cfg, {})
    for method in ("fmm", "rrt-connect", "prm"):
        assert report.row(method).sr_percent >= 99.0


@pytest.mark.slow
def test_full_training_beats_ablations():
    cfg = BenchConfig(queries_per_env=30, held_out_pairs=100)
    aggregate = run_ablation(build_suite(default_suite()), cfg).reports[0]
    full, pde_only = aggregate.row("full"), aggregate.row("pde_only")
    assert full.sr_percent > pde_only.sr_percent
    assert full.sr_percent > aggregate.row("roadmap_only").sr_percent
    assert full.extras["field_mean_rel_error"] <= pde_only.extras["field_mean_rel_error"]


@pytest.mark.slow
def test_roadmap_supervision_needs_fewer_pairs():
    cfg = BenchConfig(queries_per_env=30, held_out_pairs=0)
    report, = run_scaling(build_suite(default_suite()), [2000, 5000, 10000, 20000], cfg)
    assert [r.method for r in report.rows][:2] == ["full@2000", "pde_only@2000"]
    assert report.row("full@5000").sr_percent >= report.row("pde_only@20000").sr_percent

# endregion
