import json
import logging

import pytest

from Core.ConfigManager import ConfigManager
from Core.ErrorHandler import ErrorHandler, EXIT_USAGE, EXIT_RUNTIME

from Libraries.TimeFieldsLib import ConfigError, GeometryError, AblationMode


def test_defaults():
    config = ConfigManager()
    assert config.getConfigKeySeed() == 0
    assert config.getConfigKeyScalingCounts() == [2000, 5000, 10000, 20000]
    weights = config.getLossWeights()
    assert weights.delta_t == 0.02
    assert weights.detach_td_target
    train = config.getTrainConfig()
    assert (train.learning_rate, train.weight_decay, train.betas) == (1e-3, 1e-4, (0.9, 0.999))
    assert config.getArchConfig().for_dim(3).fourier_bands == 4


def test_unknown_keys_are_ignored(caplog):
    with caplog.at_level(logging.WARNING):
        config = ConfigManager(updates={"Training": {"Epochs": 5, "Momentum": 0.9}, "Plotting": {}})
    assert config.getTrainConfig().epochs == 5
    assert "Training.Momentum" in caplog.text
    assert "Plotting" in caplog.text


def test_file_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"Seed": 7, "Training": {"AblationMode": "pde_only"}}), encoding="utf-8")
    config = ConfigManager(str(path))
    assert config.getConfigKeySeed() == 7
    assert config.getTrainConfig().ablation_mode == AblationMode.PDE_ONLY
    assert config.getMazeSpec().rng_seed == 7


@pytest.mark.parametrize("content", ["{not json", "[1, 2]", '{"Training": 3}'])
def test_bad_files(tmp_path, content):
    path = tmp_path / "bad.json"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        ConfigManager(str(tmp_path / "absent.json"))


@pytest.mark.parametrize("updates, getter", [
    ({"Maze": {"Rooms": 0}}, "getMazeSpec"),
    ({"LossWeights": {"DeltaT": 0.0}}, "getLossWeights"),
    ({"Training": {"AblationMode": "everything"}}, "getTrainConfig"),
])
def test_invalid_values_raise_config_error(updates, getter):
    config = ConfigManager(updates=updates)
    with pytest.raises(ConfigError):
        getattr(config, getter)()


def test_digest_and_save(tmp_path):
    config = ConfigManager()
    before = config.getConfigDigest()
    config.setConfigKeySeed(3)
    assert config.getConfigDigest() != before
    reloaded = ConfigManager(config.saveConfig(str(tmp_path / "saved" / "config.json")))
    assert reloaded.getConfigDigest() == config.getConfigDigest()


def test_bench_config_follows_sections():
    config = ConfigManager(updates={"Bench": {"QueriesPerEnv": 7}, "Mpc": {"MaxSteps": 40}, "Seed": 5})
    bench = config.getBenchConfig(threads=2)
    assert (bench.queries_per_env, bench.mpc.max_steps, bench.seed, bench.threads) == (7, 40, 5, 2)
    assert bench.mpc.beta_steps == 1.0
    assert not bench.baselines.loss_variants
    variants = ConfigManager(updates={"Baselines": {"LossVariants": True}, "Mpc": {"BetaSteps": 0.5}}).getBenchConfig()
    assert variants.baselines.loss_variants
    assert variants.mpc.beta_steps == 0.5
    assert config.getSuiteSettings()["shape_range"] == (64, 128)


def test_exit_codes():
    assert ErrorHandler.exitCodeFor(ConfigError("x")) == EXIT_USAGE
    assert ErrorHandler.exitCodeFor(GeometryError("x")) == EXIT_RUNTIME
