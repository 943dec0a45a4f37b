import copy
import hashlib
import json
import os
from typing import Optional, Dict, Any, List

from Core.Logger import logger

from Libraries.TimeFieldsLib import TimeFieldsLibError, ConfigError, LossWeights, TrainConfig, MazeSpec
from Libraries.TimeFieldsLib.app.bench import BenchConfig, RoadmapConfig, ArchConfig, MpcSettings, BaselineConfig


class ConfigManager:
    """
    Run configuration: built-in defaults, optionally merged with a user JSON file and CLI overrides.
    Only keys present in `default_config` are accepted; anything else is dropped with a warning.
    """

    def __init__(self, path: Optional[str] = None, updates: Optional[Dict[str, Any]] = None):
        self.ENCODING = "utf-8"
        self.JSON_INDENT = 4
        self.path = path
        self.default_config = {
            "Environment": {
                "DMin": 0.015,
                "DMax": 0.15
            },
            "Maze": {
                "Dim": 2,
                "Shape": [64, 64],
                "Rooms": 3,
                "DoorWidthCells": 4,
                "WallThicknessCells": 1,
                "ClutterDensity": 0.0
            },
            "Roadmap": {
                "MaxNodes": 200,
                "MinRadius": 0.01,
                "MaxRejectionsFactor": 50,
                "KNeighbors": 15,
                "PairCount": 20000,
                "Tightened": False,
                "RealizedDisplacement": False,
                "StratificationBins": 10
            },
            "Architecture": {
                "FourierBands2D": 6,
                "FourierBands3D": 4,
                "HiddenWidth": 128,
                "NumBlocks": 3,
                "TauFloor": 0.05
            },
            "LossWeights": {
                "LambdaE": 1.0,
                "LambdaTD": 1.0,
                "LambdaN": 1.0,
                "LambdaR": 1.0,
                "LambdaC": 1.0,
                "DeltaT": 0.02,
                "DetachTDTarget": True,
                "DetachCausality": True,
                "AnnealCausality": False
            },
            "Training": {
                "Epochs": 2000,
                "BatchSize": 512,
                "LearningRate": 1e-3,
                "WeightDecay": 1e-4,
                "Betas": [0.9, 0.999],
                "Eps": 1e-8,
                "AblationMode": "full",
                "LogEvery": 100
            },
            "Mpc": {
                "NumSamples": 64,
                "Horizon": 10,
                "StepCells": 2,
                "Sigma": 1.0,
                "BetaSteps": 1.0,
                "MaxSteps": 500,
                "GoalTolCells": 3,
                "CollisionPenalty": 100.0
            },
            "Baselines": {
                "TimeLimit": 10.0,
                "RrtStepCells": 2,
                "ShortcutPasses": 50,
                "PrmNodes": 500,
                "PrmK": 10,
                "GradientStepCells": 1,
                "GradientMaxSteps": 2000,
                "LossVariants": False
            },
            "Bench": {
                "SuiteSize": 18,
                "ShapeRange": [64, 128],
                "RoomRange": [3, 8],
                "QueriesPerEnv": 100,
                "MinSeparation": 0.3,
                "HeldOutPairs": 500,
                "ScalingCounts": [2000, 5000, 10000, 20000],
                "Threads": None
            },
            "Seed": 0
        }
        self._cached_config = copy.deepcopy(self.default_config)
        if path:
            self.loadFile(path)
        if updates:
            self.loadConfig(updates)

    def loadFile(self, path: str) -> Dict[str, Any]:
        try:
            with open(path, "r", encoding=self.ENCODING) as f:
                updates = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"Config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file is not valid JSON ({path}): {e}") from e
        if not isinstance(updates, dict):
            raise ConfigError(f"Config file must hold a JSON object: {path}")
        logger.info(f"Config loaded from {path}")
        return self.loadConfig(updates)

    def loadConfig(self, updates: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        if updates:
            config = self._cached_config
            for section, values in updates.items():
                if section not in self.default_config:
                    logger.warning(f"Ignoring unknown config section: {section}")
                elif isinstance(self.default_config[section], dict):
                    if not isinstance(values, dict):
                        raise ConfigError(f"Config section {section} must be an object")
                    for key, value in values.items():
                        if key in self.default_config[section]:
                            config[section][key] = value
                        else:
                            logger.warning(f"Ignoring unknown config key: {section}.{key}")
                else:
                    config[section] = values
        return copy.deepcopy(self._cached_config)

    def saveConfig(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding=self.ENCODING) as f:
            json.dump(self._cached_config, f, indent=self.JSON_INDENT)
        return path

    def _get_config_value(self, section: str, key: str = None) -> Any:
        if key is None:
            return self._cached_config.get(section, self.default_config[section])
        return self._cached_config.get(section, {}).get(key, self.default_config[section][key])

    def getConfigDigest(self) -> str:
        return hashlib.sha256(json.dumps(self._cached_config, sort_keys=True).encode(self.ENCODING)).hexdigest()

    def getConfigKeySeed(self) -> int: return int(self._get_config_value("Seed"))
    def getConfigKeyDMin(self) -> float: return float(self._get_config_value("Environment", "DMin"))
    def getConfigKeyDMax(self) -> float: return float(self._get_config_value("Environment", "DMax"))
    def getConfigKeyScalingCounts(self) -> List[int]: return [int(c) for c in self._get_config_value("Bench", "ScalingCounts")]
    def getConfigKeyThreads(self) -> Optional[int]: return self._get_config_value("Bench", "Threads")

    def setConfigKeySeed(self, seed: int) -> None: self._cached_config["Seed"] = int(seed)
    def setConfigKeyThreads(self, threads: Optional[int]) -> None: self._cached_config["Bench"]["Threads"] = threads

    def _build(self, factory, **kwargs):
        try:
            return factory(**kwargs)
        except (TypeError, ValueError, TimeFieldsLibError) as e:
            raise ConfigError(f"Invalid {factory.__name__} settings: {e}") from e

    def getMazeSpec(self, seed: Optional[int] = None) -> MazeSpec:
        m = self._get_config_value("Maze")
        return self._build(MazeSpec, dim=int(m["Dim"]), shape=tuple(m["Shape"]), rooms=int(m["Rooms"]),
                           door_width_cells=int(m["DoorWidthCells"]), wall_thickness_cells=int(m["WallThicknessCells"]),
                           clutter_density=float(m["ClutterDensity"]), rng_seed=self.getConfigKeySeed() if seed is None else seed)

    def getLossWeights(self) -> LossWeights:
        w = self._get_config_value("LossWeights")
        return self._build(LossWeights, lambda_e=float(w["LambdaE"]), lambda_td=float(w["LambdaTD"]),
                           lambda_n=float(w["LambdaN"]), lambda_r=float(w["LambdaR"]), lambda_c=float(w["LambdaC"]),
                           delta_t=float(w["DeltaT"]), detach_td_target=bool(w["DetachTDTarget"]),
                           detach_causality=bool(w["DetachCausality"]), anneal_causality=bool(w["AnnealCausality"]))

    def getTrainConfig(self) -> TrainConfig:
        t = self._get_config_value("Training")
        return self._build(TrainConfig, epochs=int(t["Epochs"]), batch_size=int(t["BatchSize"]),
                           learning_rate=float(t["LearningRate"]), weight_decay=float(t["WeightDecay"]),
                           rng_seed=self.getConfigKeySeed(), ablation_mode=t["AblationMode"], betas=tuple(t["Betas"]),
                           eps=float(t["Eps"]), log_every=int(t["LogEvery"]))

    def getRoadmapConfig(self) -> RoadmapConfig:
        r = self._get_config_value("Roadmap")
        return RoadmapConfig(max_nodes=int(r["MaxNodes"]), min_radius=float(r["MinRadius"]),
                             max_rejections_factor=int(r["MaxRejectionsFactor"]), k_neighbors=int(r["KNeighbors"]),
                             pair_count=int(r["PairCount"]), tightened=bool(r["Tightened"]),
                             realized=bool(r["RealizedDisplacement"]), stratification_bins=int(r["StratificationBins"]))

    def getArchConfig(self) -> ArchConfig:
        a = self._get_config_value("Architecture")
        return ArchConfig(fourier_bands_2d=int(a["FourierBands2D"]), fourier_bands_3d=int(a["FourierBands3D"]),
                          hidden_width=int(a["HiddenWidth"]), num_blocks=int(a["NumBlocks"]), tau_floor=float(a["TauFloor"]))

    def getMpcSettings(self) -> MpcSettings:
        m = self._get_config_value("Mpc")
        return MpcSettings(num_samples=int(m["NumSamples"]), horizon=int(m["Horizon"]), step_cells=float(m["StepCells"]),
                           sigma=float(m["Sigma"]), beta_steps=float(m["BetaSteps"]), max_steps=int(m["MaxSteps"]),
                           goal_tol_cells=float(m["GoalTolCells"]), collision_penalty=float(m["CollisionPenalty"]))

    def getBaselineConfig(self) -> BaselineConfig:
        b = self._get_config_value("Baselines")
        return BaselineConfig(time_limit=float(b["TimeLimit"]), rrt_step_cells=float(b["RrtStepCells"]),
                              shortcut_passes=int(b["ShortcutPasses"]), prm_nodes=int(b["PrmNodes"]), prm_k=int(b["PrmK"]),
                              gradient_step_cells=float(b["GradientStepCells"]), gradient_max_steps=int(b["GradientMaxSteps"]),
                              loss_variants=bool(b["LossVariants"]))

    def getSuiteSettings(self) -> Dict[str, Any]:
        b = self._get_config_value("Bench")
        return {"size": int(b["SuiteSize"]), "shape_range": tuple(b["ShapeRange"]), "room_range": tuple(b["RoomRange"]),
                "dim": int(self._get_config_value("Maze", "Dim"))}

    def getBenchConfig(self, threads: int = 1) -> BenchConfig:
        b = self._get_config_value("Bench")
        return BenchConfig(
            d_min=self.getConfigKeyDMin(),
            d_max=self.getConfigKeyDMax(),
            roadmap=self.getRoadmapConfig(),
            arch=self.getArchConfig(),
            weights=self.getLossWeights(),
            train=self.getTrainConfig(),
            mpc=self.getMpcSettings(),
            baselines=self.getBaselineConfig(),
            queries_per_env=int(b["QueriesPerEnv"]),
            min_separation=float(b["MinSeparation"]),
            held_out_pairs=int(b["HeldOutPairs"]),
            seed=self.getConfigKeySeed(),
            threads=threads,
        )
