# TimeFieldsLib/__init__.py

from .app.exceptions import (TimeFieldsLibError, DomainError, GeometryError, RoadmapError, OracleError, CheckpointError,
                             TrainingDivergenceError, MazeSpecError, PlottingError, ConfigError)
from .app.geomenv import (GridEnv, DistanceGrid, SpeedField, SpeedGradient, compute_edt, speed_from_distance,
                          build_speed_field, sample_speed, speed_gradient, is_free, segment_free, clearance,
                          save_grid, load_grid, export_pgm, import_pgm)
from .app.roadmap import (RoadmapNode, RoadmapEdge, Roadmap, TrainingPair, pack_spheres, connect, edge_time,
                          build_roadmap, shortest_times, generate_pairs, pairs_to_csv, pairs_from_csv, BoundAudit,
                          audit_bounds)
from .app.fmm import TimeGrid, DescentPath, fmm_solve, oracle_time, oracle_times, extract_path, dense_graph_times
from .app.timefield import (ArchSpec, TimeFieldModel, FieldEval, init_model, forward, forward_with_input_grads,
                            save_model, load_model)
from .app.training import (AblationMode, LossWeights, TrainingSample, TrainConfig, precompute_samples, loss_eikonal,
                           loss_td, loss_normal, causality_weight, loss_roadmap, total_loss_and_grads, train,
                           eval_field, write_training_run)
from .app.planner import (FailureReason, MpcConfig, PlanResult, NeuralCostToGo, OracleCostToGo, mpc_plan,
                          gradient_descent_plan, rrt_connect, PrmPlanner, prm_plan, fmm_plan, path_metrics)
from .app.maze import MazeSpec, generate_maze, sample_queries
from .app.reports import BenchReport, MethodRow, save_reports_xlsx
from .app.bench import BenchConfig, default_suite, build_suite, run_ablation, run_scaling, run_baselines
from .app.plotting import plot_field, plot_field_panels

__all__ = [
    # Exceptions
    "TimeFieldsLibError", "DomainError", "GeometryError", "RoadmapError", "OracleError", "CheckpointError",
    "TrainingDivergenceError", "MazeSpecError", "PlottingError", "ConfigError",
    # Environment
    "GridEnv", "DistanceGrid", "SpeedField", "SpeedGradient", "compute_edt", "speed_from_distance",
    "build_speed_field", "sample_speed", "speed_gradient", "is_free", "segment_free", "clearance",
    "save_grid", "load_grid", "export_pgm", "import_pgm",
    # Roadmap
    "RoadmapNode", "RoadmapEdge", "Roadmap", "TrainingPair", "pack_spheres", "connect", "edge_time",
    "build_roadmap", "shortest_times", "generate_pairs", "pairs_to_csv", "pairs_from_csv", "BoundAudit", "audit_bounds",
    # Oracle
    "TimeGrid", "DescentPath", "fmm_solve", "oracle_time", "oracle_times", "extract_path", "dense_graph_times",
    # Time field
    "ArchSpec", "TimeFieldModel", "FieldEval", "init_model", "forward", "forward_with_input_grads",
    "save_model", "load_model",
    # Training
    "AblationMode", "LossWeights", "TrainingSample", "TrainConfig", "precompute_samples", "loss_eikonal",
    "loss_td", "loss_normal", "causality_weight", "loss_roadmap", "total_loss_and_grads", "train",
    "eval_field", "write_training_run",
    # Planning
    "FailureReason", "MpcConfig", "PlanResult", "NeuralCostToGo", "OracleCostToGo", "mpc_plan",
    "gradient_descent_plan", "rrt_connect", "PrmPlanner", "prm_plan", "fmm_plan", "path_metrics",
    # Bench
    "MazeSpec", "generate_maze", "sample_queries", "BenchReport", "MethodRow", "save_reports_xlsx",
    "BenchConfig", "default_suite", "build_suite", "run_ablation", "run_scaling", "run_baselines",
    "plot_field", "plot_field_panels"
]
