# TimeFieldsLib/app/training.py

import csv
import json
import logging
import math
from dataclasses import dataclass, field, asdict, fields
from enum import Enum
from pathlib import Path

import numpy as np
import torch

from .exceptions import DomainError, TrainingDivergenceError
from .fmm import fmm_solve, oracle_times
from .geomenv import GridEnv, SpeedField, is_free, sample_speed, speed_gradient
from .roadmap import TrainingPair
from .timefield import (ArchSpec, FieldEval, TimeFieldModel, DTYPE, init_model, input_grads, evaluate_batch,
                        save_model, write_model_card)

logger = logging.getLogger(__name__)

PAIR_DISTANCE_FLOOR = 1e-4
RATIO_FLOOR = 1e-12
RATIO_CAP = 1e6
NORMAL_FLOOR = 1e-9
DIVERGENCE_LOSS = 1e6
DIVERGENCE_PATIENCE = 10
FINAL_LR_FRACTION = 0.01
ORACLE_MIN_CELLS = 10.0


class AblationMode(str, Enum):
    FULL = "full"
    PDE_ONLY = "pde_only"
    ROADMAP_ONLY = "roadmap_only"
    # earlier loss configurations, used as comparison rows
    EIKONAL_ONLY = "eikonal_only"
    EIKONAL_CURRICULUM = "eikonal_curriculum"


@dataclass(frozen=True)
class LossWeights:
    lambda_e: float = 1.0
    lambda_td: float = 1.0
    lambda_n: float = 1.0
    lambda_r: float = 1.0
    lambda_c: float = 1.0
    delta_t: float = 0.02
    detach_td_target: bool = True
    detach_causality: bool = True
    anneal_causality: bool = False

    def __post_init__(self):
        for name in ("lambda_e", "lambda_td", "lambda_n", "lambda_r", "lambda_c"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.delta_t <= 0:
            raise DomainError(f"delta_t must be positive, got {self.delta_t}")

    def validate_for(self, env: GridEnv):
        if self.delta_t < env.spacing:
            raise DomainError(f"delta_t={self.delta_t} is below the grid spacing {env.spacing}")

    def for_mode(self, mode: AblationMode) -> "LossWeights":
        mode = AblationMode(mode)
        if mode == AblationMode.PDE_ONLY:
            return LossWeights(**{**asdict(self), "lambda_r": 0.0})
        if mode == AblationMode.ROADMAP_ONLY:
            return LossWeights(**{**asdict(self), "lambda_e": 0.0, "lambda_td": 0.0, "lambda_n": 0.0})
        if mode == AblationMode.EIKONAL_ONLY:
            return LossWeights(**{**asdict(self), "lambda_td": 0.0, "lambda_n": 0.0, "lambda_r": 0.0, "lambda_c": 0.0})
        if mode == AblationMode.EIKONAL_CURRICULUM:
            return LossWeights(**{**asdict(self), "lambda_td": 0.0, "lambda_n": 0.0, "lambda_r": 0.0,
                                  "anneal_causality": True})
        return self


@dataclass
class TrainingSample:
    pair: TrainingPair
    s_star_s: float
    s_star_g: float
    grad_s_star_s: np.ndarray
    grad_s_star_g: np.ndarray


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 512
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    rng_seed: int = 0
    ablation_mode: AblationMode = AblationMode.FULL
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        self.ablation_mode = AblationMode(self.ablation_mode)
        self.betas = tuple(self.betas)


@dataclass
class SampleBatch:
    """Stacked tensors for a set of samples."""
    qs: torch.Tensor
    qg: torch.Tensor
    s_star_s: torch.Tensor
    s_star_g: torch.Tensor
    grad_s_star_s: torch.Tensor
    grad_s_star_g: torch.Tensor
    t_lb: torch.Tensor
    t_ub: torch.Tensor

    def __len__(self): return self.qs.shape[0]

    @classmethod
    def from_samples(cls, samples: list[TrainingSample]) -> "SampleBatch":
        def stack(values):
            return torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
        return cls(
            qs=stack([s.pair.qs for s in samples]),
            qg=stack([s.pair.qg for s in samples]),
            s_star_s=stack([s.s_star_s for s in samples]),
            s_star_g=stack([s.s_star_g for s in samples]),
            grad_s_star_s=stack([s.grad_s_star_s for s in samples]),
            grad_s_star_g=stack([s.grad_s_star_g for s in samples]),
            t_lb=stack([s.pair.t_lb for s in samples]),
            t_ub=stack([s.pair.t_ub for s in samples]),
        )

    def subset(self, index: np.ndarray) -> "SampleBatch":
        idx = torch.as_tensor(index, dtype=torch.long)
        return SampleBatch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


@dataclass
class EpochRecord:
    epoch: int
    total: float
    l_e: float
    l_td: float
    l_n: float
    l_r: float
    mean_l_c: float
    learning_rate: float


@dataclass
class FieldReport:
    mean_rel_error: float
    median_rel_error: float
    evaluated: int
    excluded: int
    below_distance_fraction: float


def precompute_samples(env: GridEnv, speed: SpeedField, pairs: list[TrainingPair]) -> list[TrainingSample]:
    kept = [p for p in pairs if np.linalg.norm(np.asarray(p.qs) - np.asarray(p.qg)) >= PAIR_DISTANCE_FLOOR]
    dropped = len(pairs) - len(kept)
    if dropped:
        logger.info(f"Dropped {dropped} pairs closer than {PAIR_DISTANCE_FLOOR}")
    if not kept:
        raise DomainError("No training pair survives the distance floor")
    qs = np.asarray([p.qs for p in kept], dtype=np.float64)
    qg = np.asarray([p.qg for p in kept], dtype=np.float64)
    if not (np.all(is_free(env, qs)) and np.all(is_free(env, qg))):
        raise DomainError("Training pair endpoint lies in an occupied cell")
    ss, sg = sample_speed(speed, qs), sample_speed(speed, qg)
    gs, _ = speed_gradient(speed, qs)
    gg, _ = speed_gradient(speed, qg)
    return [TrainingSample(p, float(ss[k]), float(sg[k]), gs[k], gg[k]) for k, p in enumerate(kept)]


# region Loss terms (batched tensors)

def _eikonal_terms(grad_s, grad_g, s_star_s, s_star_g) -> torch.Tensor:
    # S = 1/|grad T|, so S*/S = S* |grad T|
    def term(grad, s_star):
        ratio = torch.clamp(s_star * torch.linalg.vector_norm(grad, dim=-1), RATIO_FLOOR, RATIO_CAP)
        return (torch.sqrt(ratio) - 1.0) ** 2
    return term(grad_s, s_star_s) + term(grad_g, s_star_g)


def _unit(v: torch.Tensor) -> torch.Tensor:
    return v / torch.clamp(torch.linalg.vector_norm(v, dim=-1, keepdim=True), min=1e-15)


def _td_terms(model: TimeFieldModel, qs, qg, t, grad_s, grad_g, s_star_s, s_star_g, delta_t: float, detach: bool) -> torch.Tensor:
    u_g = -_unit(grad_g)
    u_s = -_unit(grad_s)
    if detach:
        u_g, u_s = u_g.detach(), u_s.detach()
    qg_step = torch.clamp(qg + u_g * delta_t, 0.0, 1.0)
    qs_step = torch.clamp(qs + u_s * delta_t, 0.0, 1.0)
    t_goal = model(qs, qg_step)
    t_start = model(qs_step, qg)
    if detach:
        t_goal, t_start = t_goal.detach(), t_start.detach()
    return (t - delta_t / s_star_g - t_goal) ** 2 + (t - delta_t / s_star_s - t_start) ** 2


def _normal_terms(grad_s, grad_g, s_star_s, s_star_g, grad_speed_s, grad_speed_g) -> torch.Tensor:
    def term(grad, s_star, grad_speed):
        norm = torch.linalg.vector_norm(grad_speed, dim=-1)
        n_hat = grad_speed / torch.clamp(norm, min=NORMAL_FLOOR).unsqueeze(-1)
        value = (1.0 - s_star) * (s_star.unsqueeze(-1) * grad + n_hat).pow(2).sum(-1)
        return torch.where(norm < NORMAL_FLOOR, torch.zeros_like(value), value)
    return term(grad_s, s_star_s, grad_speed_s) + term(grad_g, s_star_g, grad_speed_g)


def _roadmap_terms(t, t_lb, t_ub) -> torch.Tensor:
    return torch.relu(t - t_ub) + torch.relu(t_lb - t)


def _causality(t, lambda_c: float, detach: bool) -> torch.Tensor:
    return torch.exp(-lambda_c * (t.detach() if detach else t))

# endregion


# region Scalar entry points

def _field_tensors(ev: FieldEval, sample: TrainingSample):
    gs = torch.as_tensor(np.asarray(ev.grad_qs, dtype=np.float64))[None, :]
    gg = torch.as_tensor(np.asarray(ev.grad_qg, dtype=np.float64))[None, :]
    ss = torch.tensor([sample.s_star_s], dtype=DTYPE)
    sg = torch.tensor([sample.s_star_g], dtype=DTYPE)
    return gs, gg, ss, sg


def loss_eikonal(ev: FieldEval, sample: TrainingSample) -> float:
    gs, gg, ss, sg = _field_tensors(ev, sample)
    return float(_eikonal_terms(gs, gg, ss, sg)[0])


def loss_td(model: TimeFieldModel, sample: TrainingSample, delta_t: float) -> float:
    batch = SampleBatch.from_samples([sample])
    t, gs, gg = input_grads(model, batch.qs, batch.qg)
    with torch.no_grad():
        return float(_td_terms(model, batch.qs, batch.qg, t, gs, gg, batch.s_star_s, batch.s_star_g, delta_t, True)[0])


def loss_normal(ev: FieldEval, sample: TrainingSample) -> float:
    gs, gg, ss, sg = _field_tensors(ev, sample)
    ns = torch.as_tensor(np.asarray(sample.grad_s_star_s, dtype=np.float64))[None, :]
    ng = torch.as_tensor(np.asarray(sample.grad_s_star_g, dtype=np.float64))[None, :]
    return float(_normal_terms(gs, gg, ss, sg, ns, ng)[0])


def causality_weight(t_value: float, lambda_c: float) -> float:
    if t_value < 0:
        raise DomainError(f"Causality weight needs a nonnegative time, got {t_value}")
    return math.exp(-lambda_c * t_value)


def loss_roadmap(t_value: float, t_lb: float, t_ub: float) -> float:
    return max(0.0, t_value - t_ub) + max(0.0, t_lb - t_value)

# endregion


def batch_loss(model: TimeFieldModel, batch: SampleBatch, weights: LossWeights, lambda_c: float = None):
    """Mean of (sum of weighted terms) * causality; returns (total, per-sample loss, component means)."""
    lambda_c = weights.lambda_c if lambda_c is None else lambda_c
    pde = weights.lambda_e > 0 or weights.lambda_td > 0 or weights.lambda_n > 0
    if pde:
        t, gs, gg = input_grads(model, batch.qs, batch.qg, create_graph=True)
    else:
        t = model(batch.qs, batch.qg)
    zeros = torch.zeros_like(t)
    l_e = _eikonal_terms(gs, gg, batch.s_star_s, batch.s_star_g) if weights.lambda_e > 0 else zeros
    l_td = (_td_terms(model, batch.qs, batch.qg, t, gs, gg, batch.s_star_s, batch.s_star_g,
                      weights.delta_t, weights.detach_td_target) if weights.lambda_td > 0 else zeros)
    l_n = (_normal_terms(gs, gg, batch.s_star_s, batch.s_star_g, batch.grad_s_star_s, batch.grad_s_star_g)
           if weights.lambda_n > 0 else zeros)
    l_r = _roadmap_terms(t, batch.t_lb, batch.t_ub) if weights.lambda_r > 0 else zeros
    l_c = _causality(t, lambda_c, weights.detach_causality)
    per_sample = (weights.lambda_e * l_e + weights.lambda_td * l_td + weights.lambda_n * l_n + weights.lambda_r * l_r) * l_c
    components = {"l_e": l_e.mean(), "l_td": l_td.mean(), "l_n": l_n.mean(), "l_r": l_r.mean(), "mean_l_c": l_c.mean()}
    return per_sample.mean(), per_sample, components


def _check_finite(per_sample: torch.Tensor, epoch: int = -1):
    bad = torch.nonzero(~torch.isfinite(per_sample.detach()))
    if len(bad):
        index = int(bad[0])
        raise TrainingDivergenceError("Non-finite loss", epoch=epoch, sample_index=index,
                                      diagnostics={"loss": float(per_sample[index])})


def total_loss_and_grads(model: TimeFieldModel, batch: SampleBatch, weights: LossWeights,
                         ablation_mode: AblationMode = AblationMode.FULL) -> tuple[float, np.ndarray]:
    if len(batch) == 0:
        raise DomainError("Empty batch")
    total, per_sample, _ = batch_loss(model, batch, weights.for_mode(ablation_mode))
    _check_finite(per_sample)
    params = list(model.parameters())
    grads = torch.autograd.grad(total, params, allow_unused=True)
    flat = torch.cat([(g if g is not None else torch.zeros_like(p)).reshape(-1) for g, p in zip(grads, params)])
    return float(total), flat.detach().numpy().copy()


def train(env: GridEnv, speed: SpeedField, samples: list[TrainingSample], arch: ArchSpec, weights: LossWeights,
          cfg: TrainConfig, model: TimeFieldModel = None) -> tuple[TimeFieldModel, list[EpochRecord]]:
    """
    One uniformly drawn mini-batch per epoch, AdamW with cosine decay to 1% of the learning rate.
    Raises TrainingDivergenceError on a non-finite loss or on a loss above 1e6 for 10 epochs running.
    """
    if not samples:
        raise DomainError("Training needs at least one sample")
    if cfg.batch_size > len(samples):
        raise DomainError(f"batch_size {cfg.batch_size} exceeds the dataset size {len(samples)}")
    weights.validate_for(env)
    weights = weights.for_mode(cfg.ablation_mode)
    model = model if model is not None else init_model(arch, cfg.rng_seed)
    history: list[EpochRecord] = []
    if cfg.epochs == 0:
        return model, history
    data = SampleBatch.from_samples(samples)
    rng = np.random.default_rng(cfg.rng_seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps,
                                  weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=cfg.epochs,
                                                           eta_min=cfg.learning_rate * FINAL_LR_FRACTION)
    over_limit = 0
    for epoch in range(cfg.epochs):
        lambda_c = weights.lambda_c * epoch / max(1, cfg.epochs - 1) if weights.anneal_causality else None
        batch = data.subset(rng.choice(len(samples), size=cfg.batch_size, replace=False))
        optimizer.zero_grad()
        total, per_sample, comps = batch_loss(model, batch, weights, lambda_c)
        _check_finite(per_sample, epoch)
        total.backward()
        lr = optimizer.param_groups[0]["lr"]
        optimizer.step()
        scheduler.step()
        record = EpochRecord(epoch, float(total), *(float(comps[k]) for k in ("l_e", "l_td", "l_n", "l_r", "mean_l_c")), lr)
        history.append(record)
        over_limit = over_limit + 1 if record.total > DIVERGENCE_LOSS else 0
        if over_limit >= DIVERGENCE_PATIENCE:
            raise TrainingDivergenceError(f"Loss above {DIVERGENCE_LOSS:g} for {DIVERGENCE_PATIENCE} epochs", epoch=epoch,
                                          diagnostics={"recent": [r.total for r in history[-DIVERGENCE_PATIENCE:]]})
        if cfg.log_every and (epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1):
            logger.info(f"Epoch {epoch}: loss={record.total:.6g} E={record.l_e:.4g} TD={record.l_td:.4g} "
                        f"N={record.l_n:.4g} R={record.l_r:.4g} lr={lr:.3g}")
    return model, history


# region Evaluation

def solve_oracle_pairs(speed: SpeedField, query_pairs) -> np.ndarray:
    """FMM arrival time for each (qs, qg), one solve per distinct goal; NaN where unreached."""
    out = np.full(len(query_pairs), np.nan)
    by_goal: dict[tuple, list[int]] = {}
    for k, (_, qg) in enumerate(query_pairs):
        by_goal.setdefault(tuple(np.asarray(qg, dtype=np.float64)), []).append(k)
    for goal, members in by_goal.items():
        grid = fmm_solve(speed, np.asarray(goal))
        out[members] = oracle_times(grid, np.asarray([query_pairs[k][0] for k in members], dtype=np.float64))
    return out


def eval_field(model: TimeFieldModel, fmm_oracle_times, query_pairs, spacing: float) -> FieldReport:
    """Relative error against the oracle over pairs whose oracle time is at least 10 cells."""
    oracle = np.asarray(fmm_oracle_times, dtype=np.float64)
    qs = np.asarray([p[0] for p in query_pairs], dtype=np.float64)
    qg = np.asarray([p[1] for p in query_pairs], dtype=np.float64)
    predicted = evaluate_batch(model, qs, qg)
    keep = np.isfinite(oracle) & (oracle >= ORACLE_MIN_CELLS * spacing)
    rel = np.abs(predicted[keep] - oracle[keep]) / oracle[keep]
    below = predicted < np.linalg.norm(qs - qg, axis=1) - 1e-12
    return FieldReport(
        mean_rel_error=float(rel.mean()) if rel.size else math.nan,
        median_rel_error=float(np.median(rel)) if rel.size else math.nan,
        evaluated=int(keep.sum()),
        excluded=int((~keep).sum()),
        below_distance_fraction=float(below.mean()) if len(below) else 0.0,
    )

# endregion


def write_training_run(run_dir, model: TimeFieldModel, history: list[EpochRecord], resolved_config: dict, seed) -> dict:
    """config.json, history.csv, checkpoint and model card under `run_dir`."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config_path = run_dir / "config.json"
    config_path.write_text(json.dumps({**resolved_config, "seed": seed}, indent=4, default=str), encoding="utf-8")
    history_path = run_dir / "history.csv"
    with open(history_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "total", "L_E", "L_TD", "L_N", "L_R", "mean_L_C", "lr"])
        for r in history:
            writer.writerow([r.epoch, r.total, r.l_e, r.l_td, r.l_n, r.l_r, r.mean_l_c, r.learning_rate])
    checkpoint = save_model(model, run_dir / "model.ckpt")
    card = write_model_card(model, run_dir / "model_card.json", seed, resolved_config)
    return {"config": config_path, "history": history_path, "checkpoint": checkpoint, "model_card": card}
