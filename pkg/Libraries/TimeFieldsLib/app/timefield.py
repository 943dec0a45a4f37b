# TimeFieldsLib/app/timefield.py

import hashlib
import json
import logging
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import CheckpointError, DomainError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hntf-checkpoint"
CHECKPOINT_VERSION = 1
COINCIDENCE_FLOOR = 1e-6
DTYPE = torch.float64


@dataclass(frozen=True)
class ArchSpec:
    dim: int = 2
    fourier_bands: int = 6
    hidden_width: int = 128
    num_blocks: int = 3
    tau_floor: float = 0.05

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise DomainError(f"Architecture dim must be 2 or 3, got {self.dim}")
        if self.fourier_bands < 0 or self.hidden_width < 1 or self.num_blocks < 0:
            raise DomainError(f"Invalid architecture sizes: {self}")
        if not 0.0 < self.tau_floor < 0.5:
            raise DomainError(f"tau_floor must lie in (0, 0.5), got {self.tau_floor}")

    @property
    def encoder_input_size(self) -> int: return self.dim * (1 + 2 * self.fourier_bands)
    @property
    def combined_size(self) -> int: return 2 * self.hidden_width

    @classmethod
    def for_dim(cls, dim: int, **kwargs) -> "ArchSpec":
        kwargs.setdefault("fourier_bands", 6 if dim == 2 else 4)
        return cls(dim=dim, **kwargs)


@dataclass
class FieldEval:
    t: float
    grad_qs: np.ndarray
    grad_qg: np.ndarray


class FourierEncoding(nn.Module):
    def __init__(self, bands: int):
        super().__init__()
        self.register_buffer("frequencies", (2.0 ** torch.arange(bands, dtype=DTYPE)) * math.pi, persistent=False)

    def forward(self, q: torch.Tensor) -> torch.Tensor:
        if self.frequencies.numel() == 0:
            return q
        scaled = q.unsqueeze(-1) * self.frequencies
        return torch.cat([q, torch.sin(scaled).flatten(-2), torch.cos(scaled).flatten(-2)], dim=-1)


class GatedResidualBlock(nn.Module):
    """x + alpha * (F(x) - x); alpha starts at 0 so the block is the identity."""

    def __init__(self, width: int):
        super().__init__()
        self.inner = nn.Linear(width, width, dtype=DTYPE)
        self.outer = nn.Linear(width, width, dtype=DTYPE)
        self.alpha = nn.Parameter(torch.zeros(1, dtype=DTYPE))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = nn.functional.silu(self.outer(nn.functional.silu(self.inner(x))))
        return x + self.alpha * (y - x)


class TimeFieldModel(nn.Module):
    """
    Symmetric factorised travel time T(qs, qg) = |qs - qg| / tau(qs, qg), tau in [tau_floor, 1].
    Both points share one encoder; features combine as (f_s + f_g, f_s * f_g).
    """

    def __init__(self, arch: ArchSpec, frozen_tau: float = None):
        super().__init__()
        self.arch = arch
        self.frozen_tau = frozen_tau
        width = arch.hidden_width
        self.encoding = FourierEncoding(arch.fourier_bands)
        self.encoder = nn.Sequential(
            nn.Linear(arch.encoder_input_size, width, dtype=DTYPE), nn.SiLU(),
            nn.Linear(width, width, dtype=DTYPE), nn.SiLU(),
        )
        self.blocks = nn.ModuleList([GatedResidualBlock(arch.combined_size) for _ in range(arch.num_blocks)])
        self.head = nn.Linear(arch.combined_size, 1, dtype=DTYPE)

    @property
    def layout(self) -> dict[str, tuple[int, int]]:
        """Parameter name -> (offset, extent) in the flat parameter vector."""
        offsets, offset = {}, 0
        for name, p in self.named_parameters():
            offsets[name] = (offset, p.numel())
            offset += p.numel()
        return offsets

    @property
    def param_count(self) -> int: return sum(p.numel() for p in self.parameters())

    def tau(self, qs: torch.Tensor, qg: torch.Tensor) -> torch.Tensor:
        if self.frozen_tau is not None:
            return torch.full(qs.shape[:-1], float(self.frozen_tau), dtype=DTYPE)
        fs = self.encoder(self.encoding(qs))
        fg = self.encoder(self.encoding(qg))
        x = torch.cat([fs + fg, fs * fg], dim=-1)
        for block in self.blocks:
            x = block(x)
        floor = self.arch.tau_floor
        return floor + (1.0 - floor) * torch.sigmoid(self.head(x).squeeze(-1))

    def forward(self, qs: torch.Tensor, qg: torch.Tensor) -> torch.Tensor:
        diff = qs - qg
        # sqrt(sum + 0) would give a NaN gradient at coincidence; keep the norm exact elsewhere
        sq = (diff * diff).sum(-1)
        safe = torch.where(sq > 0, sq, torch.ones_like(sq))
        dist = torch.where(sq > 0, torch.sqrt(safe), torch.zeros_like(sq))
        return dist / self.tau(qs, qg)

    def flat_parameters(self) -> np.ndarray:
        return nn.utils.parameters_to_vector(self.parameters()).detach().numpy().copy()

    def set_flat_parameters(self, values: np.ndarray):
        if len(values) != self.param_count:
            raise CheckpointError(f"Parameter vector holds {len(values)} values, layout expects {self.param_count}")
        nn.utils.vector_to_parameters(torch.from_numpy(np.array(values, dtype=np.float64)), self.parameters())


def init_model(arch: ArchSpec, rng_seed, frozen_tau: float = None) -> TimeFieldModel:
    model = TimeFieldModel(arch, frozen_tau)
    gen = torch.Generator().manual_seed(int(rng_seed))
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                fan_out, fan_in = module.weight.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                module.weight.uniform_(-bound, bound, generator=gen)
                nn.init.zeros_(module.bias)
            elif isinstance(module, GatedResidualBlock):
                nn.init.zeros_(module.alpha)
    logger.debug(f"Initialised time field with {model.param_count} parameters (seed {rng_seed})")
    return model


def _as_tensor(q, name: str) -> torch.Tensor:
    arr = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"Non-finite {name}: {arr.tolist()}")
    return torch.as_tensor(arr, dtype=DTYPE)


def forward(model: TimeFieldModel, qs, qg) -> float:
    with torch.no_grad():
        return float(model(_as_tensor(qs, "qs"), _as_tensor(qg, "qg")))


def evaluate_batch(model: TimeFieldModel, QS, QG) -> np.ndarray:
    with torch.no_grad():
        return model(_as_tensor(QS, "qs"), _as_tensor(QG, "qg")).numpy()


def input_grads(model: TimeFieldModel, qs: torch.Tensor, qg: torch.Tensor, create_graph: bool = False):
    """Batched (T, dT/dqs, dT/dqg) through autograd; `create_graph` keeps the graph for parameter gradients."""
    qs = qs.detach().requires_grad_(True)
    qg = qg.detach().requires_grad_(True)
    with torch.enable_grad():
        t = model(qs, qg)
        gs, gg = torch.autograd.grad(t.sum(), (qs, qg), create_graph=create_graph)
    return t, gs, gg


def forward_with_input_grads(model: TimeFieldModel, qs, qg) -> FieldEval:
    qs_t, qg_t = _as_tensor(qs, "qs"), _as_tensor(qg, "qg")
    if float(torch.linalg.vector_norm(qs_t - qg_t)) < COINCIDENCE_FLOOR:
        raise DomainError(f"Input gradients need |qs - qg| >= {COINCIDENCE_FLOOR}")
    t, gs, gg = input_grads(model, qs_t, qg_t)
    return FieldEval(float(t), gs.detach().numpy().copy(), gg.detach().numpy().copy())


# region Checkpoints

def _header(model: TimeFieldModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": asdict(model.arch),
        "frozen_tau": model.frozen_tau,
        "param_count": model.param_count,
        "layout": [[name, offset, extent] for name, (offset, extent) in model.layout.items()],
    }


def save_model(model: TimeFieldModel, path) -> Path:
    """One JSON header line, then the raw little-endian float64 parameter block."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(_header(model)).encode("utf-8")
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(model.flat_parameters().astype("<f8").tobytes())
    logger.debug(f"Saved checkpoint to {path}")
    return path


def load_model(path, expected_arch: ArchSpec = None) -> TimeFieldModel:
    data = Path(path).read_bytes()
    split = data.find(b"\n")
    if split < 0:
        raise CheckpointError(f"Checkpoint has no header line: {path}")
    try:
        header = json.loads(data[:split].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Unreadable checkpoint header in {path}: {e}") from e
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint format/version: {header.get('format')} v{header.get('version')}")
    try:
        arch = ArchSpec(**header["arch"])
    except (TypeError, DomainError) as e:
        raise CheckpointError(f"Invalid architecture header: {e}") from e
    if expected_arch is not None and arch != expected_arch:
        raise CheckpointError(f"Checkpoint architecture {arch} does not match expected {expected_arch}")
    model = TimeFieldModel(arch, header.get("frozen_tau"))
    layout = [[name, offset, extent] for name, (offset, extent) in model.layout.items()]
    if header.get("layout") != layout or header.get("param_count") != model.param_count:
        raise CheckpointError("Checkpoint layout does not match its architecture")
    block = data[split + 1:]
    if len(block) != 8 * model.param_count:
        raise CheckpointError(f"Parameter block holds {len(block)} bytes, expected {8 * model.param_count}")
    values = np.frombuffer(block, dtype="<f8")
    if not np.all(np.isfinite(values)):
        raise CheckpointError("Checkpoint holds non-finite parameters")
    model.set_flat_parameters(values)
    return model


def write_model_card(model: TimeFieldModel, path, seed, training_config: dict = None) -> Path:
    path = Path(path)
    config_text = json.dumps(training_config or {}, sort_keys=True)
    card = {
        "arch": asdict(model.arch),
        "frozen_tau": model.frozen_tau,
        "param_count": model.param_count,
        "seed": seed,
        "training_config_sha256": hashlib.sha256(config_text.encode("utf-8")).hexdigest(),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(card, indent=4), encoding="utf-8")
    return path

# endregion
