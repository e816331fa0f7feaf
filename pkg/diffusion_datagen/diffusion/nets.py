"""Neural networks: the FiLM noise predictor, the value critic and the Gaussian baseline.

All modules are plain ``torch.nn`` MLPs. Constructors take a ``seed`` so two
networks built with the same arguments hold identical parameters regardless
of the process-wide RNG state.
"""

from __future__ import annotations

import copy
import math
from collections.abc import Callable, Iterable
from pathlib import Path
from typing import Any, ClassVar

import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from ..core.checkpoint import load_checkpoint, save_checkpoint
from ..core.config import ModelConfig
from ..core.errors import CheckpointError, ContractViolation

HIDDEN_GAIN = math.sqrt(2.0)


def _init_linear(layer: nn.Linear, gain: float) -> None:
    nn.init.orthogonal_(layer.weight, gain=gain)
    nn.init.zeros_(layer.bias)


def _mlp(in_dim: int, hidden_dim: int, n_layers: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    width = in_dim
    for _ in range(n_layers):
        linear = nn.Linear(width, hidden_dim)
        _init_linear(linear, HIDDEN_GAIN)
        layers += [linear, nn.Mish()]
        width = hidden_dim
    return nn.Sequential(*layers)


class SinusoidalEmbedding(nn.Module):
    """Fixed sin/cos features of a (float) diffusion level."""

    def __init__(self, dim: int):
        super().__init__()
        half = dim // 2
        scale = math.log(10_000.0) / max(half - 1, 1)
        freqs = torch.exp(-scale * torch.arange(half, dtype=torch.float64))
        self.register_buffer("freqs", freqs, persistent=False)

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        angles = k.unsqueeze(-1) * self.freqs.to(dtype=k.dtype)
        return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class _Persistable(nn.Module):
    """A module that records its constructor arguments for checkpointing."""

    kind: ClassVar[str]
    arch: dict[str, Any]


class NoisePredictor(_Persistable):
    """``eps_theta(a_k, s, k)``: MLP trunk with per-layer FiLM conditioning.

    The observation (and optional instruction embedding) only enters through
    the FiLM generators, which start at zero so a fresh network ignores it.
    The output layer uses a small orthogonal gain.
    """

    kind: ClassVar[str] = "noise_predictor"

    def __init__(
        self,
        chunk_dim: int,
        obs_dim: int,
        hidden_dim: int = 128,
        n_hidden: int = 2,
        cond_dim: int = 64,
        time_embed_dim: int = 16,
        final_gain: float = 0.01,
        n_instructions: int = 0,
        instruction_dim: int = 16,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.arch = {
            "chunk_dim": chunk_dim,
            "obs_dim": obs_dim,
            "hidden_dim": hidden_dim,
            "n_hidden": n_hidden,
            "cond_dim": cond_dim,
            "time_embed_dim": time_embed_dim,
            "final_gain": final_gain,
            "n_instructions": n_instructions,
            "instruction_dim": instruction_dim,
        }
        self.chunk_dim = chunk_dim
        self.obs_dim = obs_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.obs_encoder = _mlp(obs_dim, cond_dim, 1)
            film_in = cond_dim
            self.instruction_embed: nn.Embedding | None = None
            if n_instructions > 0:
                self.instruction_embed = nn.Embedding(n_instructions, instruction_dim)
                nn.init.normal_(self.instruction_embed.weight, std=1.0)
                film_in += instruction_dim
            self.time_embed = nn.Sequential(
                SinusoidalEmbedding(time_embed_dim), nn.Linear(time_embed_dim, hidden_dim)
            )
            _init_linear(self.time_embed[1], 1.0)
            self.input_layer = nn.Linear(chunk_dim, hidden_dim)
            _init_linear(self.input_layer, HIDDEN_GAIN)
            self.hidden_layers = nn.ModuleList(
                nn.Linear(hidden_dim, hidden_dim) for _ in range(n_hidden)
            )
            for layer in self.hidden_layers:
                _init_linear(layer, HIDDEN_GAIN)
            self.film = nn.ModuleList(nn.Linear(film_in, 2 * hidden_dim) for _ in range(n_hidden))
            for layer in self.film:
                nn.init.zeros_(layer.weight)
                nn.init.zeros_(layer.bias)
            self.output_layer = nn.Linear(hidden_dim, chunk_dim)
            _init_linear(self.output_layer, final_gain)
        self.act = nn.Mish()
        self.to(dtype=dtype)

    def _condition(self, obs: torch.Tensor, instruction: torch.Tensor | None) -> torch.Tensor:
        cond = self.obs_encoder(obs)
        if self.instruction_embed is not None:
            if instruction is None:
                raise ContractViolation("This network needs an instruction id per row")
            cond = torch.cat([cond, self.instruction_embed(instruction.long())], dim=-1)
        return cond

    def forward(
        self,
        a_k: torch.Tensor,
        obs: torch.Tensor,
        k: int | torch.Tensor,
        instruction: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if a_k.shape[-1] != self.chunk_dim:
            raise ContractViolation(f"Chunk width {a_k.shape[-1]} != {self.chunk_dim}")
        if obs.shape[-1] != self.obs_dim:
            raise ContractViolation(f"Observation width {obs.shape[-1]} != {self.obs_dim}")
        if obs.shape[:-1] != a_k.shape[:-1]:
            raise ContractViolation("Chunk and observation batch shapes differ")
        levels = torch.as_tensor(k, dtype=a_k.dtype)
        levels = levels.expand(a_k.shape[:-1]) if levels.dim() == 0 else levels.to(a_k.dtype)
        h = self.act(self.input_layer(a_k) + self.time_embed(levels))
        cond = self._condition(obs, instruction)
        for layer, film in zip(self.hidden_layers, self.film, strict=True):
            gamma, beta = film(cond).chunk(2, dim=-1)
            h = self.act((1.0 + gamma) * layer(h) + beta)
        return self.output_layer(h)


class StudentPolicy(NoisePredictor):
    """Language-conditioned noise predictor distilled from a dataset."""

    kind: ClassVar[str] = "student"

    def __init__(self, chunk_dim: int, obs_dim: int, n_instructions: int, **kwargs: Any):
        if n_instructions < 1:
            raise ContractViolation("A student needs at least one instruction")
        super().__init__(chunk_dim, obs_dim, n_instructions=n_instructions, **kwargs)


class ValueNet(_Persistable):
    """State-value critic ``V(s)``."""

    kind: ClassVar[str] = "value"

    def __init__(
        self,
        obs_dim: int,
        hidden_dim: int = 128,
        n_layers: int = 2,
        final_gain: float = 0.01,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.arch = {
            "obs_dim": obs_dim,
            "hidden_dim": hidden_dim,
            "n_layers": n_layers,
            "final_gain": final_gain,
        }
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.trunk = _mlp(obs_dim, hidden_dim, n_layers)
            self.head = nn.Linear(hidden_dim, 1)
            _init_linear(self.head, final_gain)
        self.to(dtype=dtype)

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(obs)).squeeze(-1)


class GaussianHead(_Persistable):
    """Single-step Gaussian chunk policy used as the RL baseline."""

    kind: ClassVar[str] = "gaussian"

    def __init__(
        self,
        chunk_dim: int,
        obs_dim: int,
        hidden_dim: int = 128,
        n_hidden: int = 2,
        final_gain: float = 0.01,
        log_std_init: float = -1.0,
        log_std_min: float = -5.0,
        log_std_max: float = 0.5,
        seed: int = 0,
        dtype: torch.dtype = torch.float64,
    ):
        super().__init__()
        self.arch = {
            "chunk_dim": chunk_dim,
            "obs_dim": obs_dim,
            "hidden_dim": hidden_dim,
            "n_hidden": n_hidden,
            "final_gain": final_gain,
            "log_std_init": log_std_init,
            "log_std_min": log_std_min,
            "log_std_max": log_std_max,
        }
        self.chunk_dim = chunk_dim
        self.log_std_min = log_std_min
        self.log_std_max = log_std_max
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.trunk = _mlp(obs_dim, hidden_dim, n_hidden)
            self.mean_layer = nn.Linear(hidden_dim, chunk_dim)
            _init_linear(self.mean_layer, final_gain)
        self.log_std = nn.Parameter(torch.full((chunk_dim,), float(log_std_init)))
        self.to(dtype=dtype)

    def distribution(self, obs: torch.Tensor) -> torch.distributions.Normal:
        mean = self.mean_layer(self.trunk(obs))
        std = torch.exp(torch.clamp(self.log_std, self.log_std_min, self.log_std_max))
        return torch.distributions.Normal(mean, std.expand_as(mean))

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return self.mean_layer(self.trunk(obs))


def predict_noise(
    net: NoisePredictor,
    a_k: torch.Tensor,
    obs: torch.Tensor,
    k: int | torch.Tensor,
    instruction: torch.Tensor | None = None,
) -> torch.Tensor:
    return net(a_k, obs, k, instruction)


def value(net: ValueNet, obs: torch.Tensor) -> torch.Tensor:
    return net(obs)


def gaussian_sample(
    head: GaussianHead, obs: torch.Tensor, generator: torch.Generator | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw a chunk and return ``(chunk, log_prob)``."""
    dist = head.distribution(obs)
    z = torch.randn(dist.mean.shape, generator=generator, dtype=dist.mean.dtype)
    chunk = dist.mean + dist.stddev * z
    return chunk, dist.log_prob(chunk).sum(dim=-1)


def gaussian_log_prob(head: GaussianHead, obs: torch.Tensor, chunk: torch.Tensor) -> torch.Tensor:
    if chunk.shape[-1] != head.chunk_dim:
        raise ContractViolation(f"Chunk width {chunk.shape[-1]} != {head.chunk_dim}")
    return head.distribution(obs).log_prob(chunk).sum(dim=-1)


def gaussian_entropy(head: GaussianHead, obs: torch.Tensor) -> torch.Tensor:
    return head.distribution(obs).entropy().sum(dim=-1)


def grad_check(
    params: Iterable[nn.Parameter],
    loss_fn: Callable[[], torch.Tensor],
    n_probes: int = 10,
    step: float = 1e-5,
    seed: int = 0,
    scale_floor: float = 1e-5,
) -> float:
    """Largest relative error between autograd and central differences.

    Args:
        params: parameters to probe (all must require grad)
        loss_fn: re-evaluates the scalar loss deterministically
        n_probes: number of random parameter coordinates checked
        step: finite-difference half-width
        seed: chooses the probed coordinates
        scale_floor: lower bound of the relative-error denominator

    Returns:
        ``max |g - g_fd| / max(|g|, |g_fd|, scale_floor)`` over the probes.
    """
    params = list(params)
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    analytic = torch.cat(
        [
            (g if g is not None else torch.zeros_like(p)).reshape(-1)
            for g, p in zip(grads, params, strict=True)
        ]
    )
    original = parameters_to_vector(params).detach().clone()
    generator = torch.Generator().manual_seed(seed)
    probes = torch.randperm(original.numel(), generator=generator)[:n_probes]
    worst = 0.0
    try:
        with torch.no_grad():
            for index in probes.tolist():
                shifted = original.clone()
                shifted[index] += step
                vector_to_parameters(shifted, params)
                upper = float(loss_fn())
                shifted = original.clone()
                shifted[index] -= step
                vector_to_parameters(shifted, params)
                lower = float(loss_fn())
                numeric = (upper - lower) / (2.0 * step)
                exact = float(analytic[index])
                denom = max(abs(exact), abs(numeric), scale_floor)
                worst = max(worst, abs(exact - numeric) / denom)
    finally:
        vector_to_parameters(original.clone(), params)
    return worst


def snapshot(module: nn.Module) -> nn.Module:
    """A frozen deep copy used as the PPO behaviour policy."""
    frozen = copy.deepcopy(module)
    frozen.eval()
    for param in frozen.parameters():
        param.requires_grad_(False)
    return frozen


_KINDS: dict[str, type[_Persistable]] = {
    cls.kind: cls for cls in (NoisePredictor, StudentPolicy, ValueNet, GaussianHead)
}


def build_noise_predictor(
    cfg: ModelConfig, chunk_dim: int, obs_dim: int, seed: int, dtype: torch.dtype = torch.float64
) -> NoisePredictor:
    return NoisePredictor(
        chunk_dim,
        obs_dim,
        hidden_dim=cfg.hidden_dim,
        n_hidden=cfg.n_hidden,
        cond_dim=cfg.cond_dim,
        time_embed_dim=cfg.time_embed_dim,
        final_gain=cfg.final_gain,
        seed=seed,
        dtype=dtype,
    )


def build_value_net(
    cfg: ModelConfig, obs_dim: int, seed: int, dtype: torch.dtype = torch.float64
) -> ValueNet:
    return ValueNet(
        obs_dim,
        hidden_dim=cfg.value_hidden_dim,
        n_layers=cfg.value_layers,
        final_gain=cfg.final_gain,
        seed=seed,
        dtype=dtype,
    )


def build_gaussian_head(
    cfg: ModelConfig, chunk_dim: int, obs_dim: int, seed: int, dtype: torch.dtype = torch.float64
) -> GaussianHead:
    return GaussianHead(
        chunk_dim,
        obs_dim,
        hidden_dim=cfg.hidden_dim,
        n_hidden=cfg.n_hidden,
        final_gain=cfg.final_gain,
        log_std_init=cfg.log_std_init,
        log_std_min=cfg.log_std_min,
        log_std_max=cfg.log_std_max,
        seed=seed,
        dtype=dtype,
    )


def save_module(path: Path, module: _Persistable, **metadata: Any) -> str:
    """Checkpoint a network with enough metadata to rebuild it; returns the SHA-256."""
    meta = {"kind": module.kind, "arch": module.arch, **metadata}
    return save_checkpoint(Path(path), module.state_dict(), meta)


def load_module(
    path: Path, expected_kind: str | None = None, dtype: torch.dtype = torch.float64
) -> tuple[nn.Module, dict[str, Any]]:
    """Rebuild a network saved by :func:`save_module`.

    Returns:
        (module, metadata)
    """
    tensors, metadata = load_checkpoint(Path(path))
    kind = metadata.get("kind")
    if kind not in _KINDS:
        raise CheckpointError(f"{path}: unknown network kind {kind!r}")
    if expected_kind is not None and kind != expected_kind:
        raise CheckpointError(f"{path}: expected a {expected_kind} checkpoint, found {kind}")
    module = _KINDS[kind](**metadata["arch"], dtype=dtype)
    try:
        module.load_state_dict({name: t.to(dtype) for name, t in tensors.items()})
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the recorded architecture") from exc
    return module, metadata
