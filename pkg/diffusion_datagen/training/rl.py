"""PPO fine-tuning over the denoising chain, plus the Gaussian-PPO baseline.

Every denoising transition ``a_k -> a_k'`` recorded during a rollout is an
independent surrogate term that shares the advantage of its environment
decision. Likelihoods use the variance recorded at collection time; old-policy
likelihoods are recomputed under a frozen snapshot.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol, TypeVar

import numpy as np
import torch
from torch import nn

from ..core.config import EnvConfig, PPOConfig
from ..core.errors import ConfigurationError, ContractViolation, NonFiniteRatioError
from ..core.seeds import RUN_STRIDE, seed_block
from ..diffusion.nets import GaussianHead, NoisePredictor, ValueNet, gaussian_log_prob, snapshot
from ..diffusion.policy import ChunkSampler, DiffusionPolicy, GaussianPolicy, variance_probe
from ..diffusion.schedule import NoiseSchedule, SamplerKind, ddim_step, ddpm_posterior_mean, step_log_likelihood
from ..envs.base import TaskSpec, make_env
from ..envs.vector import RolloutBatch, Transition, vector_rollout

logger = logging.getLogger("diffusion_datagen.rl")

ADV_EPS = 1e-8


def compute_gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    gamma: float,
    lam: float,
    last_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation.

    Args:
        rewards: ``r_t``
        values: ``V(s_t)``
        dones: terminal flags; a terminal step does not bootstrap
        gamma: discount
        lam: GAE mixing parameter
        last_value: ``V`` of the state after the last step (truncated episodes)

    Returns:
        (advantages, return targets ``advantage + V(s_t)``)
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    d = np.asarray(dones, dtype=bool)
    if not len(r) == len(v) == len(d):
        raise ContractViolation(
            f"GAE inputs differ in length: {len(r)} rewards, {len(v)} values, {len(d)} dones"
        )
    advantages = np.zeros_like(r)
    running = 0.0
    for t in reversed(range(len(r))):
        next_value = last_value if t == len(r) - 1 else v[t + 1]
        live = 0.0 if d[t] else 1.0
        delta = r[t] + gamma * next_value * live - v[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    return advantages, advantages + v


def value_loss(value_net: ValueNet, obs: torch.Tensor, returns: torch.Tensor) -> torch.Tensor:
    return ((value_net(obs) - returns) ** 2).mean()


def clipped_surrogate(ratio: torch.Tensor, advantages: torch.Tensor, clip_eps: float) -> torch.Tensor:
    """Elementwise ``min(r * A, clip(r, 1 - eps, 1 + eps) * A)``."""
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return torch.minimum(ratio * advantages, clipped * advantages)


@torch.no_grad()
def attach_advantages(
    batch: RolloutBatch, value_net: ValueNet, gamma: float, lam: float
) -> None:
    """Fill ``value``, ``advantage`` and ``returns`` on every transition, per episode."""
    dtype = next(value_net.parameters()).dtype
    for episode in batch.episodes:
        if not episode.transitions:
            continue
        obs = torch.as_tensor(np.stack([t.obs for t in episode.transitions]), dtype=dtype)
        values = value_net(obs).double().numpy()
        last = episode.transitions[-1]
        last_value = 0.0
        if not last.done:
            final = torch.as_tensor(episode.final_obs, dtype=dtype).unsqueeze(0)
            last_value = float(value_net(final)[0])
        advantages, returns = compute_gae(
            [t.reward for t in episode.transitions],
            values,
            [t.done for t in episode.transitions],
            gamma,
            lam,
            last_value,
        )
        for transition, v, adv, ret in zip(episode.transitions, values, advantages, returns, strict=True):
            transition.value = float(v)
            transition.advantage = float(adv)
            transition.returns = float(ret)


def normalize_advantages(advantages: torch.Tensor) -> torch.Tensor:
    """Divide by the batch standard deviation; signs are preserved."""
    std = advantages.std(unbiased=False)
    if float(std) < ADV_EPS:
        return advantages
    return advantages / (std + ADV_EPS)


_B = TypeVar("_B", bound="_Rows")


class _Rows:
    """Row-indexable tensor bundle."""

    env_id: torch.Tensor
    obs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def select(self: _B, index: torch.Tensor) -> _B:
        values = {}
        for item in dataclasses.fields(self):  # type: ignore[arg-type]
            value = getattr(self, item.name)
            values[item.name] = value[index] if isinstance(value, torch.Tensor) else value
        return type(self)(**values)

    def __len__(self) -> int:
        return int(self.obs.shape[0])


@dataclass
class DenoisingBatch(_Rows):
    """One row per recorded denoising transition."""
    obs: torch.Tensor
    k_from: torch.Tensor
    k_to: torch.Tensor
    a_k: torch.Tensor
    a_next: torch.Tensor
    var: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor
    env_id: torch.Tensor
    instruction: torch.Tensor | None = None


@dataclass
class GaussianBatch(_Rows):
    """One row per environment decision."""
    obs: torch.Tensor
    chunk: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor
    env_id: torch.Tensor


def _require_advantages(transitions: Sequence[Transition]) -> None:
    if any(t.advantage is None or t.returns is None for t in transitions):
        raise ContractViolation("Transitions need advantages; run attach_advantages first")


def flatten_denoising(
    transitions: Sequence[Transition],
    dtype: torch.dtype = torch.float64,
    instruction_ids: Sequence[int] | None = None,
) -> DenoisingBatch:
    """Expand each transition's trace into per-step rows sharing its advantage."""
    _require_advantages(transitions)
    rows: dict[str, list[torch.Tensor]] = {
        name: [] for name in ("obs", "k_from", "k_to", "a_k", "a_next", "var", "adv", "ret", "env", "instr")
    }
    for index, t in enumerate(transitions):
        if t.trace is None:
            raise ContractViolation("Denoising PPO needs a trace on every transition")
        n = len(t.trace)
        rows["obs"].append(torch.as_tensor(t.obs, dtype=dtype).expand(n, -1))
        rows["k_from"].append(t.trace.k_from)
        rows["k_to"].append(t.trace.k_to)
        rows["a_k"].append(t.trace.a_k.to(dtype))
        rows["a_next"].append(t.trace.a_next.to(dtype))
        rows["var"].append(t.trace.var.to(dtype))
        rows["adv"].append(torch.full((n,), float(t.advantage), dtype=dtype))  # type: ignore[arg-type]
        rows["ret"].append(torch.full((n,), float(t.returns), dtype=dtype))  # type: ignore[arg-type]
        rows["env"].append(torch.full((n,), t.env_id, dtype=torch.long))
        if instruction_ids is not None:
            rows["instr"].append(torch.full((n,), instruction_ids[index], dtype=torch.long))
    return DenoisingBatch(
        obs=torch.cat(rows["obs"]),
        k_from=torch.cat(rows["k_from"]).long(),
        k_to=torch.cat(rows["k_to"]).long(),
        a_k=torch.cat(rows["a_k"]),
        a_next=torch.cat(rows["a_next"]),
        var=torch.cat(rows["var"]),
        advantages=torch.cat(rows["adv"]),
        returns=torch.cat(rows["ret"]),
        env_id=torch.cat(rows["env"]),
        instruction=torch.cat(rows["instr"]) if instruction_ids is not None else None,
    )


def flatten_decisions(
    transitions: Sequence[Transition], dtype: torch.dtype = torch.float64
) -> GaussianBatch:
    _require_advantages(transitions)
    return GaussianBatch(
        obs=torch.as_tensor(np.stack([t.obs for t in transitions]), dtype=dtype),
        chunk=torch.as_tensor(np.stack([t.chunk for t in transitions]), dtype=dtype),
        advantages=torch.tensor([t.advantage for t in transitions], dtype=dtype),
        returns=torch.tensor([t.returns for t in transitions], dtype=dtype),
        env_id=torch.tensor([t.env_id for t in transitions], dtype=torch.long),
    )


def build_minibatches(
    env_ids: torch.Tensor,
    minibatch_size: int,
    min_distinct_envs: int,
    generator: torch.Generator,
) -> list[torch.Tensor]:
    """Partition rows into minibatches that each span enough source environments.

    With ``min_distinct_envs == 1`` rows are laid out env by env, so a
    minibatch mostly holds one environment. Otherwise rows are dealt
    round-robin across environments and any tail chunk that is undersized or
    too narrow is merged into its predecessor.
    """
    if min_distinct_envs > minibatch_size:
        raise ConfigurationError(
            f"min_distinct_envs={min_distinct_envs} cannot fit in minibatches of {minibatch_size}"
        )
    envs = torch.unique(env_ids)
    env_order = envs[torch.randperm(len(envs), generator=generator)]
    per_env = []
    for env in env_order.tolist():
        rows = torch.nonzero(env_ids == env).flatten()
        per_env.append(rows[torch.randperm(len(rows), generator=generator)])

    if min_distinct_envs <= 1:
        order = torch.cat(per_env)
    else:
        longest = max(len(rows) for rows in per_env)
        dealt = [rows[j] for j in range(longest) for rows in per_env if j < len(rows)]
        order = torch.stack(dealt)

    required = min(min_distinct_envs, len(envs))
    batches: list[torch.Tensor] = []
    for start in range(0, len(order), minibatch_size):
        chunk = order[start : start + minibatch_size]
        narrow = len(torch.unique(env_ids[chunk])) < required
        if batches and (narrow or len(chunk) < minibatch_size // 2):
            batches[-1] = torch.cat([batches[-1], chunk])
        else:
            batches.append(chunk)
    return batches


def denoising_means(
    net: NoisePredictor, schedule: NoiseSchedule, batch: DenoisingBatch, sampler: SamplerKind
) -> torch.Tensor:
    eps = net(batch.a_k, batch.obs, batch.k_from, batch.instruction)
    if sampler == "ddim":
        return ddim_step(schedule, batch.k_from, batch.k_to, batch.a_k, eps)
    return ddpm_posterior_mean(schedule, batch.k_from, batch.a_k, eps)


def _ratio_stats(
    logp_new: torch.Tensor, logp_old: torch.Tensor, clip_eps: float
) -> tuple[torch.Tensor, dict[str, float]]:
    ratio = torch.exp(logp_new - logp_old)
    if not bool(torch.isfinite(ratio).all()):
        raise NonFiniteRatioError(
            "Non-finite PPO ratio; the reverse-step variance floor is too small for this update"
        )
    with torch.no_grad():
        stats = {
            "mean_ratio": float(ratio.mean()),
            "clip_fraction": float(((ratio - 1.0).abs() > clip_eps).double().mean()),
            "approx_kl": float((logp_old - logp_new).mean()),
        }
    return ratio, stats


def ppo_loss(
    net: NoisePredictor,
    old_net: NoisePredictor,
    schedule: NoiseSchedule,
    batch: DenoisingBatch,
    clip_eps: float,
    sampler: SamplerKind = "ddim",
    kl_coef: float = 0.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Negated clipped surrogate averaged over all (decision, denoising step) rows."""
    logp_new = step_log_likelihood(denoising_means(net, schedule, batch, sampler), batch.var, batch.a_next)
    with torch.no_grad():
        old_mean = denoising_means(old_net, schedule, batch, sampler)
        logp_old = step_log_likelihood(old_mean, batch.var, batch.a_next)
    ratio, stats = _ratio_stats(logp_new, logp_old, clip_eps)
    loss = -clipped_surrogate(ratio, batch.advantages, clip_eps).mean()
    if kl_coef > 0.0:
        loss = loss + kl_coef * (logp_old - logp_new).mean()
    return loss, stats


def gaussian_ppo_loss(
    head: GaussianHead,
    old_head: GaussianHead,
    batch: GaussianBatch,
    clip_eps: float,
    entropy_coef: float = 0.0,
    kl_coef: float = 0.0,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Clipped surrogate with one likelihood ratio per environment decision."""
    logp_new = gaussian_log_prob(head, batch.obs, batch.chunk)
    with torch.no_grad():
        logp_old = gaussian_log_prob(old_head, batch.obs, batch.chunk)
    ratio, stats = _ratio_stats(logp_new, logp_old, clip_eps)
    loss = -clipped_surrogate(ratio, batch.advantages, clip_eps).mean()
    if entropy_coef > 0.0:
        loss = loss - entropy_coef * head.distribution(batch.obs).entropy().sum(dim=-1).mean()
    if kl_coef > 0.0:
        loss = loss + kl_coef * (logp_old - logp_new).mean()
    return loss, stats


class _Batch(Protocol):
    env_id: torch.Tensor
    obs: torch.Tensor
    advantages: torch.Tensor
    returns: torch.Tensor

    def select(self, index: torch.Tensor) -> Any: ...

    def __len__(self) -> int: ...


@dataclass
class _Strategy:
    """What differs between diffusion PPO and Gaussian PPO."""
    make_sampler: Callable[[nn.Module], ChunkSampler]
    flatten: Callable[[list[Transition]], _Batch]
    loss: Callable[[nn.Module, nn.Module, _Batch], tuple[torch.Tensor, dict[str, float]]]
    probe: Callable[[nn.Module], float]


@dataclass
class RLResult:
    policy: nn.Module
    value_net: ValueNet
    metrics: list[dict[str, Any]] = field(default_factory=list)

    @property
    def final_success(self) -> float:
        return float(self.metrics[-1]["success"]) if self.metrics else 0.0


IterationHook = Callable[[int, dict[str, Any]], None]


def _probe_obs(tasks: Sequence[TaskSpec], seed: int, env_cfg: EnvConfig | None) -> np.ndarray:
    env = make_env(tasks[0], env_cfg)
    return env.reset(seed_block("probe", seed, 1)[0])


def _ppo_loop(
    policy: nn.Module,
    value_net: ValueNet,
    tasks: Sequence[TaskSpec],
    cfg: PPOConfig,
    seed: int,
    strategy: _Strategy,
    env_cfg: EnvConfig | None,
    workers: int,
    on_iteration: IterationHook | None,
    label: str,
) -> RLResult:
    if not tasks:
        raise ContractViolation("train_rl needs at least one task")
    if cfg.iterations * cfg.n_envs > RUN_STRIDE:
        raise ConfigurationError("iterations * n_envs exceeds the per-run training seed block")
    policy_opt = torch.optim.Adam(policy.parameters(), lr=cfg.lr_max)
    value_opt = torch.optim.Adam(value_net.parameters(), lr=cfg.value_lr)
    scheduler = None
    if cfg.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            policy_opt, T_max=cfg.lr_period or cfg.iterations, eta_min=cfg.lr_min
        )
    generator = torch.Generator().manual_seed(seed)
    result = RLResult(policy=policy, value_net=value_net)
    running_max = 0.0

    for iteration in range(cfg.iterations):
        lr = float(policy_opt.param_groups[0]["lr"])
        old = snapshot(policy)
        seeds = seed_block("train", seed, cfg.n_envs, offset=iteration * cfg.n_envs)
        rollout = vector_rollout(
            strategy.make_sampler(old), tasks, cfg.n_envs, seeds, env_cfg=env_cfg, workers=workers
        )
        attach_advantages(rollout, value_net, cfg.gamma, cfg.lam)
        data = strategy.flatten(rollout.transitions)
        if cfg.normalize_advantages:
            data.advantages = normalize_advantages(data.advantages)

        stats_log: list[dict[str, float]] = []
        policy.train()
        for _epoch in range(cfg.epochs):
            for index in build_minibatches(data.env_id, cfg.minibatch_size, cfg.min_distinct_envs, generator):
                rows = data.select(index)
                loss_pi, stats = strategy.loss(policy, old, rows)
                loss_v = value_loss(value_net, rows.obs, rows.returns)
                policy_opt.zero_grad()
                value_opt.zero_grad()
                (loss_pi + cfg.vf_coef * loss_v).backward()
                nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
                nn.utils.clip_grad_norm_(value_net.parameters(), cfg.max_grad_norm)
                policy_opt.step()
                value_opt.step()
                stats_log.append({**stats, "policy_loss": float(loss_pi), "value_loss": float(loss_v)})
        policy.eval()
        if scheduler is not None:
            scheduler.step()

        probe = strategy.probe(policy)
        success = rollout.success_rate
        running_max = max(running_max, success)
        collapse = probe < cfg.collapse_variance_floor and success <= running_max - cfg.collapse_drop
        row: dict[str, Any] = {
            "iteration": iteration,
            "success": success,
            "mean_return": rollout.mean_return,
            "lr": lr,
            "variance_probe": probe,
            "collapse_warning": collapse,
        }
        for key in ("mean_ratio", "clip_fraction", "approx_kl", "policy_loss", "value_loss"):
            row[key] = float(np.mean([s[key] for s in stats_log]))
        result.metrics.append(row)
        if collapse:
            logger.warning(
                f"{label} iteration {iteration}: possible mode collapse "
                f"(variance {probe:.2e}, success {success:.2f} vs best {running_max:.2f})"
            )
        logger.info(
            f"{label} iteration {iteration}: success {success:.2f}, return {row['mean_return']:.3f}, "
            f"clip {row['clip_fraction']:.3f}, lr {lr:.2e}"
        )
        if on_iteration is not None:
            on_iteration(iteration, row)
    return result


def train_rl(
    net: NoisePredictor,
    value_net: ValueNet,
    tasks: Sequence[TaskSpec],
    cfg: PPOConfig,
    seed: int,
    schedule: NoiseSchedule,
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
    on_iteration: IterationHook | None = None,
) -> RLResult:
    """PPO over denoising steps.

    Rollouts sample stochastically from a frozen snapshot, with reverse-step
    variances clamped below by ``cfg.exploration_std_min ** 2``.

    Args:
        net: warm-started noise predictor, updated in place
        value_net: critic, updated in place
        tasks: training tasks, assigned round-robin to environments
        cfg: PPO hyperparameters
        seed: run seed (environment seeds, minibatch order, probe state)
        schedule: noise schedule the policy was trained with
        env_cfg: environment constants
        workers: rollout threads
        on_iteration: called with ``(iteration, metrics_row)`` after each update

    Returns:
        The trained networks and one metrics row per iteration.
    """
    probe_obs = _probe_obs(tasks, seed, env_cfg)
    probe_instr = tasks[0].instruction_id

    def make_sampler(old: nn.Module) -> ChunkSampler:
        return DiffusionPolicy(
            old,  # type: ignore[arg-type]
            schedule,
            mode="stochastic",
            sampler=cfg.rollout_sampler,
            exploration_std_min=cfg.exploration_std_min,
        )

    def flatten(transitions: list[Transition]) -> _Batch:
        dtype = next(net.parameters()).dtype
        instr = None
        if net.instruction_embed is not None:
            instr = [tasks[t.env_id % len(tasks)].instruction_id for t in transitions]
        return flatten_denoising(transitions, dtype, instr)

    def loss(policy: nn.Module, old: nn.Module, rows: _Batch) -> tuple[torch.Tensor, dict[str, float]]:
        return ppo_loss(policy, old, schedule, rows, cfg.clip_eps, cfg.rollout_sampler, cfg.kl_coef)  # type: ignore[arg-type]

    def probe(policy: nn.Module) -> float:
        return variance_probe(policy, schedule, probe_obs, cfg.probe_samples, seed, probe_instr)  # type: ignore[arg-type]

    strategy = _Strategy(make_sampler=make_sampler, flatten=flatten, loss=loss, probe=probe)
    return _ppo_loop(net, value_net, tasks, cfg, seed, strategy, env_cfg, workers, on_iteration, "RL")


def train_rl_gaussian(
    head: GaussianHead,
    value_net: ValueNet,
    tasks: Sequence[TaskSpec],
    cfg: PPOConfig,
    seed: int,
    env_cfg: EnvConfig | None = None,
    workers: int = 1,
    on_iteration: IterationHook | None = None,
) -> RLResult:
    """Standard PPO with a Gaussian chunk head; same loop as :func:`train_rl`."""
    probe_obs = torch.as_tensor(_probe_obs(tasks, seed, env_cfg))

    def make_sampler(old: nn.Module) -> ChunkSampler:
        return GaussianPolicy(old, mode="stochastic")  # type: ignore[arg-type]

    def flatten(transitions: list[Transition]) -> _Batch:
        return flatten_decisions(transitions, next(head.parameters()).dtype)

    def loss(policy: nn.Module, old: nn.Module, rows: _Batch) -> tuple[torch.Tensor, dict[str, float]]:
        return gaussian_ppo_loss(policy, old, rows, cfg.clip_eps, cfg.entropy_coef, cfg.kl_coef)  # type: ignore[arg-type]

    @torch.no_grad()
    def probe(policy: nn.Module) -> float:
        dist = policy.distribution(probe_obs.to(next(policy.parameters()).dtype).unsqueeze(0))  # type: ignore[operator]
        return float(dist.variance.mean())

    strategy = _Strategy(make_sampler=make_sampler, flatten=flatten, loss=loss, probe=probe)
    return _ppo_loop(head, value_net, tasks, cfg, seed, strategy, env_cfg, workers, on_iteration, "Gaussian RL")
