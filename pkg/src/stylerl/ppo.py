"""On-policy actor-critic: Gaussian policy, GAE, clipped-surrogate updates.

The policy observation is the concatenation [proprio, command, one-hot style
selector]; one network hosts all styles. Updates use total reward = gated
task reward + style reward, computed by the caller into the rollout batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from stylerl import blob
from stylerl.errors import CheckpointError, TrainingDivergenceError
from stylerl.nets import Adam, Mlp

LOG_2PI = math.log(2.0 * math.pi)

_POLICY_MAGIC = b"SRLPOL01"


def one_hot(style_index: int, n_styles: int) -> np.ndarray:
    if not 0 <= style_index < n_styles:
        raise ValueError(f"style index {style_index} out of range [0, {n_styles})")
    v = np.zeros(n_styles)
    v[style_index] = 1.0
    return v


def one_hot_batch(style_indices: np.ndarray, n_styles: int) -> np.ndarray:
    idx = np.asarray(style_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= n_styles):
        raise ValueError(f"style indices out of range [0, {n_styles})")
    out = np.zeros((idx.size, n_styles))
    out[np.arange(idx.size), idx] = 1.0
    return out


@dataclass(frozen=True)
class Observation:
    """Typed view of one policy input."""

    proprio: np.ndarray
    command: np.ndarray
    style_selector: np.ndarray

    def __post_init__(self):
        sel = np.asarray(self.style_selector, dtype=np.float64)
        if not (np.all((sel == 0.0) | (sel == 1.0)) and sel.sum() == 1.0):
            raise ValueError(f"style selector must be one-hot, got {sel}")
        object.__setattr__(self, "proprio", np.asarray(self.proprio, dtype=np.float64))
        object.__setattr__(self, "command", np.asarray(self.command, dtype=np.float64))
        object.__setattr__(self, "style_selector", sel)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.proprio, self.command, self.style_selector])


def build_observation(proprio, command, style_index: int, n_styles: int) -> Observation:
    return Observation(proprio, command, one_hot(style_index, n_styles))


def flat_observation_batch(proprio: np.ndarray, commands: np.ndarray,
                           style_indices: np.ndarray, n_styles: int) -> np.ndarray:
    return np.concatenate([proprio, commands, one_hot_batch(style_indices, n_styles)], axis=1)


class GaussianPolicy:
    """Diagonal Gaussian over actions; state-independent learnable log std."""

    def __init__(self, mean_net: Mlp, log_std: np.ndarray | None = None):
        self.mean_net = mean_net
        if log_std is None:
            log_std = np.zeros(mean_net.out_dim)
        self.log_std = np.asarray(log_std, dtype=np.float64)
        if self.log_std.shape != (mean_net.out_dim,):
            raise ValueError("log_std shape must match the action dimension")

    @property
    def obs_dim(self) -> int:
        return self.mean_net.in_dim

    @property
    def action_dim(self) -> int:
        return self.mean_net.out_dim

    def param_list(self) -> list[np.ndarray]:
        return self.mean_net.param_list() + [self.log_std]

    def log_prob(self, mean: np.ndarray, actions: np.ndarray) -> np.ndarray:
        inv_var = np.exp(-2.0 * self.log_std)
        diff = actions - mean
        return -0.5 * np.sum(diff * diff * inv_var, axis=-1) \
            - np.sum(self.log_std) - 0.5 * self.action_dim * LOG_2PI

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.action_dim * (1.0 + LOG_2PI))

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False):
        """Sample (or take the mean) and return (action, log_prob)."""
        single = np.asarray(obs).ndim == 1
        mean = self.mean_net.forward(obs)
        mean2 = mean[None, :] if single else mean
        if deterministic:
            actions = mean2
        else:
            if rng is None:
                raise ValueError("stochastic action sampling needs an rng")
            std = np.exp(self.log_std)
            actions = mean2 + std * rng.standard_normal(mean2.shape)
        logp = self.log_prob(mean2, actions)
        if single:
            return actions[0], float(logp[0])
        return actions, logp

    def to_bytes(self) -> bytes:
        w = blob.Writer()
        w.raw(_POLICY_MAGIC)
        inner = self.mean_net.to_bytes()
        w.u64(len(inner))
        w.raw(inner)
        w.array(self.log_std)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GaussianPolicy":
        r = blob.Reader(data)
        r.expect_magic(_POLICY_MAGIC, "policy blob")
        net = Mlp.from_bytes(r.raw(r.u64()))
        log_std = r.array()
        if not r.done():
            raise CheckpointError("trailing bytes in policy blob")
        return cls(net, log_std)


class ActorCritic:
    def __init__(self, policy: GaussianPolicy, value_net: Mlp):
        if value_net.out_dim != 1:
            raise ValueError("value net must have scalar output")
        if value_net.in_dim != policy.obs_dim:
            raise ValueError("policy and value nets must share the observation width")
        self.policy = policy
        self.value_net = value_net

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False):
        """Returns (action, log_prob, value) for one observation or a batch."""
        action, logp = self.policy.act(obs, rng, deterministic)
        value = self.value_net.forward(obs)
        single = np.asarray(obs).ndim == 1
        return action, logp, (float(value[0]) if single else value[:, 0])


# --------------------------------------------------------------------------
# Generalized advantage estimation
# --------------------------------------------------------------------------


def compute_gae(rewards, values, terminals, bootstrap_value, gamma: float = 0.99,
                lam: float = 0.95):
    """GAE over time-major arrays.

    ``rewards``/``values``/``terminals`` are (T,) or (T, E); ``terminals``
    marks steps that ended an episode (no bootstrapping across them).
    ``bootstrap_value`` is V(s_T) per environment, used where the final step
    is non-terminal. Returns (advantages, returns) with
    returns = advantages + values.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lam must lie in [0, 1]")
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    cont = 1.0 - np.asarray(terminals, dtype=np.float64)
    if r.shape != v.shape or r.shape != cont.shape:
        raise ValueError("rewards, values, terminals must share one shape")
    if r.ndim not in (1, 2) or r.shape[0] == 0:
        raise ValueError("expected non-empty (T,) or (T, E) arrays")
    boot = np.asarray(bootstrap_value, dtype=np.float64)
    expected_boot = () if r.ndim == 1 else (r.shape[1],)
    if boot.shape != expected_boot:
        raise ValueError(f"bootstrap_value shape {boot.shape} != {expected_boot}")

    horizon = r.shape[0]
    adv = np.zeros_like(r)
    lastgaelam = np.zeros_like(boot, dtype=np.float64)
    for t in range(horizon - 1, -1, -1):
        next_value = boot if t == horizon - 1 else v[t + 1]
        delta = r[t] + gamma * next_value * cont[t] - v[t]
        lastgaelam = delta + gamma * lam * cont[t] * lastgaelam
        adv[t] = lastgaelam
    return adv, adv + v


# --------------------------------------------------------------------------
# PPO update
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch_size: int = 1024
    entropy_coef: float = 0.005
    learning_rate: float = 3e-4


@dataclass
class RolloutBatch:
    """Time-major storage of one epoch of experience from all environments.

    ``task_rewards`` are post-gating; ``style_rewards`` are already scaled by
    the per-style reward scale. Extra diagnostic arrays are optional.
    """

    obs: np.ndarray  # (T, E, D)
    actions: np.ndarray  # (T, E, A)
    log_probs: np.ndarray  # (T, E)
    values: np.ndarray  # (T, E)
    task_rewards: np.ndarray  # (T, E)
    style_rewards: np.ndarray  # (T, E)
    terminals: np.ndarray  # (T, E) bool
    style_idx: np.ndarray  # (T, E) int
    bootstrap_value: np.ndarray  # (E,)
    raw_task_rewards: np.ndarray | None = None
    switched: np.ndarray | None = None
    steps_since_switch: np.ndarray | None = None

    def __post_init__(self):
        t, e = self.log_probs.shape
        expected = {
            "obs": self.obs.shape[:2],
            "actions": self.actions.shape[:2],
            "values": self.values.shape,
            "task_rewards": self.task_rewards.shape,
            "style_rewards": self.style_rewards.shape,
            "terminals": self.terminals.shape,
            "style_idx": self.style_idx.shape,
        }
        for name, shape in expected.items():
            if tuple(shape) != (t, e):
                raise ValueError(f"rollout field {name} has shape {shape}, expected ({t}, {e})")
        if self.bootstrap_value.shape != (e,):
            raise ValueError("bootstrap_value must have one entry per environment")

    @property
    def horizon(self) -> int:
        return self.log_probs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.log_probs.shape[1]

    @property
    def total_rewards(self) -> np.ndarray:
        return self.task_rewards + self.style_rewards


def clipped_surrogate(ratio: np.ndarray, advantages: np.ndarray, clip_eps: float) -> np.ndarray:
    """Per-sample PPO objective min(r A, clip(r) A)."""
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return np.minimum(ratio * advantages, clipped * advantages)


def policy_loss_and_grads(policy: GaussianPolicy, obs: np.ndarray, actions: np.ndarray,
                          old_log_probs: np.ndarray, advantages: np.ndarray,
                          clip_eps: float, entropy_coef: float):
    """Clipped-surrogate loss with entropy bonus; exact gradients.

    Returns (loss, grads, info) where grads aligns with policy.param_list()
    and info carries kl / clip_frac / entropy diagnostics.
    """
    n = obs.shape[0]
    mean, cache = policy.mean_net.forward_cached(obs)
    logp = policy.log_prob(mean, actions)
    ratio = np.exp(logp - old_log_probs)
    surr_raw = ratio * advantages
    objective = clipped_surrogate(ratio, advantages, clip_eps)
    entropy = policy.entropy()
    loss = -float(np.mean(objective)) - entropy_coef * entropy
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite policy loss")

    # gradient flows only through samples where the unclipped term is active
    active = surr_raw <= np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * advantages
    dloss_dlogp = -(advantages * ratio * active) / n

    inv_var = np.exp(-2.0 * policy.log_std)
    diff = actions - mean
    upstream_mean = dloss_dlogp[:, None] * diff * inv_var
    grads, _ = policy.mean_net.backward_from_cache(cache, upstream_mean)
    dlogp_dlogstd = diff * diff * inv_var - 1.0
    g_logstd = dlogp_dlogstd.T @ dloss_dlogp - entropy_coef
    grads.append(g_logstd)

    info = {
        "kl": float(np.mean(old_log_probs - logp)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_eps)),
        "entropy": entropy,
    }
    return loss, grads, info


def value_loss_and_grads(value_net: Mlp, obs: np.ndarray, returns: np.ndarray):
    """Half mean-squared value regression loss and its gradients."""
    n = obs.shape[0]
    v, cache = value_net.forward_cached(obs)
    err = v[:, 0] - returns
    loss = 0.5 * float(np.mean(err * err))
    if not np.isfinite(loss):
        raise TrainingDivergenceError("non-finite value loss")
    grads, _ = value_net.backward_from_cache(cache, (err / n)[:, None])
    return loss, grads


@dataclass
class PpoStats:
    kl: float
    clip_frac: float
    policy_loss: float
    value_loss: float
    entropy: float
    n_minibatches: int


def ppo_update(policy: GaussianPolicy, value_net: Mlp, policy_opt: Adam, value_opt: Adam,
               batch: RolloutBatch, cfg: PpoConfig, rng: np.random.Generator) -> PpoStats:
    """Multiple epochs of shuffled minibatch updates on one rollout batch.

    Advantages use total reward (task + style), are computed with GAE over
    the time axis, and are normalized once over the whole batch.
    """
    adv, returns = compute_gae(batch.total_rewards, batch.values, batch.terminals,
                               batch.bootstrap_value, cfg.gamma, cfg.lam)
    t, e = batch.log_probs.shape
    n = t * e
    obs = batch.obs.reshape(n, -1)
    actions = batch.actions.reshape(n, -1)
    old_logp = batch.log_probs.reshape(n)
    adv = adv.reshape(n)
    returns = returns.reshape(n)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    stats = np.zeros(5)
    count = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start : start + cfg.minibatch_size]
            p_loss, p_grads, info = policy_loss_and_grads(
                policy, obs[idx], actions[idx], old_logp[idx], adv[idx],
                cfg.clip_eps, cfg.entropy_coef)
            v_loss, v_grads = value_loss_and_grads(value_net, obs[idx], returns[idx])
            policy_opt.step(policy.param_list(), p_grads)
            value_opt.step(value_net.param_list(), v_grads)
            stats += (info["kl"], info["clip_frac"], p_loss, v_loss, info["entropy"])
            count += 1
    stats /= max(count, 1)
    return PpoStats(kl=stats[0], clip_frac=stats[1], policy_loss=stats[2],
                    value_loss=stats[3], entropy=stats[4], n_minibatches=count)
