"""Training orchestration: rollouts, style rewards, discriminator and PPO
updates, metrics, checkpoints, and evaluation.

Epoch structure (synchronous two-phase):

1. every environment advances ``rollout_steps`` steps under a frozen policy;
2. per-style: style rewards are computed from the frozen discriminator and
   the epoch-start normalizer statistics, descriptors are pushed into the
   style buffer, and the normalizer folds in the new policy-side rows;
3. non-data-free styles whose buffers are warm run their discriminator
   updates (normalizer frozen for the whole update);
4. one PPO update on the combined batch with total reward = gated task
   reward + scaled style reward.

Runs are bit-reproducible: all randomness flows from named streams spawned
off the run seed, and checkpoints capture every stream plus buffers,
normalizers, optimizer moments, and live environment state.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stylerl import blob, checkpoint as ckpt_io
from stylerl.adversary import (
    StyleSlot,
    heldout_accuracy,
    make_style_slot,
    push_policy_descriptor,
    slot_logits,
    style_reward_from_logit,
    update_discriminator,
)
from stylerl.envs import (
    EnvConfig,
    PushConfig,
    ReacherVecEnv,
    SingleEnv,
    SweepTask,
    allocate_envs,
    build_env,
    parse_task,
)
from stylerl.errors import (
    ClipError,
    ConfigError,
    IncompatibleCheckpointError,
    TrainingDivergenceError,
)
from stylerl.motion import MotionDataset, load_clip, reverse_clip
from stylerl.nets import Adam, Mlp
from stylerl.ppo import GaussianPolicy, PpoConfig, PpoStats, RolloutBatch, ppo_update

log = logging.getLogger(__name__)

_MISSING = object()


def _take(doc: dict, key: str, default=_MISSING, where: str = "config"):
    if key in doc:
        return doc.pop(key)
    if default is _MISSING:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return default


def _reject_unknown(doc: dict, where: str):
    if doc:
        raise ConfigError(f"{where}: unknown keys {sorted(doc)}")


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StyleSpec:
    name: str
    task: dict
    clips: tuple[str, ...] = ()
    reverse_clips: bool = False
    data_free: bool = False
    env_weight: int = 1
    reward_scale: float = 1.0

    def __post_init__(self):
        parse_task(self.task)  # validates kind and keys
        if self.data_free and self.clips:
            raise ConfigError(f"style {self.name!r}: data-free styles cannot list clips")
        if not self.data_free and not self.clips:
            raise ConfigError(f"style {self.name!r}: list clips or declare data_free")
        if not isinstance(self.env_weight, int) or self.env_weight < 1:
            raise ConfigError(f"style {self.name!r}: env_weight must be a positive integer")

    @classmethod
    def from_dict(cls, doc: dict, where: str) -> "StyleSpec":
        doc = dict(doc)
        kwargs = {
            "name": _take(doc, "name", where=where),
            "task": _take(doc, "task", where=where),
            "clips": tuple(_take(doc, "clips", ())),
            "reverse_clips": bool(_take(doc, "reverse_clips", False)),
            "data_free": bool(_take(doc, "data_free", False)),
            "env_weight": _take(doc, "env_weight", 1),
            "reward_scale": float(_take(doc, "reward_scale", 1.0)),
        }
        _reject_unknown(doc, where)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "task": self.task,
            "clips": list(self.clips),
            "reverse_clips": self.reverse_clips,
            "data_free": self.data_free,
            "env_weight": self.env_weight,
            "reward_scale": self.reward_scale,
        }


@dataclass(frozen=True)
class DiscConfig:
    hidden: tuple[int, ...] = (256, 256)
    activation: str = "tanh"
    batch_size: int = 512
    updates_per_epoch: int = 2
    grad_penalty: float = 10.0
    buffer_capacity: int = 100_000
    learning_rate: float = 1e-3
    holdout_every: int = 8

    def __post_init__(self):
        if self.batch_size < 1 or self.updates_per_epoch < 0 or self.buffer_capacity < 1:
            raise ConfigError("discriminator batch/updates/buffer sizes out of range")
        if self.grad_penalty < 0:
            raise ConfigError("grad_penalty must be non-negative")

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscConfig":
        doc = dict(doc)
        kwargs = {}
        for key in ("hidden", "activation", "batch_size", "updates_per_epoch",
                    "grad_penalty", "buffer_capacity", "learning_rate", "holdout_every"):
            if key in doc:
                value = doc.pop(key)
                kwargs[key] = tuple(value) if key == "hidden" else value
        _reject_unknown(doc, "discriminator config")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def _net_from_dict(doc: dict, where: str, defaults: dict) -> dict:
    doc = dict(doc)
    out = dict(defaults)
    for key in defaults:
        if key in doc:
            value = doc.pop(key)
            out[key] = tuple(value) if key == "hidden" else value
    _reject_unknown(doc, where)
    return out


@dataclass(frozen=True)
class TrainerConfig:
    styles: tuple[StyleSpec, ...]
    seed: int = 0
    epochs: int = 100
    n_envs: int = 256
    rollout_steps: int = 32
    checkpoint_interval: int = 0
    gate_log_epochs: int = 0
    out_dir: str | None = None
    env: EnvConfig = field(default_factory=EnvConfig)
    policy_hidden: tuple[int, ...] = (256, 128)
    policy_activation: str = "tanh"
    log_std_init: float = 0.0
    value_hidden: tuple[int, ...] = (256, 128)
    value_activation: str = "tanh"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)

    def __post_init__(self):
        if not self.styles:
            raise ConfigError("need at least one style")
        if self.n_envs < len(self.styles):
            raise ConfigError(f"n_envs={self.n_envs} is fewer than {len(self.styles)} styles")
        if self.epochs < 1 or self.rollout_steps < 1:
            raise ConfigError("epochs and rollout_steps must be >= 1")
        names = [s.name for s in self.styles]
        if len(set(names)) != len(names):
            raise ConfigError(f"style names must be unique, got {names}")

    @property
    def n_styles(self) -> int:
        return len(self.styles)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainerConfig":
        doc = dict(doc)
        styles_doc = _take(doc, "styles")
        if not isinstance(styles_doc, list):
            raise ConfigError("'styles' must be an array")
        styles = tuple(
            StyleSpec.from_dict(s, f"styles[{i}]") for i, s in enumerate(styles_doc)
        )
        kwargs: dict = {"styles": styles}
        for key in ("seed", "epochs", "n_envs", "rollout_steps", "checkpoint_interval",
                    "gate_log_epochs", "out_dir"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        if "env" in doc:
            kwargs["env"] = EnvConfig.from_dict(doc.pop("env"))
        if "policy" in doc:
            net = _net_from_dict(doc.pop("policy"), "policy config",
                                 {"hidden": (256, 128), "activation": "tanh", "log_std_init": 0.0})
            kwargs["policy_hidden"] = net["hidden"]
            kwargs["policy_activation"] = net["activation"]
            kwargs["log_std_init"] = net["log_std_init"]
        if "value" in doc:
            net = _net_from_dict(doc.pop("value"), "value config",
                                 {"hidden": (256, 128), "activation": "tanh"})
            kwargs["value_hidden"] = net["hidden"]
            kwargs["value_activation"] = net["activation"]
        if "ppo" in doc:
            ppo_doc = dict(doc.pop("ppo"))
            ppo_kwargs = {}
            for key in PpoConfig.__dataclass_fields__:
                if key in ppo_doc:
                    ppo_kwargs[key] = ppo_doc.pop(key)
            _reject_unknown(ppo_doc, "ppo config")
            kwargs["ppo"] = PpoConfig(**ppo_kwargs)
        if "discriminator" in doc:
            kwargs["disc"] = DiscConfig.from_dict(doc.pop("discriminator"))
        _reject_unknown(doc, "config")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        env = self.env
        doc = {
            "seed": self.seed,
            "epochs": self.epochs,
            "n_envs": self.n_envs,
            "rollout_steps": self.rollout_steps,
            "checkpoint_interval": self.checkpoint_interval,
            "gate_log_epochs": self.gate_log_epochs,
            "out_dir": self.out_dir,
            "env": {
                "kind": env.kind,
                "horizon": env.horizon,
                "switch_prob": env.switch_prob,
                "buffer_steps": env.buffer_steps,
                "command_interval": env.command_interval,
                "descriptor": env.descriptor,
                "qd_limit": env.qd_limit,
                "push": {
                    "enabled": env.push.enabled,
                    "window": list(env.push.window),
                    "magnitude": list(env.push.magnitude),
                    "fixed_step": env.push.fixed_step,
                    "fixed_delta": list(env.push.fixed_delta) if env.push.fixed_delta else None,
                },
                "physics": dataclasses.asdict(env.reacher),
            },
            "styles": [s.to_dict() for s in self.styles],
            "policy": {"hidden": list(self.policy_hidden), "activation": self.policy_activation,
                       "log_std_init": self.log_std_init},
            "value": {"hidden": list(self.value_hidden), "activation": self.value_activation},
            "ppo": dataclasses.asdict(self.ppo),
            "discriminator": self.disc.to_dict(),
        }
        return doc

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("out_dir")  # output location does not affect the run semantics
        canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> TrainerConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return TrainerConfig.from_dict(doc)


def load_style_dataset(spec: StyleSpec) -> MotionDataset:
    if spec.data_free:
        return MotionDataset(spec.name)
    clips = []
    for raw_path in spec.clips:
        path = Path(raw_path)
        if not path.exists():
            raise ConfigError(f"style {spec.name!r}: dataset file not found: {path}")
        try:
            clip = load_clip(path)
        except ClipError as exc:
            raise ConfigError(f"style {spec.name!r}: {exc}") from None
        clips.append(reverse_clip(clip) if spec.reverse_clips else clip)
    return MotionDataset(spec.name, tuple(clips))


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def metrics_header(n_styles: int) -> list[str]:
    cols = ["epoch"]
    for i in range(n_styles):
        cols += [
            f"style{i}_task_reward_mean",
            f"style{i}_style_reward_mean",
            f"style{i}_disc_loss",
            f"style{i}_disc_accuracy",
        ]
    cols += ["ppo_kl", "ppo_clip_frac", "policy_loss", "value_loss", "steps_per_sec"]
    return cols


def _fmt(x) -> str:
    return repr(float(x))


@dataclass
class EpochReport:
    epoch: int
    task_reward_mean: list[float]
    style_reward_mean: list[float]
    disc_loss: list[float]
    disc_accuracy: list[float]
    ppo: PpoStats
    steps_per_sec: float

    def to_row(self) -> list[str]:
        row = [str(self.epoch)]
        for i in range(len(self.task_reward_mean)):
            row += [_fmt(self.task_reward_mean[i]), _fmt(self.style_reward_mean[i]),
                    _fmt(self.disc_loss[i]), _fmt(self.disc_accuracy[i])]
        row += [_fmt(self.ppo.kl), _fmt(self.ppo.clip_frac), _fmt(self.ppo.policy_loss),
                _fmt(self.ppo.value_loss), _fmt(self.steps_per_sec)]
        return row


# --------------------------------------------------------------------------
# Trainer
# --------------------------------------------------------------------------


class Trainer:
    def __init__(self, config: TrainerConfig, out_dir):
        self.config = config
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.epoch = 0

        n = config.n_styles
        root = np.random.SeedSequence(config.seed)
        ss_init, ss_action, ss_ppo, ss_disc, ss_env = root.spawn(5)
        init_streams = ss_init.spawn(2 + n)
        self.action_rng = np.random.Generator(np.random.PCG64(ss_action))
        self.ppo_rng = np.random.Generator(np.random.PCG64(ss_ppo))
        self.disc_rngs = [np.random.Generator(np.random.PCG64(s)) for s in ss_disc.spawn(n)]
        env_rngs = [np.random.Generator(np.random.PCG64(s)) for s in ss_env.spawn(config.n_envs)]

        tasks = [parse_task(s.task) for s in config.styles]
        counts = allocate_envs([s.env_weight for s in config.styles], config.n_envs)
        self.allocation = counts
        initial_styles = np.repeat(np.arange(n), counts)
        self.env = build_env(config.env, tasks, config.n_envs, initial_styles, env_rngs)

        datasets = [load_style_dataset(s) for s in config.styles]
        for spec, dataset in zip(config.styles, datasets):
            if dataset.is_empty:
                continue
            if dataset.fields != tuple(self.env.descriptor_fields):
                raise ConfigError(
                    f"style {spec.name!r}: clip fields {[f.name for f in dataset.fields]} do not "
                    f"match the environment descriptor {[f.name for f in self.env.descriptor_fields]}"
                )
            for clip in dataset.clips:
                if clip.dt != self.env.control_dt:
                    raise ConfigError(
                        f"style {spec.name!r}: clip {clip.name!r} dt={clip.dt} != control period "
                        f"{self.env.control_dt}; clips are never resampled"
                    )

        width = 2 * self.env.d_d
        self.slots: list[StyleSlot] = []
        for i, (spec, dataset) in enumerate(zip(config.styles, datasets)):
            slot = make_style_slot(
                i, spec.name, dataset, width,
                np.random.Generator(np.random.PCG64(init_streams[2 + i])),
                hidden=config.disc.hidden, activation=config.disc.activation,
                buffer_capacity=config.disc.buffer_capacity,
                learning_rate=config.disc.learning_rate,
                env_weight=spec.env_weight, reward_scale=spec.reward_scale,
                holdout_every=config.disc.holdout_every,
            )
            self.slots.append(slot)

        obs_dim = self.env.obs_dim
        act_dim = self.env.action_dim
        mean_net = Mlp([obs_dim, *config.policy_hidden, act_dim],
                       hidden=config.policy_activation,
                       rng=np.random.Generator(np.random.PCG64(init_streams[0])))
        self.policy = GaussianPolicy(mean_net, np.full(act_dim, config.log_std_init))
        self.value_net = Mlp([obs_dim, *config.value_hidden, 1],
                             hidden=config.value_activation,
                             rng=np.random.Generator(np.random.PCG64(init_streams[1])))
        self.policy_opt = Adam(self.policy.param_list(), config.ppo.learning_rate)
        self.value_opt = Adam(self.value_net.param_list(), config.ppo.learning_rate)

    # ----- rollout + annotation ---------------------------------------------

    def _collect_rollout(self):
        cfg = self.config
        horizon, n_envs = cfg.rollout_steps, cfg.n_envs
        obs_dim, act_dim = self.env.obs_dim, self.env.action_dim
        width = 2 * self.env.d_d
        obs = np.empty((horizon, n_envs, obs_dim))
        actions = np.empty((horizon, n_envs, act_dim))
        log_probs = np.empty((horizon, n_envs))
        values = np.empty((horizon, n_envs))
        raw_rew = np.empty((horizon, n_envs))
        gated_rew = np.empty((horizon, n_envs))
        terminals = np.empty((horizon, n_envs), dtype=bool)
        switched = np.empty((horizon, n_envs), dtype=bool)
        styles = np.empty((horizon, n_envs), dtype=np.int64)
        gate_counters = np.empty((horizon, n_envs), dtype=np.int64)
        descriptors = np.empty((horizon, n_envs, width))

        std = np.exp(self.policy.log_std)
        for t in range(horizon):
            ob = self.env.observations()
            obs[t] = ob
            styles[t] = self.env.styles
            mean = self.policy.mean_net.forward(ob)
            act = mean + std * self.action_rng.standard_normal(mean.shape)
            log_probs[t] = self.policy.log_prob(mean, act)
            values[t] = self.value_net.forward(ob)[:, 0]
            actions[t] = act
            result = self.env.step(act)
            raw_rew[t] = result.raw_task_reward
            gated_rew[t] = result.task_reward
            terminals[t] = result.terminated
            switched[t] = result.switched
            gate_counters[t] = result.steps_since_switch
            descriptors[t, :, : self.env.d_d] = result.desc_prev
            descriptors[t, :, self.env.d_d :] = result.desc_next
        bootstrap = self.value_net.forward(self.env.observations())[:, 0]
        return (obs, actions, log_probs, values, raw_rew, gated_rew, terminals,
                switched, styles, gate_counters, descriptors, bootstrap)

    def _style_rewards_and_buffers(self, descriptors, styles):
        """Eq.-style rewards from frozen stats; then buffer + normalizer updates."""
        horizon, n_envs, width = descriptors.shape
        flat_styles = styles.reshape(-1)
        flat_desc = descriptors.reshape(-1, width)
        rewards = np.zeros(horizon * n_envs)
        for slot in self.slots:
            mask = flat_styles == slot.index
            if not mask.any() or slot.data_free:
                continue
            rows = flat_desc[mask]
            logits = slot_logits(slot, rows)
            rewards[mask] = style_reward_from_logit(logits) * slot.reward_scale
            push_policy_descriptor(slot, rows)
            slot.normalizer.update(rows)
        return rewards.reshape(horizon, n_envs)

    def _update_discriminators(self):
        cfg = self.config.disc
        losses, accuracies = [], []
        for slot in self.slots:
            if slot.data_free:
                losses.append(0.0)
                accuracies.append(0.0)
                continue
            if slot.ready(cfg.batch_size) and cfg.updates_per_epoch > 0:
                trace = update_discriminator(slot, cfg.batch_size, cfg.updates_per_epoch,
                                             self.disc_rngs[slot.index], cfg.grad_penalty)
                losses.append(float(np.mean(trace)))
            else:
                losses.append(0.0)  # warmup: buffer not yet filled
            accuracies.append(heldout_accuracy(slot))
        return losses, accuracies

    def _epoch_step(self):
        t_start = time.perf_counter()
        (obs, actions, log_probs, values, raw_rew, gated_rew, terminals, switched,
         styles, gate_counters, descriptors, bootstrap) = self._collect_rollout()

        style_rewards = self._style_rewards_and_buffers(descriptors, styles)
        disc_losses, disc_acc = self._update_discriminators()

        batch = RolloutBatch(
            obs=obs, actions=actions, log_probs=log_probs, values=values,
            task_rewards=gated_rew, style_rewards=style_rewards, terminals=terminals,
            style_idx=styles, bootstrap_value=bootstrap, raw_task_rewards=raw_rew,
            switched=switched, steps_since_switch=gate_counters,
        )
        ppo_stats = ppo_update(self.policy, self.value_net, self.policy_opt, self.value_opt,
                               batch, self.config.ppo, self.ppo_rng)

        task_means, style_means = [], []
        flat_styles = styles.reshape(-1)
        flat_gated = gated_rew.reshape(-1)
        flat_style_r = style_rewards.reshape(-1)
        for i in range(self.config.n_styles):
            mask = flat_styles == i
            count = max(int(mask.sum()), 1)
            task_means.append(float(flat_gated[mask].sum()) / count)
            style_means.append(float(flat_style_r[mask].sum()) / count)

        self.epoch += 1
        elapsed = time.perf_counter() - t_start
        report = EpochReport(
            epoch=self.epoch,
            task_reward_mean=task_means,
            style_reward_mean=style_means,
            disc_loss=disc_losses,
            disc_accuracy=disc_acc,
            ppo=ppo_stats,
            steps_per_sec=self.config.n_envs * self.config.rollout_steps / max(elapsed, 1e-9),
        )
        return report, batch

    # ----- metrics + gate log --------------------------------------------------

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / "metrics.csv"

    @property
    def gate_log_path(self) -> Path:
        return self.out_dir / "gate_events.csv"

    def _prepare_metrics_file(self):
        header = ",".join(metrics_header(self.config.n_styles))
        if self.epoch == 0 or not self.metrics_path.exists():
            self.metrics_path.write_text(header + "\n", encoding="utf-8")
            if self.config.gate_log_epochs > 0:
                self.gate_log_path.write_text(
                    "epoch,step,env,steps_since_switch,raw_task_reward,task_reward\n",
                    encoding="utf-8")
            return
        # resume: keep only rows up to the checkpoint epoch
        lines = self.metrics_path.read_text(encoding="utf-8").splitlines()
        kept = [header]
        for line in lines[1:]:
            if line and int(line.split(",", 1)[0]) <= self.epoch:
                kept.append(line)
        self.metrics_path.write_text("\n".join(kept) + "\n", encoding="utf-8")

    def _append_gate_log(self, batch: RolloutBatch):
        # gated window plus a short post-expiry band as boundary evidence
        buffer_steps = self.config.env.buffer_steps
        if buffer_steps == 0:
            return
        counters = batch.steps_since_switch
        mask = counters < buffer_steps + 10
        if not mask.any():
            return
        steps, envs = np.nonzero(mask)
        with self.gate_log_path.open("a", encoding="utf-8") as fh:
            for t, e in zip(steps, envs):
                fh.write(f"{self.epoch},{t},{e},{counters[t, e]},"
                         f"{_fmt(batch.raw_task_rewards[t, e])},{_fmt(batch.task_rewards[t, e])}\n")

    # ----- run -------------------------------------------------------------------

    def run(self, on_epoch=None) -> dict:
        cfg = self.config
        self._prepare_metrics_file()
        last_ckpt = None
        try:
            while self.epoch < cfg.epochs:
                report, batch = self._epoch_step()
                with self.metrics_path.open("a", encoding="utf-8") as fh:
                    fh.write(",".join(report.to_row()) + "\n")
                if self.epoch <= cfg.gate_log_epochs:
                    self._append_gate_log(batch)
                if cfg.checkpoint_interval and self.epoch % cfg.checkpoint_interval == 0:
                    last_ckpt = self.save(self.out_dir / f"ckpt_{self.epoch:06d}.bin")
                if on_epoch is not None:
                    on_epoch(report, batch)
        except TrainingDivergenceError as exc:
            self._dump_divergence(exc)
            raise
        final = self.out_dir / f"ckpt_{self.epoch:06d}.bin"
        if last_ckpt is None or Path(last_ckpt) != final:
            last_ckpt = self.save(final)
        return {"checkpoint": str(last_ckpt), "metrics": str(self.metrics_path),
                "epochs": self.epoch}

    def _dump_divergence(self, exc: Exception):
        doc = {
            "epoch": self.epoch,
            "error": str(exc),
            "policy_opt_skipped": self.policy_opt.skipped_updates,
            "value_opt_skipped": self.value_opt.skipped_updates,
            "disc_opt_skipped": [s.optimizer.skipped_updates for s in self.slots],
            "env_blowups": self.env.blowups,
        }
        (self.out_dir / "divergence.json").write_text(json.dumps(doc, indent=2) + "\n",
                                                      encoding="utf-8")

    # ----- checkpointing -----------------------------------------------------------

    def save(self, path) -> Path:
        path = Path(path)
        meta = {
            "epoch": self.epoch,
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "n_styles": self.config.n_styles,
            "obs_dim": self.env.obs_dim,
        }
        sections: dict[str, bytes] = {
            "policy": self.policy.to_bytes(),
            "value": self.value_net.to_bytes(),
            "opt_policy": self.policy_opt.to_bytes(),
            "opt_value": self.value_opt.to_bytes(),
        }
        for slot in self.slots:
            i = slot.index
            sections[f"disc{i}"] = slot.discriminator.to_bytes()
            sections[f"opt_disc{i}"] = slot.optimizer.to_bytes()
            sections[f"norm{i}"] = slot.normalizer.to_bytes()
            sections[f"buf{i}"] = slot.policy_buffer.to_bytes()
        env_arrays, env_rng_states = self.env.get_state()
        writer = blob.Writer()
        writer.u32(len(env_arrays))
        for name, arr in env_arrays.items():
            writer.text(name)
            writer.array(np.asarray(arr))
        sections["env"] = writer.getvalue()
        rng_doc = {
            "action": self.action_rng.bit_generator.state,
            "ppo": self.ppo_rng.bit_generator.state,
            "disc": [g.bit_generator.state for g in self.disc_rngs],
            "env": env_rng_states,
        }
        sections["rng"] = json.dumps(rng_doc, sort_keys=True).encode("utf-8")
        ckpt_io.write_checkpoint(path, meta, sections)
        return path

    def load_state(self, meta: dict, sections: dict[str, bytes]):
        if meta.get("config_hash") != self.config.config_hash():
            raise IncompatibleCheckpointError(
                "checkpoint was produced by a different configuration "
                f"({meta.get('config_hash')} != {self.config.config_hash()})"
            )
        self.epoch = int(meta["epoch"])
        self.policy = GaussianPolicy.from_bytes(sections["policy"])
        self.value_net = Mlp.from_bytes(sections["value"])
        self.policy_opt = Adam.from_bytes(sections["opt_policy"], self.policy.param_list())
        self.value_opt = Adam.from_bytes(sections["opt_value"], self.value_net.param_list())
        from stylerl.adversary import RingBuffer, RunningNormalizer

        for slot in self.slots:
            i = slot.index
            slot.discriminator = Mlp.from_bytes(sections[f"disc{i}"])
            slot.optimizer = Adam.from_bytes(sections[f"opt_disc{i}"], slot.discriminator.param_list())
            slot.normalizer = RunningNormalizer.from_bytes(sections[f"norm{i}"])
            slot.policy_buffer = RingBuffer.from_bytes(sections[f"buf{i}"])
        reader = blob.Reader(sections["env"])
        env_arrays = {}
        for _ in range(reader.u32()):
            name = reader.text()
            env_arrays[name] = reader.array()
        rng_doc = json.loads(sections["rng"].decode("utf-8"))
        self.env.set_state(env_arrays, rng_doc["env"])
        self.action_rng.bit_generator.state = rng_doc["action"]
        self.ppo_rng.bit_generator.state = rng_doc["ppo"]
        for gen, state in zip(self.disc_rngs, rng_doc["disc"]):
            gen.bit_generator.state = state

    @classmethod
    def resume(cls, config: TrainerConfig, out_dir, checkpoint_path) -> "Trainer":
        meta, sections = ckpt_io.read_checkpoint(checkpoint_path)
        if meta.get("n_styles") != config.n_styles:
            raise IncompatibleCheckpointError(
                f"checkpoint has {meta.get('n_styles')} styles, config has {config.n_styles}"
            )
        trainer = cls(config, out_dir)
        trainer.load_state(meta, sections)
        return trainer


def train(config: TrainerConfig, out_dir=None, resume_from=None, on_epoch=None) -> dict:
    """Run a full training job; returns checkpoint and metrics paths."""
    out = Path(out_dir) if out_dir is not None else Path(config.out_dir or ".")
    if resume_from is not None:
        trainer = Trainer.resume(config, out, resume_from)
    else:
        trainer = Trainer(config, out)
    return trainer.run(on_epoch=on_epoch)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass
class _EvalStyle:
    discriminator: Mlp
    normalizer: object
    data_free: bool
    reward_scale: float

    def reward(self, rows: np.ndarray) -> np.ndarray:
        if self.data_free:
            return np.zeros(rows.shape[0])
        logits = self.discriminator.forward(self.normalizer.normalize(rows))[:, 0]
        return style_reward_from_logit(logits) * self.reward_scale


def load_policy(checkpoint_path):
    """Load (policy, config, meta) from a checkpoint blob."""
    meta, sections = ckpt_io.read_checkpoint(checkpoint_path)
    policy = GaussianPolicy.from_bytes(sections["policy"])
    config = TrainerConfig.from_dict(meta["config"])
    return policy, config, meta, sections


def _eval_env(config: TrainerConfig, n_envs: int, style_index: int, seed: int):
    tasks = [parse_task(s.task) for s in config.styles]
    env_cfg = dataclasses.replace(config.env, push=PushConfig(enabled=False))
    rngs = [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(seed).spawn(n_envs)]
    return build_env(env_cfg, tasks, n_envs, np.full(n_envs, style_index, dtype=np.int64),
                     rngs, auto_reset=False, switching=False)


def evaluate(checkpoint_path, style_index: int, episodes: int, deterministic: bool = True,
             seed: int = 0, switch_style: int | None = None, switch_at: int | None = None,
             warmup_steps: int = 50, horizon: int | None = None, export_dir=None,
             policy_fn=None) -> dict:
    """Roll a trained policy with one active style and report behavior stats.

    ``switch_style``/``switch_at`` force a mid-episode one-hot switch; for
    sweep styles the report then includes the per-episode latency until the
    sweep direction matches the new command (10 consecutive agreeing steps).
    ``policy_fn`` overrides the checkpoint policy (used for null-policy
    baselines).
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    policy, config, meta, sections = load_policy(checkpoint_path)
    n = config.n_styles
    if not 0 <= style_index < n:
        raise ValueError(f"style index {style_index} out of range [0, {n})")
    if (switch_style is None) != (switch_at is None):
        raise ValueError("switch_style and switch_at must be given together")
    if switch_style is not None and not 0 <= switch_style < n:
        raise ValueError(f"switch style {switch_style} out of range [0, {n})")

    from stylerl.adversary import RunningNormalizer

    eval_styles = [
        _EvalStyle(
            discriminator=Mlp.from_bytes(sections[f"disc{i}"]),
            normalizer=RunningNormalizer.from_bytes(sections[f"norm{i}"]),
            data_free=config.styles[i].data_free,
            reward_scale=config.styles[i].reward_scale,
        )
        for i in range(n)
    ]

    env = _eval_env(config, episodes, style_index, seed)
    if policy.obs_dim != env.obs_dim:
        raise IncompatibleCheckpointError(
            f"policy expects observation width {policy.obs_dim}, environment provides {env.obs_dim}"
        )
    horizon = horizon or config.env.horizon
    if switch_at is not None and not 0 < switch_at < horizon:
        raise ValueError("switch_at must fall inside the episode")
    action_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))

    tasks = [parse_task(s.task) for s in config.styles]
    is_reacher = isinstance(env, ReacherVecEnv)

    raw_rewards = np.zeros((horizon, episodes))
    gated_rewards = np.zeros((horizon, episodes))
    style_rewards = np.zeros((horizon, episodes))
    live = np.zeros((horizon, episodes), dtype=bool)
    rates = np.zeros((horizon, episodes))
    agree = np.zeros((horizon, episodes), dtype=bool)
    pose_err = np.zeros((horizon, episodes))
    frames = [env.descriptors()]

    for t in range(horizon):
        if switch_at is not None and t == switch_at:
            env.force_switch(range(episodes), [switch_style] * episodes)
        ob = env.observations()
        step_live = ~env.done_latch
        styles_now = env.styles.copy()
        if policy_fn is not None:
            actions = np.asarray(policy_fn(ob), dtype=np.float64)
        elif deterministic:
            actions = policy.mean_net.forward(ob)
        else:
            actions, _ = policy.act(ob, action_rng)
        result = env.step(actions)
        raw_rewards[t] = result.raw_task_reward
        gated_rewards[t] = result.task_reward
        live[t] = step_live
        desc = np.concatenate([result.desc_prev, result.desc_next], axis=1)
        for i in range(n):
            mask = styles_now == i
            if mask.any():
                style_rewards[t, mask] = eval_styles[i].reward(desc[mask])
        if is_reacher:
            rates[t] = env.sweep_rates()
            for e in range(episodes):
                task = tasks[styles_now[e]]
                if isinstance(task, SweepTask):
                    agree[t, e] = np.sign(rates[t, e]) == np.sign(env.commands[e, 0])
                else:
                    pose_err[t, e] = float(np.sum((env.q[e] - env.commands[e]) ** 2))
        frames.append(env.descriptors())

    stats_mask = live.copy()
    stats_mask[:warmup_steps] = False
    denom = max(int(stats_mask.sum()), 1)
    task_name = config.styles[style_index].task.get("kind")
    report = {
        "style": style_index,
        "style_name": config.styles[style_index].name,
        "task_kind": task_name,
        "episodes": episodes,
        "horizon": horizon,
        "deterministic": bool(deterministic),
        "checkpoint_epoch": meta.get("epoch"),
        "warmup_steps": warmup_steps,
        "mean_task_reward": float(raw_rewards[stats_mask].sum()) / denom,
        "mean_gated_task_reward": float(gated_rewards[stats_mask].sum()) / denom,
        "mean_style_reward": float(style_rewards[stats_mask].sum()) / denom,
        "completed_steps": int(live.sum()),
    }
    if is_reacher and task_name == "sweep":
        report["sweep_sign_agreement"] = float(agree[stats_mask].sum()) / denom
        report["mean_sweep_rate"] = float(rates[stats_mask].sum()) / denom
    if is_reacher and task_name == "hold":
        report["mean_pose_error"] = float(pose_err[stats_mask].sum()) / denom

    if switch_at is not None:
        latencies = []
        window = 10
        for e in range(episodes):
            found = None
            for t in range(switch_at, horizon - window + 1):
                if agree[t : t + window, e].all() and live[t : t + window, e].all():
                    found = t - switch_at
                    break
            latencies.append(found)
        post = stats_mask.copy()
        post[: min(switch_at + 100, horizon)] = False
        post_n = max(int(post.sum()), 1)
        report["switch"] = {
            "to": switch_style,
            "at": switch_at,
            "flip_latencies": latencies,
            "max_latency": max((l for l in latencies if l is not None), default=None)
            if all(l is not None for l in latencies) else None,
            "post_switch_agreement": float(agree[post].sum()) / post_n,
        }

    if export_dir is not None:
        from stylerl.motion import MotionClip, save_clip

        export_dir = Path(export_dir)
        export_dir.mkdir(parents=True, exist_ok=True)
        stacked = np.stack(frames)  # (horizon+1, episodes, d_d)
        for e in range(episodes):
            end = int(live[:, e].sum()) + 1
            if end < 2:
                continue
            clip = MotionClip(name=f"eval-style{style_index}-ep{e}", dt=env.control_dt,
                              fields=tuple(env.descriptor_fields), frames=stacked[:end, e])
            save_clip(clip, export_dir / f"episode_{e:03d}.json")
    return report


def single_env_from_checkpoint(checkpoint_path, seed: int = 0) -> tuple[SingleEnv, object]:
    """Build a (SingleEnv, deterministic policy_fn) pair for clip recording."""
    policy, config, _, _ = load_policy(checkpoint_path)
    env = _eval_env(config, 1, 0, seed)
    if policy.obs_dim != env.obs_dim:
        raise IncompatibleCheckpointError(
            f"policy expects observation width {policy.obs_dim}, environment provides {env.obs_dim}"
        )
    return SingleEnv(env), (lambda obs: policy.mean_net.forward(obs))
