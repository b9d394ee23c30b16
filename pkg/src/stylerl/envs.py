"""Deterministic toy environments with style-conditioned tasks.

Two vectorized environments are provided:

* ``reacher`` -- a planar two-link arm (uniform-rod model, viscous joint
  damping, no gravity) under torque control, integrated with semi-implicit
  Euler. Style tasks: signed end-effector sweeps and pose holding.
* ``tracker`` -- a planar unicycle tracking commanded linear/angular
  velocity.

Each environment instance owns per-env RNG streams, command sampling, timed
pushes, joint-velocity termination, mid-episode style-switch events, and the
post-switch task-reward gate. Stepping is bit-deterministic given the state
and streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from stylerl.errors import ConfigError, StyleRlError
from stylerl.motion import (
    DEFAULT_LINK_LENGTHS,
    FieldSpec,
    REACHER_FIELDS_RAW,
    REACHER_FIELDS_SINCOS,
    extract_descriptor_batch,
    reacher_ee,
)
from stylerl.ppo import flat_observation_batch

TRACK_WEIGHT = 1.5
TRACK_SCALE = 0.25
PENALTY_WEIGHT = 1e-4

TRACKER_FIELDS = (
    FieldSpec("vw", "velocity", 2),
    FieldSpec("heading", "position", 2),
)


# --------------------------------------------------------------------------
# Environment allocation and reward gating
# --------------------------------------------------------------------------


def allocate_envs(weights, total: int) -> list[int]:
    """Split ``total`` environments proportionally to integer weights.

    Floor allocation first; remainders go one at a time to styles in
    descending weight order (ties to the lower index). Every style ends up
    with at least one environment.
    """
    weights = list(weights)
    if not weights:
        raise ValueError("need at least one style weight")
    for w in weights:
        if not isinstance(w, (int, np.integer)) or w < 1:
            raise ValueError(f"weights must be positive integers, got {weights}")
    n = len(weights)
    if total < n:
        raise ValueError(f"cannot allocate {total} environments across {n} styles")
    denom = sum(weights)
    counts = [w * total // denom for w in weights]
    order = sorted(range(n), key=lambda i: (-weights[i], i))
    remainder = total - sum(counts)
    for i in range(remainder):
        counts[order[i]] += 1
    while min(counts) == 0:
        counts[counts.index(max(counts))] -= 1
        counts[counts.index(0)] += 1
    return counts


def gated_task_reward(raw_reward, steps_since_style_switch, buffer_steps: int):
    """Zero inside the post-switch buffer window, the raw reward after it."""
    steps = np.asarray(steps_since_style_switch)
    if np.any(steps < 0) or buffer_steps < 0:
        raise ValueError("counters must be non-negative")
    out = np.where(steps < buffer_steps, 0.0, raw_reward)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Style tasks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepTask:
    """Rotate the end effector at a commanded signed rate and fixed radius."""

    direction: int  # -1 clockwise, +1 counterclockwise
    speed_range: tuple[float, float] = (0.6, 0.9)
    radius: float | None = None

    def __post_init__(self):
        if self.direction not in (-1, 1):
            raise ConfigError(f"sweep direction must be -1 or +1, got {self.direction}")

    def sample_command(self, rng: np.random.Generator, params) -> np.ndarray:
        speed = rng.uniform(*self.speed_range)
        radius = self.radius if self.radius is not None else params.neutral_radius
        return np.array([self.direction * speed, radius])


@dataclass(frozen=True)
class HoldTask:
    """Hold a commanded joint pose at zero velocity."""

    q1_range: tuple[float, float] = (-np.pi, np.pi)
    q2_range: tuple[float, float] = (0.6, 2.5)

    def sample_command(self, rng: np.random.Generator, params) -> np.ndarray:
        return np.array([rng.uniform(*self.q1_range), rng.uniform(*self.q2_range)])


@dataclass(frozen=True)
class TrackTask:
    """Track commanded linear and angular velocity (unicycle)."""

    v_range: tuple[float, float] = (-1.0, 1.0)
    w_range: tuple[float, float] = (-1.0, 1.0)

    def sample_command(self, rng: np.random.Generator, params) -> np.ndarray:
        return np.array([rng.uniform(*self.v_range), rng.uniform(*self.w_range)])


_TASK_KINDS = {"sweep": SweepTask, "hold": HoldTask, "track": TrackTask}


def parse_task(doc: dict):
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(f"task spec must be an object with a 'kind' key, got {doc!r}")
    doc = dict(doc)
    kind = doc.pop("kind")
    if kind not in _TASK_KINDS:
        raise ConfigError(f"unknown task kind {kind!r}; expected one of {sorted(_TASK_KINDS)}")
    cls = _TASK_KINDS[kind]
    fields = {f for f in cls.__dataclass_fields__}
    unknown = set(doc) - fields
    if unknown:
        raise ConfigError(f"task {kind!r}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"task {kind!r}: {exc}") from None


# --------------------------------------------------------------------------
# Two-link reacher dynamics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReacherParams:
    l1: float = DEFAULT_LINK_LENGTHS[0]
    l2: float = DEFAULT_LINK_LENGTHS[1]
    m1: float = 1.0
    m2: float = 1.0
    damping: float = 0.1
    dt: float = 0.02
    torque_limit: float = 5.0

    @property
    def neutral_radius(self) -> float:
        # end-effector radius at a right-angle elbow
        return float(np.hypot(self.l1, self.l2))


def reacher_accel(q: np.ndarray, qd: np.ndarray, tau: np.ndarray, p: ReacherParams) -> np.ndarray:
    """Joint accelerations of the uniform-rod two-link arm (no gravity)."""
    k1 = (p.m1 / 3.0 + p.m2) * p.l1**2 + p.m2 * p.l2**2 / 3.0
    k2 = p.m2 * p.l1 * p.l2
    k3 = p.m2 * p.l2**2 / 3.0
    k4 = k2 / 2.0
    c2 = np.cos(q[:, 1])
    s2 = np.sin(q[:, 1])
    m11 = k1 + k2 * c2
    m12 = k3 + k4 * c2
    m22 = k3
    h1 = -k2 * s2 * (qd[:, 0] * qd[:, 1] + 0.5 * qd[:, 1] ** 2)
    h2 = 0.5 * k2 * s2 * qd[:, 0] ** 2
    r1 = tau[:, 0] - h1 - p.damping * qd[:, 0]
    r2 = tau[:, 1] - h2 - p.damping * qd[:, 1]
    det = m11 * m22 - m12 * m12
    return np.stack([(m22 * r1 - m12 * r2) / det, (m11 * r2 - m12 * r1) / det], axis=1)


def reacher_step(q, qd, tau, p: ReacherParams):
    """Semi-implicit Euler: velocity first, then position with new velocity."""
    qdd = reacher_accel(q, qd, tau, p)
    qd_new = qd + qdd * p.dt
    q_new = q + qd_new * p.dt
    return q_new, qd_new, qdd


def reacher_energy(q, qd, p: ReacherParams) -> np.ndarray:
    """Kinetic energy 0.5 qd' M(q) qd (the model has no potential term)."""
    k1 = (p.m1 / 3.0 + p.m2) * p.l1**2 + p.m2 * p.l2**2 / 3.0
    k2 = p.m2 * p.l1 * p.l2
    k3 = p.m2 * p.l2**2 / 3.0
    c2 = np.cos(q[:, 1])
    m11 = k1 + k2 * c2
    m12 = k3 + 0.5 * k2 * c2
    m22 = k3
    return 0.5 * (m11 * qd[:, 0] ** 2 + 2 * m12 * qd[:, 0] * qd[:, 1] + m22 * qd[:, 1] ** 2)


def reacher_ee_velocity(q, qd, p: ReacherParams):
    s1 = np.sin(q[:, 0])
    c1 = np.cos(q[:, 0])
    s12 = np.sin(q[:, 0] + q[:, 1])
    c12 = np.cos(q[:, 0] + q[:, 1])
    vx = -(p.l1 * s1 + p.l2 * s12) * qd[:, 0] - p.l2 * s12 * qd[:, 1]
    vy = (p.l1 * c1 + p.l2 * c12) * qd[:, 0] + p.l2 * c12 * qd[:, 1]
    return vx, vy


def sweep_rate(ee_x, ee_y, ee_vx, ee_vy) -> np.ndarray:
    """Angular rate of the end effector about the base: d/dt atan2(y, x)."""
    r_sq = ee_x * ee_x + ee_y * ee_y
    return (ee_x * ee_vy - ee_y * ee_vx) / np.maximum(r_sq, 1e-8)


# --------------------------------------------------------------------------
# Task rewards (tracking terms plus torque / velocity / acceleration penalties)
# --------------------------------------------------------------------------


def _penalties(action_sq, vel_sq, accel_sq):
    return -PENALTY_WEIGHT * (action_sq + vel_sq + accel_sq)


def tracker_task_reward(command, v, w, action, accel) -> np.ndarray:
    """Velocity-tracking reward for the unicycle."""
    command = np.asarray(command, dtype=np.float64)
    track = TRACK_WEIGHT * np.exp(-((command[..., 0] - v) ** 2) / TRACK_SCALE) \
        + TRACK_WEIGHT * np.exp(-((command[..., 1] - w) ** 2) / TRACK_SCALE)
    action = np.asarray(action, dtype=np.float64)
    accel = np.asarray(accel, dtype=np.float64)
    return track + _penalties(np.sum(action**2, axis=-1), v * v + w * w, np.sum(accel**2, axis=-1))


def reacher_sweep_reward(command, rate, radius, tau, qd, qdd) -> np.ndarray:
    track = TRACK_WEIGHT * np.exp(-((command[..., 0] - rate) ** 2) / TRACK_SCALE) \
        + TRACK_WEIGHT * np.exp(-((command[..., 1] - radius) ** 2) / TRACK_SCALE)
    return track + _penalties(np.sum(tau**2, axis=-1), np.sum(qd**2, axis=-1), np.sum(qdd**2, axis=-1))


def reacher_hold_reward(command, q, tau, qd, qdd) -> np.ndarray:
    pose_err = np.sum((q - command) ** 2, axis=-1)
    track = TRACK_WEIGHT * np.exp(-pose_err / TRACK_SCALE) \
        + TRACK_WEIGHT * np.exp(-np.sum(qd**2, axis=-1) / TRACK_SCALE)
    return track + _penalties(np.sum(tau**2, axis=-1), np.sum(qd**2, axis=-1), np.sum(qdd**2, axis=-1))


# --------------------------------------------------------------------------
# Environment configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PushConfig:
    enabled: bool = True
    window: tuple[int, int] = (100, 300)
    magnitude: tuple[float, float] = (1.0, 3.0)
    # explicit schedule (tests): applies the same push in every episode
    fixed_step: int | None = None
    fixed_delta: tuple[float, float] | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "PushConfig":
        doc = dict(doc)
        kwargs = {}
        for key in ("enabled", "window", "magnitude", "fixed_step", "fixed_delta"):
            if key in doc:
                value = doc.pop(key)
                kwargs[key] = tuple(value) if isinstance(value, list) else value
        if doc:
            raise ConfigError(f"push config: unknown keys {sorted(doc)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "reacher"
    horizon: int = 400
    switch_prob: float = 0.002
    buffer_steps: int = 50
    command_interval: int = 100
    descriptor: str = "sincos"  # reacher only: "sincos" or "raw"
    qd_limit: float = 20.0
    push: PushConfig = field(default_factory=PushConfig)
    reacher: ReacherParams = field(default_factory=ReacherParams)

    def __post_init__(self):
        if self.kind not in ("reacher", "tracker"):
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if self.descriptor not in ("sincos", "raw"):
            raise ConfigError(f"descriptor mode must be 'sincos' or 'raw', got {self.descriptor!r}")
        if self.horizon < 1 or self.buffer_steps < 0 or self.command_interval < 1:
            raise ConfigError("horizon/command_interval must be >= 1 and buffer_steps >= 0")
        if not 0.0 <= self.switch_prob < 1.0:
            raise ConfigError("switch_prob must lie in [0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "EnvConfig":
        doc = dict(doc)
        kwargs = {}
        for key in ("kind", "horizon", "switch_prob", "buffer_steps", "command_interval",
                    "descriptor", "qd_limit"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        if "push" in doc:
            kwargs["push"] = PushConfig.from_dict(doc.pop("push"))
        if "physics" in doc:
            phys = dict(doc.pop("physics"))
            unknown = set(phys) - set(ReacherParams.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"physics config: unknown keys {sorted(unknown)}")
            kwargs["reacher"] = ReacherParams(**phys)
        if doc:
            raise ConfigError(f"env config: unknown keys {sorted(doc)}")
        return cls(**kwargs)


@dataclass
class EnvStepResult:
    raw_task_reward: np.ndarray  # (N,)
    task_reward: np.ndarray  # (N,) after gating
    terminated: np.ndarray  # (N,) bool
    switched: np.ndarray  # (N,) bool, style switch at the end of this step
    desc_prev: np.ndarray  # (N, d_d)
    desc_next: np.ndarray  # (N, d_d) pre-reset
    steps_since_switch: np.ndarray  # (N,) counter used for this step's gate


# --------------------------------------------------------------------------
# Vectorized environments
# --------------------------------------------------------------------------


class VecEnv:
    """Shared orchestration: commands, switches, pushes, gating, resets."""

    def __init__(self, cfg: EnvConfig, tasks, n_envs: int, initial_styles,
                 rngs: list[np.random.Generator], auto_reset: bool = True,
                 switching: bool = True, pushes: bool | None = None):
        if n_envs < 1:
            raise ValueError("need at least one environment")
        if len(rngs) != n_envs:
            raise ValueError("need one rng stream per environment")
        initial_styles = np.asarray(initial_styles, dtype=np.int64)
        if initial_styles.shape != (n_envs,):
            raise ValueError("initial_styles must have one entry per environment")
        if initial_styles.min() < 0 or initial_styles.max() >= len(tasks):
            raise ValueError("initial style index out of range")
        self.cfg = cfg
        self.tasks = list(tasks)
        self.n_envs = n_envs
        self.n_styles = len(self.tasks)
        self.rngs = rngs
        self.auto_reset = auto_reset
        self.switching = switching and cfg.switch_prob > 0.0 and len(tasks) > 1
        self.pushes = cfg.push.enabled if pushes is None else (pushes and cfg.push.enabled)
        self.initial_styles = initial_styles
        self.blowups = 0

        self.styles = initial_styles.copy()
        self.step_in_episode = np.zeros(n_envs, dtype=np.int64)
        self.steps_since_switch = np.full(n_envs, cfg.buffer_steps, dtype=np.int64)
        self.commands = np.zeros((n_envs, self.command_dim))
        self.push_step = np.full(n_envs, -1, dtype=np.int64)
        self.push_delta = np.zeros((n_envs, 2))
        self.next_switch = np.full(n_envs, np.iinfo(np.int64).max, dtype=np.int64)
        self.done_latch = np.zeros(n_envs, dtype=bool)
        self.reset_all()

    # subclass surface -------------------------------------------------------

    @property
    def control_dt(self) -> float:
        raise NotImplementedError

    @property
    def descriptor_fields(self):
        raise NotImplementedError

    @property
    def command_dim(self) -> int:
        return 2

    @property
    def action_dim(self) -> int:
        return 2

    def _sample_state(self, ids):
        raise NotImplementedError

    def _integrate(self, actions):
        """Advance dynamics; returns squared-acceleration info for penalties."""
        raise NotImplementedError

    def _apply_push(self, mask):
        raise NotImplementedError

    def _limit_violation(self) -> np.ndarray:
        raise NotImplementedError

    def _state_finite(self) -> np.ndarray:
        raise NotImplementedError

    def _task_reward(self, actions, accel) -> np.ndarray:
        raise NotImplementedError

    def proprio(self) -> np.ndarray:
        raise NotImplementedError

    def descriptor_state(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    # shared machinery --------------------------------------------------------

    @property
    def d_d(self) -> int:
        return sum(f.dim for f in self.descriptor_fields)

    @property
    def obs_dim(self) -> int:
        return self.proprio().shape[1] + self.command_dim + self.n_styles

    def observations(self) -> np.ndarray:
        return flat_observation_batch(self.proprio(), self.commands, self.styles, self.n_styles)

    def descriptors(self) -> np.ndarray:
        return extract_descriptor_batch(self.descriptor_state(), self.descriptor_fields)

    def _resample_commands(self, ids):
        for e in ids:
            self.commands[e] = self.tasks[self.styles[e]].sample_command(self.rngs[e], self._task_params())

    def _task_params(self):
        return None

    def _schedule_push(self, ids):
        push = self.cfg.push
        for e in ids:
            if not self.pushes:
                self.push_step[e] = -1
                continue
            if push.fixed_step is not None:
                self.push_step[e] = push.fixed_step
                self.push_delta[e] = np.asarray(push.fixed_delta, dtype=np.float64)
                continue
            lo, hi = push.window
            hi = min(hi, self.cfg.horizon - 1)
            if hi < lo:
                self.push_step[e] = -1
                continue
            self.push_step[e] = self.rngs[e].integers(lo, hi + 1)
            magnitude = self.rngs[e].uniform(*push.magnitude)
            angle = self.rngs[e].uniform(0.0, 2.0 * np.pi)
            self.push_delta[e] = magnitude * np.array([np.cos(angle), np.sin(angle)])

    def _schedule_switch(self, ids):
        for e in ids:
            if self.switching:
                self.next_switch[e] = self.step_in_episode[e] + self.rngs[e].geometric(self.cfg.switch_prob)
            else:
                self.next_switch[e] = np.iinfo(np.int64).max

    def reset_envs(self, ids):
        ids = list(ids)
        if not ids:
            return
        self._sample_state(ids)
        for e in ids:
            self.styles[e] = self.initial_styles[e]
            self.step_in_episode[e] = 0
            self.steps_since_switch[e] = self.cfg.buffer_steps
            self.done_latch[e] = False
        self._resample_commands(ids)
        self._schedule_push(ids)
        self._schedule_switch(ids)

    def reset_all(self, styles=None):
        if styles is not None:
            styles = np.asarray(styles, dtype=np.int64)
            if styles.shape != (self.n_envs,):
                raise ValueError("styles must have one entry per environment")
            if styles.min() < 0 or styles.max() >= self.n_styles:
                raise ValueError("style index out of range")
            self.initial_styles = styles.copy()
        self.reset_envs(range(self.n_envs))

    def force_switch(self, ids, new_styles):
        """Immediately switch styles (used by evaluation); applies the gate."""
        for e, s in zip(ids, new_styles):
            if not 0 <= s < self.n_styles:
                raise ValueError("style index out of range")
            self.styles[e] = s
            self.steps_since_switch[e] = 0
        self._resample_commands(ids)

    def step(self, actions: np.ndarray) -> EnvStepResult:
        actions = np.asarray(actions, dtype=np.float64)
        if actions.shape != (self.n_envs, self.action_dim):
            raise ValueError(f"expected actions of shape ({self.n_envs}, {self.action_dim})")
        if not np.all(np.isfinite(actions)):
            raise StyleRlError("non-finite action passed to environment step")

        frozen = self.done_latch.copy()
        desc_prev = self.descriptors()
        gate_counter = self.steps_since_switch.copy()

        accel = self._integrate(actions)
        push_mask = (self.step_in_episode == self.push_step) & ~frozen
        if push_mask.any():
            self._apply_push(push_mask)

        raw = self._task_reward(actions, accel)
        gated = gated_task_reward(raw, gate_counter, self.cfg.buffer_steps)
        raw = np.where(frozen, 0.0, raw)
        gated = np.where(frozen, 0.0, gated)

        desc_next = self.descriptors()

        finite = self._state_finite()
        self.blowups += int(np.sum(~finite & ~frozen))
        self.step_in_episode += ~frozen
        self.steps_since_switch += ~frozen
        terminated = (
            self._limit_violation() | ~finite | (self.step_in_episode >= self.cfg.horizon)
        ) & ~frozen

        switched = np.zeros(self.n_envs, dtype=bool)
        live = ~terminated & ~frozen
        switch_ids = np.nonzero(live & (self.step_in_episode == self.next_switch))[0]
        for e in switch_ids:
            other = int(self.rngs[e].integers(0, self.n_styles - 1))
            if other >= self.styles[e]:
                other += 1
            self.styles[e] = other
            self.steps_since_switch[e] = 0
            switched[e] = True
        if len(switch_ids):
            self._resample_commands(switch_ids)
            self._schedule_switch(switch_ids)

        resample_ids = np.nonzero(live & ~switched & (self.step_in_episode % self.cfg.command_interval == 0))[0]
        if len(resample_ids):
            self._resample_commands(resample_ids)

        if self.auto_reset:
            self.reset_envs(np.nonzero(terminated)[0])
        else:
            self.done_latch |= terminated

        return EnvStepResult(
            raw_task_reward=raw,
            task_reward=gated,
            terminated=terminated,
            switched=switched,
            desc_prev=desc_prev,
            desc_next=desc_next,
            steps_since_switch=gate_counter,
        )

    # checkpoint support -------------------------------------------------------

    def _core_state(self) -> dict:
        return {
            "styles": self.styles,
            "initial_styles": self.initial_styles,
            "step_in_episode": self.step_in_episode,
            "steps_since_switch": self.steps_since_switch,
            "commands": self.commands,
            "push_step": self.push_step,
            "push_delta": self.push_delta,
            "next_switch": self.next_switch,
            "done_latch": self.done_latch.astype(np.int64),
            "blowups": np.array([self.blowups], dtype=np.int64),
        }

    def _restore_core(self, state: dict):
        self.styles = state["styles"].astype(np.int64)
        self.initial_styles = state["initial_styles"].astype(np.int64)
        self.step_in_episode = state["step_in_episode"].astype(np.int64)
        self.steps_since_switch = state["steps_since_switch"].astype(np.int64)
        self.commands = state["commands"]
        self.push_step = state["push_step"].astype(np.int64)
        self.push_delta = state["push_delta"]
        self.next_switch = state["next_switch"].astype(np.int64)
        self.done_latch = state["done_latch"].astype(bool)
        self.blowups = int(state["blowups"][0])

    def get_state(self) -> tuple[dict, list[dict]]:
        arrays = self._core_state()
        arrays.update(self._dyn_state())
        return arrays, [rng.bit_generator.state for rng in self.rngs]

    def set_state(self, arrays: dict, rng_states: list[dict]):
        self._restore_core(arrays)
        self._restore_dyn(arrays)
        for rng, state in zip(self.rngs, rng_states):
            rng.bit_generator.state = state

    def _dyn_state(self) -> dict:
        raise NotImplementedError

    def _restore_dyn(self, arrays: dict):
        raise NotImplementedError


class ReacherVecEnv(VecEnv):
    """Vectorized two-link reacher with sweep/hold style tasks."""

    def __init__(self, cfg: EnvConfig, tasks, n_envs, initial_styles, rngs, **kw):
        for task in tasks:
            if not isinstance(task, (SweepTask, HoldTask)):
                raise ConfigError(f"reacher cannot run task {type(task).__name__}")
        self.params = cfg.reacher
        self.q = np.zeros((n_envs, 2))
        self.qd = np.zeros((n_envs, 2))
        super().__init__(cfg, tasks, n_envs, initial_styles, rngs, **kw)

    @property
    def control_dt(self) -> float:
        return self.params.dt

    @property
    def descriptor_fields(self):
        return REACHER_FIELDS_SINCOS if self.cfg.descriptor == "sincos" else REACHER_FIELDS_RAW

    def _task_params(self):
        return self.params

    def _sample_state(self, ids):
        for e in ids:
            rng = self.rngs[e]
            self.q[e, 0] = rng.uniform(-np.pi, np.pi)
            self.q[e, 1] = rng.uniform(0.4, 2.7)
            self.qd[e] = rng.uniform(-0.1, 0.1, size=2)

    def _integrate(self, actions):
        tau = np.clip(actions, -self.params.torque_limit, self.params.torque_limit)
        live = ~self.done_latch
        q_new, qd_new, qdd = reacher_step(self.q, self.qd, tau, self.params)
        self.q = np.where(live[:, None], q_new, self.q)
        self.qd = np.where(live[:, None], qd_new, self.qd)
        self._last_tau = tau
        return qdd

    def _apply_push(self, mask):
        self.qd[mask] += self.push_delta[mask]

    def _limit_violation(self):
        return np.any(np.abs(self.qd) > self.cfg.qd_limit, axis=1)

    def _state_finite(self):
        return np.all(np.isfinite(self.q), axis=1) & np.all(np.isfinite(self.qd), axis=1)

    def _task_reward(self, actions, qdd):
        tau = self._last_tau
        ex, ey = reacher_ee(self.q[:, 0], self.q[:, 1], (self.params.l1, self.params.l2))
        vx, vy = reacher_ee_velocity(self.q, self.qd, self.params)
        rate = sweep_rate(ex, ey, vx, vy)
        radius = np.hypot(ex, ey)
        reward = np.zeros(self.n_envs)
        for i, task in enumerate(self.tasks):
            mask = self.styles == i
            if not mask.any():
                continue
            if isinstance(task, SweepTask):
                reward[mask] = reacher_sweep_reward(
                    self.commands[mask], rate[mask], radius[mask],
                    tau[mask], self.qd[mask], qdd[mask])
            else:
                reward[mask] = reacher_hold_reward(
                    self.commands[mask], self.q[mask], tau[mask], self.qd[mask], qdd[mask])
        return reward

    def proprio(self) -> np.ndarray:
        ex, ey = reacher_ee(self.q[:, 0], self.q[:, 1], (self.params.l1, self.params.l2))
        return np.stack([
            np.cos(self.q[:, 0]), np.sin(self.q[:, 0]),
            np.cos(self.q[:, 1]), np.sin(self.q[:, 1]),
            self.qd[:, 0], self.qd[:, 1], ex, ey,
        ], axis=1)

    def descriptor_state(self) -> dict[str, np.ndarray]:
        ex, ey = reacher_ee(self.q[:, 0], self.q[:, 1], (self.params.l1, self.params.l2))
        ee = np.stack([ex, ey], axis=1)
        if self.cfg.descriptor == "sincos":
            qsc = np.stack([np.cos(self.q[:, 0]), np.sin(self.q[:, 0]),
                            np.cos(self.q[:, 1]), np.sin(self.q[:, 1])], axis=1)
            return {"qsc": qsc, "qd": self.qd.copy(), "ee": ee}
        return {"q": self.q.copy(), "qd": self.qd.copy(), "ee": ee}

    def sweep_rates(self) -> np.ndarray:
        ex, ey = reacher_ee(self.q[:, 0], self.q[:, 1], (self.params.l1, self.params.l2))
        vx, vy = reacher_ee_velocity(self.q, self.qd, self.params)
        return sweep_rate(ex, ey, vx, vy)

    def _dyn_state(self):
        return {"q": self.q, "qd": self.qd}

    def _restore_dyn(self, arrays):
        self.q = arrays["q"]
        self.qd = arrays["qd"]


@dataclass(frozen=True)
class TrackerParams:
    dt: float = 0.02
    accel_limit: float = 5.0
    v_max: float = 2.0
    w_max: float = 2.0


class TrackerVecEnv(VecEnv):
    """Planar unicycle with velocity-tracking tasks."""

    def __init__(self, cfg: EnvConfig, tasks, n_envs, initial_styles, rngs,
                 params: TrackerParams | None = None, **kw):
        for task in tasks:
            if not isinstance(task, TrackTask):
                raise ConfigError(f"tracker cannot run task {type(task).__name__}")
        self.params = params or TrackerParams()
        self.pose = np.zeros((n_envs, 3))  # x, y, heading
        self.vel = np.zeros((n_envs, 2))  # v, w
        super().__init__(cfg, tasks, n_envs, initial_styles, rngs, **kw)

    @property
    def control_dt(self) -> float:
        return self.params.dt

    @property
    def descriptor_fields(self):
        return TRACKER_FIELDS

    def _sample_state(self, ids):
        for e in ids:
            rng = self.rngs[e]
            self.pose[e] = [0.0, 0.0, rng.uniform(-np.pi, np.pi)]
            self.vel[e] = 0.0

    def _integrate(self, actions):
        p = self.params
        accel = np.clip(actions, -p.accel_limit, p.accel_limit)
        live = ~self.done_latch
        vel_new = self.vel + accel * p.dt
        vel_new[:, 0] = np.clip(vel_new[:, 0], -p.v_max, p.v_max)
        vel_new[:, 1] = np.clip(vel_new[:, 1], -p.w_max, p.w_max)
        heading = self.pose[:, 2] + vel_new[:, 1] * p.dt
        pose_new = np.stack([
            self.pose[:, 0] + vel_new[:, 0] * np.cos(heading) * p.dt,
            self.pose[:, 1] + vel_new[:, 0] * np.sin(heading) * p.dt,
            heading,
        ], axis=1)
        self.vel = np.where(live[:, None], vel_new, self.vel)
        self.pose = np.where(live[:, None], pose_new, self.pose)
        self._last_action = accel
        return accel

    def _apply_push(self, mask):
        self.vel[mask] += self.push_delta[mask]
        p = self.params
        self.vel[:, 0] = np.clip(self.vel[:, 0], -p.v_max, p.v_max)
        self.vel[:, 1] = np.clip(self.vel[:, 1], -p.w_max, p.w_max)

    def _limit_violation(self):
        return np.zeros(self.n_envs, dtype=bool)  # velocities are clipped

    def _state_finite(self):
        return np.all(np.isfinite(self.pose), axis=1) & np.all(np.isfinite(self.vel), axis=1)

    def _task_reward(self, actions, accel):
        return tracker_task_reward(self.commands, self.vel[:, 0], self.vel[:, 1],
                                   self._last_action, accel)

    def proprio(self) -> np.ndarray:
        return np.stack([
            self.vel[:, 0], self.vel[:, 1],
            np.cos(self.pose[:, 2]), np.sin(self.pose[:, 2]),
        ], axis=1)

    def descriptor_state(self) -> dict[str, np.ndarray]:
        heading = np.stack([np.cos(self.pose[:, 2]), np.sin(self.pose[:, 2])], axis=1)
        return {"vw": self.vel.copy(), "heading": heading}

    def _dyn_state(self):
        return {"pose": self.pose, "vel": self.vel}

    def _restore_dyn(self, arrays):
        self.pose = arrays["pose"]
        self.vel = arrays["vel"]


def build_env(cfg: EnvConfig, tasks, n_envs, initial_styles, rngs, **kw) -> VecEnv:
    cls = ReacherVecEnv if cfg.kind == "reacher" else TrackerVecEnv
    return cls(cfg, tasks, n_envs, initial_styles, rngs, **kw)


class SingleEnv:
    """Single-environment adapter exposing the clip-recording protocol."""

    def __init__(self, env: VecEnv):
        if env.n_envs != 1:
            raise ValueError("SingleEnv wraps exactly one environment")
        self.env = env

    @property
    def num_styles(self) -> int:
        return self.env.n_styles

    @property
    def descriptor_fields(self):
        return self.env.descriptor_fields

    @property
    def control_dt(self) -> float:
        return self.env.control_dt

    def reset(self, style_index: int) -> np.ndarray:
        self.env.reset_all(styles=[style_index])
        return self.env.observations()[0]

    def step(self, action) -> tuple[np.ndarray, bool]:
        result = self.env.step(np.asarray(action, dtype=np.float64)[None, :])
        return self.env.observations()[0], bool(result.terminated[0])

    def descriptor_state(self) -> dict[str, np.ndarray]:
        return {key: value[0] for key, value in self.env.descriptor_state().items()}
