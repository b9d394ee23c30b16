"""Motion-prior datasets: loading, validation, reversal, and sampling.

A clip is a fixed-rate sequence of descriptor-space frames. Each column group
is declared by a :class:`FieldSpec` whose ``kind`` controls behavior under
time reversal: ``velocity`` fields flip sign, ``position`` and ``other`` do
not. The descriptor map pulls the same named fields out of live environment
states, so clip frames and policy-side descriptors share one schema.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from stylerl.errors import (
    ClipDimensionError,
    ClipFormatError,
    ClipValueError,
    DescriptorSchemaError,
    EmptyDatasetError,
    RecordingError,
)

KINDS = ("position", "velocity", "other")

REVERSED_SUFFIX = "-reversed"


@dataclass(frozen=True)
class FieldSpec:
    """One named column group of a descriptor."""

    name: str
    kind: str
    dim: int

    def __post_init__(self):
        if not self.name:
            raise ClipValueError("field name must be non-empty")
        if self.kind not in KINDS:
            raise ClipValueError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ClipValueError(f"field {self.name!r}: dim must be >= 1")
        object.__setattr__(self, "dim", int(self.dim))


def descriptor_dim(fields) -> int:
    return sum(f.dim for f in fields)


def _validate_fields(fields) -> tuple[FieldSpec, ...]:
    fields = tuple(fields)
    if not fields:
        raise ClipValueError("descriptor needs at least one field")
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        raise ClipValueError(f"duplicate field names: {names}")
    return fields


def velocity_signs(fields) -> np.ndarray:
    """Per-column sign vector: -1 on velocity columns, +1 elsewhere."""
    signs = np.ones(descriptor_dim(fields))
    offset = 0
    for f in fields:
        if f.kind == "velocity":
            signs[offset : offset + f.dim] = -1.0
        offset += f.dim
    return signs


@dataclass(frozen=True)
class MotionClip:
    """A timestamped frame matrix with a field schema.

    Immutable after construction; the frame matrix is marked read-only.
    """

    name: str
    dt: float
    fields: tuple[FieldSpec, ...]
    frames: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "fields", _validate_fields(self.fields))
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ClipDimensionError(f"clip {self.name!r}: frames must be a 2-D matrix")
        if frames.shape[0] < 2:
            raise ClipDimensionError(f"clip {self.name!r}: need at least 2 frames, got {frames.shape[0]}")
        if frames.shape[1] != descriptor_dim(self.fields):
            raise ClipDimensionError(
                f"clip {self.name!r}: frame width {frames.shape[1]} != field dims {descriptor_dim(self.fields)}"
            )
        if not np.all(np.isfinite(frames)):
            bad = np.argwhere(~np.isfinite(frames))[0]
            raise ClipValueError(f"clip {self.name!r}: non-finite value at frame {bad[0]}, column {bad[1]}")
        if not (isinstance(self.dt, (int, float)) and math.isfinite(self.dt) and self.dt > 0):
            raise ClipValueError(f"clip {self.name!r}: dt must be a positive number, got {self.dt!r}")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def d_d(self) -> int:
        return self.frames.shape[1]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_transitions(self) -> int:
        return self.n_frames - 1

    def column_slice(self, field_name: str) -> slice:
        offset = 0
        for f in self.fields:
            if f.name == field_name:
                return slice(offset, offset + f.dim)
            offset += f.dim
        raise DescriptorSchemaError(f"clip {self.name!r} has no field {field_name!r}")


@dataclass(frozen=True)
class MotionDataset:
    """All clips backing one style. May be empty (data-free style)."""

    style_name: str
    clips: tuple[MotionClip, ...] = field(default_factory=tuple)

    def __post_init__(self):
        clips = tuple(self.clips)
        for clip in clips[1:]:
            if clip.fields != clips[0].fields:
                raise ClipDimensionError(
                    f"dataset {self.style_name!r}: clip {clip.name!r} has a different field schema "
                    f"than {clips[0].name!r}"
                )
        object.__setattr__(self, "clips", clips)

    @property
    def is_empty(self) -> bool:
        return len(self.clips) == 0

    @property
    def fields(self) -> tuple[FieldSpec, ...]:
        if self.is_empty:
            raise EmptyDatasetError(f"dataset {self.style_name!r} is empty")
        return self.clips[0].fields

    @property
    def d_d(self) -> int:
        return descriptor_dim(self.fields)

    @property
    def n_transitions(self) -> int:
        return sum(c.n_transitions for c in self.clips)


@dataclass(frozen=True)
class TransitionDescriptor:
    """Concatenation of the descriptor map at two consecutive states."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0 or values.size % 2 != 0:
            raise ClipDimensionError(f"transition descriptor must be 1-D with even length, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ClipValueError("transition descriptor contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def d_d(self) -> int:
        return self.values.size // 2


# --------------------------------------------------------------------------
# Descriptor extraction
# --------------------------------------------------------------------------


def _field_value(state, name: str):
    if isinstance(state, Mapping):
        if name not in state:
            raise DescriptorSchemaError(f"state has no descriptor field {name!r}")
        return state[name]
    try:
        return getattr(state, name)
    except AttributeError:
        raise DescriptorSchemaError(f"state has no descriptor field {name!r}") from None


def extract_descriptor(state, fields) -> np.ndarray:
    """Concatenate the named state fields in schema order.

    ``state`` may be a mapping or any object with matching attributes. Pure:
    the same state always yields the same vector.
    """
    fields = _validate_fields(fields)
    parts = []
    for f in fields:
        value = np.atleast_1d(np.asarray(_field_value(state, f.name), dtype=np.float64))
        if value.ndim != 1 or value.size != f.dim:
            raise DescriptorSchemaError(
                f"field {f.name!r}: expected {f.dim} values, got shape {value.shape}"
            )
        parts.append(value)
    return np.concatenate(parts)


def extract_descriptor_batch(state: Mapping[str, np.ndarray], fields) -> np.ndarray:
    """Vectorized extraction: each field maps to an (N, dim) array."""
    fields = _validate_fields(fields)
    parts = []
    n = None
    for f in fields:
        value = np.asarray(_field_value(state, f.name), dtype=np.float64)
        if value.ndim != 2 or value.shape[1] != f.dim:
            raise DescriptorSchemaError(
                f"field {f.name!r}: expected (N, {f.dim}) values, got shape {value.shape}"
            )
        if n is None:
            n = value.shape[0]
        elif value.shape[0] != n:
            raise DescriptorSchemaError(f"field {f.name!r}: inconsistent batch size")
        parts.append(value)
    return np.concatenate(parts, axis=1)


def make_transition(state_t, state_next, fields) -> TransitionDescriptor:
    """Build the discriminator input for one state transition."""
    return TransitionDescriptor(
        np.concatenate([extract_descriptor(state_t, fields), extract_descriptor(state_next, fields)])
    )


# --------------------------------------------------------------------------
# Reversal
# --------------------------------------------------------------------------


def reverse_clip(clip: MotionClip) -> MotionClip:
    """Time-reverse a clip: frame order flipped, velocity columns negated.

    An involution on the frame matrix; the name gains (or sheds) a
    ``-reversed`` suffix.
    """
    signs = velocity_signs(clip.fields)
    frames = clip.frames[::-1] * signs
    if clip.name.endswith(REVERSED_SUFFIX):
        name = clip.name[: -len(REVERSED_SUFFIX)]
    else:
        name = clip.name + REVERSED_SUFFIX
    return MotionClip(name=name, dt=clip.dt, fields=clip.fields, frames=frames)


# --------------------------------------------------------------------------
# Transition sampling
# --------------------------------------------------------------------------


class TransitionSampler:
    """Uniform sampling over consecutive-frame pairs, with replacement.

    Uniformity over transitions makes each clip's selection probability
    proportional to its transition count. ``holdout_every=k`` reserves every
    k-th transition (global index) for evaluation; held-out transitions are
    never returned by :meth:`sample`.
    """

    def __init__(self, dataset: MotionDataset, holdout_every: int | None = None):
        if dataset.is_empty:
            raise EmptyDatasetError(
                f"cannot sample transitions for data-free style {dataset.style_name!r}"
            )
        firsts = []
        nexts = []
        for clip in dataset.clips:
            firsts.append(clip.frames[:-1])
            nexts.append(clip.frames[1:])
        descriptors = np.concatenate([np.concatenate(firsts), np.concatenate(nexts)], axis=1)
        total = descriptors.shape[0]
        if holdout_every is not None and holdout_every >= 2:
            mask = (np.arange(total) % holdout_every) == (holdout_every - 1)
            # never hold out everything
            if mask.all():
                mask[:] = False
            self.train = descriptors[~mask]
            self.heldout = descriptors[mask]
        else:
            self.train = descriptors
            self.heldout = descriptors[:0]
        self.train.flags.writeable = False
        self.heldout.flags.writeable = False
        self.width = descriptors.shape[1]

    @property
    def n_train(self) -> int:
        return self.train.shape[0]

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if k < 1:
            raise ValueError(f"sample count must be >= 1, got {k}")
        idx = rng.integers(0, self.n_train, size=k)
        return self.train[idx]


def sample_transitions(dataset: MotionDataset, k: int, rng: np.random.Generator) -> list[TransitionDescriptor]:
    """Draw ``k`` transition descriptors uniformly across all clips."""
    sampler = TransitionSampler(dataset)
    rows = sampler.sample(k, rng)
    return [TransitionDescriptor(row) for row in rows]


# --------------------------------------------------------------------------
# Clip files
# --------------------------------------------------------------------------

_CLIP_KEYS = {"name", "dt", "fields", "frames"}
_FIELD_KEYS = {"name", "kind", "dim"}


def save_clip(clip: MotionClip, path):
    doc = {
        "name": clip.name,
        "dt": clip.dt,
        "fields": [{"name": f.name, "kind": f.kind, "dim": f.dim} for f in clip.fields],
        "frames": [list(row) for row in clip.frames],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_clip(path) -> MotionClip:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ClipFormatError(f"{path}: expected a JSON object")
    extra = set(doc) - _CLIP_KEYS
    if extra:
        raise ClipFormatError(f"{path}: unknown keys {sorted(extra)}")
    missing = _CLIP_KEYS - set(doc)
    if missing:
        raise ClipFormatError(f"{path}: missing keys {sorted(missing)}")
    if not isinstance(doc["fields"], list) or not isinstance(doc["frames"], list):
        raise ClipFormatError(f"{path}: 'fields' and 'frames' must be arrays")
    fields = []
    for i, f in enumerate(doc["fields"]):
        if not isinstance(f, dict) or set(f) != _FIELD_KEYS:
            raise ClipFormatError(f"{path}: field {i} must have exactly keys {sorted(_FIELD_KEYS)}")
        fields.append(FieldSpec(name=f["name"], kind=f["kind"], dim=f["dim"]))
    width = descriptor_dim(fields)
    for i, row in enumerate(doc["frames"]):
        if not isinstance(row, list) or len(row) != width:
            raise ClipDimensionError(f"{path}: frame {i} has width {len(row) if isinstance(row, list) else '?'}, expected {width}")
    return MotionClip(name=doc["name"], dt=doc["dt"], fields=tuple(fields), frames=np.array(doc["frames"], dtype=np.float64))


# --------------------------------------------------------------------------
# Analytic two-link generators
# --------------------------------------------------------------------------

DEFAULT_LINK_LENGTHS = (1.0, 0.8)

# Field layouts shared with the two-link reacher environment.
REACHER_FIELDS_RAW = (
    FieldSpec("q", "position", 2),
    FieldSpec("qd", "velocity", 2),
    FieldSpec("ee", "position", 2),
)
REACHER_FIELDS_SINCOS = (
    FieldSpec("qsc", "position", 4),
    FieldSpec("qd", "velocity", 2),
    FieldSpec("ee", "position", 2),
)


def reacher_ee(q1, q2, link_lengths=DEFAULT_LINK_LENGTHS):
    """Planar two-link end-effector position. Accepts scalars or arrays."""
    l1, l2 = link_lengths
    x = l1 * np.cos(q1) + l2 * np.cos(q1 + q2)
    y = l1 * np.sin(q1) + l2 * np.sin(q1 + q2)
    return x, y


def _per_joint(value, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        arr = np.repeat(arr, 2)
    if arr.size != 2:
        raise ClipValueError(f"{what}: expected a scalar or one value per joint")
    return arr


def _frames_from_q(q, qd, sincos: bool, link_lengths) -> tuple[np.ndarray, tuple[FieldSpec, ...]]:
    ex, ey = reacher_ee(q[:, 0], q[:, 1], link_lengths)
    ee = np.stack([ex, ey], axis=1)
    if sincos:
        qsc = np.stack([np.cos(q[:, 0]), np.sin(q[:, 0]), np.cos(q[:, 1]), np.sin(q[:, 1])], axis=1)
        return np.concatenate([qsc, qd, ee], axis=1), REACHER_FIELDS_SINCOS
    return np.concatenate([q, qd, ee], axis=1), REACHER_FIELDS_RAW


def make_sinusoid_clip(steps: int, dt: float, amplitude=0.5, frequency=1.0, phase=0.0,
                       center=0.0, link_lengths=DEFAULT_LINK_LENGTHS, sincos: bool = False,
                       name: str = "sinusoid") -> MotionClip:
    """Joint-space sinusoid: q_j(t) = center_j + A_j sin(2 pi f_j t + phi_j).

    Velocities are the analytic derivatives, so finite differences of the
    position columns recover them up to integration-order error.
    """
    if steps < 2:
        raise ClipValueError("sinusoid generator needs at least 2 steps")
    amp = _per_joint(amplitude, "amplitude")
    freq = _per_joint(frequency, "frequency")
    ph = _per_joint(phase, "phase")
    cen = _per_joint(center, "center")
    t = np.arange(steps)[:, None] * dt
    w = 2.0 * np.pi * freq[None, :]
    q = cen[None, :] + amp[None, :] * np.sin(w * t + ph[None, :])
    qd = amp[None, :] * w * np.cos(w * t + ph[None, :])
    frames, fields = _frames_from_q(q, qd, sincos, link_lengths)
    return MotionClip(name=name, dt=dt, fields=fields, frames=frames)


def make_sweep_clip(steps: int, dt: float, rate: float, start_angle: float = 0.0,
                    elbow_angle: float = np.pi / 2, elbow_amplitude: float = 0.0,
                    elbow_frequency: float = 0.25, link_lengths=DEFAULT_LINK_LENGTHS,
                    sincos: bool = True, name: str = "sweep") -> MotionClip:
    """Constant-rate shoulder rotation with an optional elbow sinusoid.

    ``rate`` is the signed shoulder angular velocity in rad/s; negative values
    sweep the end effector clockwise. The default elbow amplitude of zero
    gives a pure circular sweep at the radius set by ``elbow_angle``.
    """
    if steps < 2:
        raise ClipValueError("sweep generator needs at least 2 steps")
    if rate == 0.0:
        raise ClipValueError("sweep rate must be nonzero")
    t = np.arange(steps) * dt
    q1 = start_angle + rate * t
    w = 2.0 * np.pi * elbow_frequency
    q2 = elbow_angle + elbow_amplitude * np.sin(w * t)
    q = np.stack([q1, q2], axis=1)
    qd = np.stack([np.full(steps, rate), elbow_amplitude * w * np.cos(w * t)], axis=1)
    frames, fields = _frames_from_q(q, qd, sincos, link_lengths)
    return MotionClip(name=name, dt=dt, fields=fields, frames=frames)


# --------------------------------------------------------------------------
# Recording
# --------------------------------------------------------------------------


def record_clip(env, policy_fn, style_index: int, duration_steps: int,
                name: str = "recorded") -> MotionClip:
    """Roll ``policy_fn`` in a single environment and store its descriptors.

    ``env`` must expose ``num_styles``, ``descriptor_fields``, ``control_dt``,
    ``reset(style_index) -> obs``, ``step(action) -> (obs, terminated)`` and
    ``descriptor_state()``. Recording stops early if the episode terminates;
    fewer than 2 recorded frames is an error.
    """
    if duration_steps < 2:
        raise RecordingError(f"duration_steps must be >= 2, got {duration_steps}")
    if not (0 <= style_index < env.num_styles):
        raise RecordingError(f"style index {style_index} out of range [0, {env.num_styles})")
    fields = env.descriptor_fields
    obs = env.reset(style_index)
    frames = [extract_descriptor(env.descriptor_state(), fields)]
    while len(frames) < duration_steps:
        obs, terminated = env.step(policy_fn(obs))
        frames.append(extract_descriptor(env.descriptor_state(), fields))
        if terminated:
            break
    if len(frames) < 2:
        raise RecordingError("episode terminated before two frames were recorded")
    return MotionClip(name=name, dt=env.control_dt, fields=fields, frames=np.array(frames))
