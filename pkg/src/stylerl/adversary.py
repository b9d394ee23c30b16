"""Per-style adversarial machinery.

Each trainable style owns a discriminator, a FIFO buffer of policy-side
transition descriptors, and a motion dataset. The discriminator is fit by
least squares (motion transitions scored +1, policy transitions -1) plus a
gradient penalty on the motion samples. Its logit maps to a non-negative
style reward through the stable softplus form of -log(1 - sigmoid(x)).

Data-free styles keep the same structure but are never updated and always
yield zero style reward.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from stylerl import blob
from stylerl.errors import CheckpointError, StyleRlError, TrainingDivergenceError
from stylerl.motion import MotionDataset, TransitionDescriptor, TransitionSampler
from stylerl.nets import Adam, Mlp, add_grads

log = logging.getLogger(__name__)

DEFAULT_GP_WEIGHT = 10.0

_BUF_MAGIC = b"SRLBUF01"
_NORM_MAGIC = b"SRLNRM01"


class BufferWarmup(StyleRlError):
    """Policy buffer does not yet hold enough descriptors for an update."""


def style_reward_from_logit(logit):
    """Map discriminator logits to rewards: -log(1 - sigmoid(x)) = softplus(x).

    Uses the overflow-safe branch max(x, 0) + log1p(exp(-|x|)); finite and
    non-negative for every finite logit.
    """
    x = np.asarray(logit, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return float(out) if np.isscalar(logit) or x.ndim == 0 else out


class RingBuffer:
    """Fixed-capacity FIFO of descriptor rows with uniform sampling."""

    def __init__(self, capacity: int, width: int):
        if capacity < 1 or width < 1:
            raise ValueError("capacity and width must be positive")
        self.capacity = int(capacity)
        self.width = int(width)
        self.data = np.zeros((self.capacity, self.width))
        self.head = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ValueError(f"expected rows of width {self.width}, got shape {rows.shape}")
        n = rows.shape[0]
        if n >= self.capacity:
            # only the newest `capacity` rows survive
            self.data[:] = rows[n - self.capacity :]
            self.head = 0
            self.size = self.capacity
            return
        idx = (self.head + np.arange(n)) % self.capacity
        self.data[idx] = rows
        self.head = (self.head + n) % self.capacity
        self.size = min(self.size + n, self.capacity)

    def snapshot(self) -> np.ndarray:
        """Contents in FIFO order (oldest first)."""
        if self.size < self.capacity:
            return self.data[: self.size].copy()
        return np.concatenate([self.data[self.head :], self.data[: self.head]])

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise BufferWarmup("policy buffer is empty")
        idx = rng.integers(0, self.size, size=k)
        if self.size < self.capacity:
            return self.data[idx]
        return self.data[(self.head + idx) % self.capacity]

    def to_bytes(self) -> bytes:
        w = blob.Writer()
        w.raw(_BUF_MAGIC)
        w.u64(self.capacity)
        w.u64(self.width)
        w.array(self.snapshot())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RingBuffer":
        r = blob.Reader(data)
        r.expect_magic(_BUF_MAGIC, "ring buffer")
        capacity = r.u64()
        width = r.u64()
        buf = cls(capacity, width)
        rows = r.array()
        if rows.size:
            buf.push(rows)
        if not r.done():
            raise CheckpointError("trailing bytes in ring buffer blob")
        return buf


class RunningNormalizer:
    """Running mean/variance over descriptor rows (batch-merged Welford).

    ``normalize`` is an exact identity until the first update, and is always
    a frozen affine map of whatever statistics are currently stored; callers
    decide when to fold new batches in.
    """

    def __init__(self, width: int, eps: float = 1e-6):
        self.width = int(width)
        self.eps = float(eps)
        self.count = 0
        self.mean = np.zeros(self.width)
        self.m2 = np.zeros(self.width)

    def update(self, rows: np.ndarray):
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[1] != self.width:
            raise ValueError(f"expected rows of width {self.width}, got shape {rows.shape}")
        n = rows.shape[0]
        if n == 0:
            return
        batch_mean = rows.mean(axis=0)
        batch_m2 = ((rows - batch_mean) ** 2).sum(axis=0)
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * (n / total)
        self.m2 = self.m2 + batch_m2 + delta * delta * (self.count * n / total)
        self.count = total

    def normalize(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if self.count == 0:
            return rows
        var = self.m2 / self.count
        return (rows - self.mean) / np.sqrt(var + self.eps)

    def to_bytes(self) -> bytes:
        w = blob.Writer()
        w.raw(_NORM_MAGIC)
        w.u64(self.width)
        w.f64(self.eps)
        w.u64(self.count)
        w.array(self.mean)
        w.array(self.m2)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RunningNormalizer":
        r = blob.Reader(data)
        r.expect_magic(_NORM_MAGIC, "normalizer")
        norm = cls(r.u64(), eps=r.f64())
        norm.count = r.u64()
        norm.mean = r.array()
        norm.m2 = r.array()
        if not r.done():
            raise CheckpointError("trailing bytes in normalizer blob")
        return norm


@dataclass
class StyleSlot:
    """Everything one style needs: discriminator, buffer, dataset, stats.

    ``reward_scale`` is applied by the trainer when composing total rewards,
    not inside :func:`style_reward`.
    """

    index: int
    name: str
    discriminator: Mlp
    policy_buffer: RingBuffer
    dataset: MotionDataset
    normalizer: RunningNormalizer
    optimizer: Adam
    env_weight: int = 1
    reward_scale: float = 1.0
    sampler: TransitionSampler | None = None

    def __post_init__(self):
        if self.env_weight < 1:
            raise ValueError(f"style {self.name!r}: env_weight must be a positive integer")
        if not self.dataset.is_empty:
            if self.sampler is None:
                raise ValueError(f"style {self.name!r}: non-data-free slot needs a sampler")
            if self.discriminator.in_dim != 2 * self.dataset.d_d:
                raise ValueError(
                    f"style {self.name!r}: discriminator input {self.discriminator.in_dim} "
                    f"!= 2 * d_d = {2 * self.dataset.d_d}"
                )

    @property
    def data_free(self) -> bool:
        return self.dataset.is_empty

    @property
    def descriptor_width(self) -> int:
        return self.policy_buffer.width

    def ready(self, k: int) -> bool:
        """True once the policy buffer can serve discriminator batches."""
        return (not self.data_free) and len(self.policy_buffer) >= k


def make_style_slot(index: int, name: str, dataset: MotionDataset, descriptor_width: int,
                    rng: np.random.Generator, hidden=(256, 256), activation: str = "tanh",
                    buffer_capacity: int = 100_000, learning_rate: float = 1e-3,
                    env_weight: int = 1, reward_scale: float = 1.0,
                    holdout_every: int | None = None) -> StyleSlot:
    """Build a slot with a freshly initialized discriminator and empty buffer."""
    if not dataset.is_empty and 2 * dataset.d_d != descriptor_width:
        raise ValueError(
            f"style {name!r}: dataset descriptor width {2 * dataset.d_d} != expected {descriptor_width}"
        )
    disc = Mlp([descriptor_width, *hidden, 1], hidden=activation, rng=rng)
    sampler = None if dataset.is_empty else TransitionSampler(dataset, holdout_every=holdout_every)
    return StyleSlot(
        index=index,
        name=name,
        discriminator=disc,
        policy_buffer=RingBuffer(buffer_capacity, descriptor_width),
        dataset=dataset,
        normalizer=RunningNormalizer(descriptor_width),
        optimizer=Adam(disc.param_list(), lr=learning_rate),
        env_weight=env_weight,
        reward_scale=reward_scale,
        sampler=sampler,
    )


def _as_rows(descriptor, width: int) -> tuple[np.ndarray, bool]:
    if isinstance(descriptor, TransitionDescriptor):
        descriptor = descriptor.values
    rows = np.asarray(descriptor, dtype=np.float64)
    single = rows.ndim == 1
    if single:
        rows = rows[None, :]
    if rows.ndim != 2 or rows.shape[1] != width:
        raise ValueError(f"descriptor width {rows.shape} does not match slot width {width}")
    return rows, single


def slot_logits(slot: StyleSlot, descriptors) -> np.ndarray:
    """Discriminator logits on raw descriptors (normalization applied here)."""
    rows, single = _as_rows(descriptors, slot.descriptor_width)
    logits = slot.discriminator.forward(slot.normalizer.normalize(rows))[:, 0]
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergenceError(f"style {slot.name!r}: non-finite discriminator output")
    return logits[0] if single else logits


def style_reward(slot: StyleSlot, descriptor):
    """Per-step style reward; exactly 0 for data-free slots."""
    rows, single = _as_rows(descriptor, slot.descriptor_width)
    if slot.data_free:
        return 0.0 if single else np.zeros(rows.shape[0])
    return style_reward_from_logit(slot_logits(slot, rows))


def push_policy_descriptor(slot: StyleSlot, descriptor):
    """FIFO-insert policy-side descriptors (accepted for data-free slots too)."""
    rows, _ = _as_rows(descriptor, slot.descriptor_width)
    slot.policy_buffer.push(rows)


@dataclass
class DiscriminatorLoss:
    loss: float
    motion_term: float
    policy_term: float
    penalty_term: float
    grads: list[np.ndarray]


def discriminator_loss(slot: StyleSlot, motion_batch: np.ndarray, policy_batch: np.ndarray,
                       gp_weight: float = DEFAULT_GP_WEIGHT) -> DiscriminatorLoss:
    """Least-squares loss with gradient penalty, plus exact parameter grads.

    ``motion_batch`` and ``policy_batch`` are taken as the discriminator's
    inputs as-is (callers normalize first). The penalty term is evaluated at
    the motion samples only, and its parameter gradients run through the
    second-order path.
    """
    if slot.data_free:
        raise StyleRlError(f"style {slot.name!r} is data-free; discriminator loss undefined")
    if gp_weight < 0:
        raise ValueError("gradient-penalty weight must be non-negative")
    disc = slot.discriminator
    motion = np.asarray(motion_batch, dtype=np.float64)
    policy = np.asarray(policy_batch, dtype=np.float64)
    if motion.ndim != 2 or policy.ndim != 2 or motion.shape[0] == 0 or policy.shape[0] == 0:
        raise ValueError("motion and policy batches must be non-empty 2-D arrays")
    if motion.shape[1] != disc.in_dim or policy.shape[1] != disc.in_dim:
        raise ValueError("batch width does not match discriminator input")

    out_m, cache_m = disc.forward_cached(motion)
    out_p, cache_p = disc.forward_cached(policy)
    d_motion = out_m[:, 0]
    d_policy = out_p[:, 0]
    motion_term = float(np.mean((d_motion - 1.0) ** 2))
    policy_term = float(np.mean((d_policy + 1.0) ** 2))

    grads, _ = disc.backward_from_cache(cache_m, (2.0 * (d_motion - 1.0) / motion.shape[0])[:, None])
    policy_grads, _ = disc.backward_from_cache(cache_p, (2.0 * (d_policy + 1.0) / policy.shape[0])[:, None])
    add_grads(grads, policy_grads)

    penalty_term = 0.0
    if gp_weight > 0.0:
        mean_sq, pen_grads = disc.grad_norm_from_cache(cache_m)
        penalty_term = 0.5 * gp_weight * mean_sq
        add_grads(grads, pen_grads, scale=0.5 * gp_weight)

    loss = motion_term + policy_term + penalty_term
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"style {slot.name!r}: non-finite discriminator loss")
    return DiscriminatorLoss(loss, motion_term, policy_term, penalty_term, grads)


def update_discriminator(slot: StyleSlot, k: int, n_updates: int, rng: np.random.Generator,
                         gp_weight: float = DEFAULT_GP_WEIGHT) -> list[float]:
    """Run ``n_updates`` optimizer steps on fresh motion/policy sample pairs.

    Skipped (empty trace) for data-free slots. The normalizer is read but
    never updated here, so every batch within the call sees the same frozen
    statistics.
    """
    if slot.data_free:
        log.info("style %r is data-free; skipping discriminator update", slot.name)
        return []
    if len(slot.policy_buffer) < k:
        raise BufferWarmup(
            f"style {slot.name!r}: buffer holds {len(slot.policy_buffer)} < {k} descriptors"
        )
    losses = []
    for _ in range(n_updates):
        motion = slot.normalizer.normalize(slot.sampler.sample(k, rng))
        policy = slot.normalizer.normalize(slot.policy_buffer.sample(k, rng))
        report = discriminator_loss(slot, motion, policy, gp_weight)
        slot.optimizer.step(slot.discriminator.param_list(), report.grads)
        losses.append(report.loss)
    return losses


def heldout_accuracy(slot: StyleSlot) -> float:
    """Fraction of held-out motion transitions the discriminator scores > 0."""
    if slot.data_free:
        return 0.0
    rows = slot.sampler.heldout if slot.sampler.heldout.shape[0] else slot.sampler.train
    logits = slot.discriminator.forward(slot.normalizer.normalize(rows))[:, 0]
    return float(np.mean(logits > 0.0))
