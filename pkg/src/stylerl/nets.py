"""Fully connected networks with exact reverse-mode gradients, in float64.

Three gradient paths are provided:

* ``backward``       -- gradients of ``sum_k upstream_k . f(x_k)`` w.r.t.
                        parameters and inputs (plain reverse mode).
* ``input_gradient`` -- per-sample gradient of a scalar-output net w.r.t. its
                        input (used for the discriminator gradient penalty and
                        its reward).
* ``grad_norm_backward`` -- the mean squared input-gradient norm *and* its
                        parameter gradients. This is the second-order path:
                        the input gradient is re-expressed as a
                        forward-mode directional derivative (tangent = the
                        input gradient itself), and plain reverse mode is run
                        over that augmented computation.

Everything is deterministic given parameters and inputs; no global state.
"""

from __future__ import annotations

import numpy as np

from stylerl import blob
from stylerl.errors import CheckpointError

ACTIVATIONS = ("tanh", "elu")

_MLP_MAGIC = b"SRLMLP01"
_ADAM_MAGIC = b"SRLADM01"
_MLP_VERSION = 1
_ADAM_VERSION = 1


def _act(name: str, z: np.ndarray):
    """Return (value, first derivative) of the hidden activation."""
    if name == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    # elu with alpha = 1
    ez = np.exp(np.minimum(z, 0.0))
    a = np.where(z >= 0.0, z, ez - 1.0)
    d1 = np.where(z >= 0.0, 1.0, ez)
    return a, d1


def _act2(name: str, z: np.ndarray):
    """Return (value, first, second derivative) of the hidden activation."""
    if name == "tanh":
        a = np.tanh(z)
        d1 = 1.0 - a * a
        return a, d1, -2.0 * a * d1
    ez = np.exp(np.minimum(z, 0.0))
    a = np.where(z >= 0.0, z, ez - 1.0)
    d1 = np.where(z >= 0.0, 1.0, ez)
    d2 = np.where(z >= 0.0, 0.0, ez)
    return a, d1, d2


class Mlp:
    """Affine layers with a hidden activation and identity output.

    Weights are stored as (fan_in, fan_out) matrices so a batch forward pass
    is ``x @ W + b``. Initialization is scaled-uniform fan-in, seeded through
    the supplied generator.
    """

    def __init__(self, widths, hidden: str = "tanh", rng: np.random.Generator | None = None):
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ValueError(f"need at least two positive layer widths, got {widths}")
        if hidden not in ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {hidden!r}")
        self.widths = widths
        self.hidden = hidden
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    @classmethod
    def zeros(cls, widths, hidden: str = "tanh") -> "Mlp":
        return cls(widths, hidden=hidden, rng=None)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def param_list(self) -> list[np.ndarray]:
        """Parameters in declaration order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def copy(self) -> "Mlp":
        dup = Mlp.zeros(self.widths, self.hidden)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    # ----- forward / reverse ------------------------------------------------

    def _check_input(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"input width {x.shape} incompatible with net input {self.in_dim}")
        return x, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        x, single = self._check_input(x)
        a = x
        last = self.n_layers - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            a = z if layer == last else _act(self.hidden, z)[0]
        return a[0] if single else a

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping layer inputs and activation derivatives.

        Returns ``(out, cache)``; the cache feeds :meth:`backward_from_cache`
        and :meth:`grad_norm_from_cache` so repeated passes over the same
        batch do not recompute the forward sweep.
        """
        x2, _ = self._check_input(x)
        inputs = []  # A_{l-1} per layer
        d1s = []  # act'(Z_l) per hidden layer, None for output
        a = x2
        last = self.n_layers - 1
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ w + b
            if layer == last:
                a, d1 = z, None
            else:
                a, d1 = _act(self.hidden, z)
            d1s.append(d1)
        return a, (inputs, d1s)

    def backward_from_cache(self, cache, upstream: np.ndarray):
        """Reverse sweep over a cached forward pass (batched upstream)."""
        inputs, d1s = cache
        grads: list[np.ndarray | None] = [None] * (2 * self.n_layers)
        delta = upstream  # dL/dZ_l of the current layer
        for layer in range(self.n_layers - 1, -1, -1):
            grads[2 * layer] = inputs[layer].T @ delta
            grads[2 * layer + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[layer].T
            if layer > 0:
                delta = delta * d1s[layer - 1]
        return grads, delta

    def backward(self, x: np.ndarray, upstream: np.ndarray):
        """Exact gradients of ``sum_k upstream_k . f(x_k)``.

        Returns ``(grads, input_grad)`` where grads is a flat list aligned
        with :meth:`param_list` and ``input_grad`` has the shape of ``x``.
        For batched inputs the parameter gradients are summed over the batch;
        scale ``upstream`` by 1/N for means.
        """
        x2, single = self._check_input(x)
        up = np.asarray(upstream, dtype=np.float64)
        if single:
            up = up[None, :]
        if up.shape != (x2.shape[0], self.out_dim):
            raise ValueError(f"upstream shape {up.shape} incompatible with output {self.out_dim}")
        _, cache = self.forward_cached(x2)
        grads, input_grad = self.backward_from_cache(cache, up)
        return grads, (input_grad[0] if single else input_grad)

    def _input_gradient_from_cache(self, cache) -> np.ndarray:
        """Per-sample d f/d x for a scalar output, skipping parameter grads."""
        inputs, d1s = cache
        delta = np.ones((inputs[0].shape[0], 1))
        for layer in range(self.n_layers - 1, -1, -1):
            delta = delta @ self.weights[layer].T
            if layer > 0:
                delta = delta * d1s[layer - 1]
        return delta

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """Per-sample gradient d f/d x for a scalar-output net."""
        if self.out_dim != 1:
            raise ValueError("input_gradient requires a scalar-output network")
        x2, single = self._check_input(x)
        _, cache = self.forward_cached(x2)
        grad = self._input_gradient_from_cache(cache)
        return grad[0] if single else grad

    def _d2_from_d1(self, d1: np.ndarray, a: np.ndarray) -> np.ndarray:
        # second derivative recovered from cached quantities:
        # tanh: a'' = -2 a (1 - a^2); elu: a'' = e^z (= a') below 0, else 0
        if self.hidden == "tanh":
            return -2.0 * a * d1
        return np.where(d1 >= 1.0, 0.0, d1)

    def grad_norm_from_cache(self, cache):
        """Mean squared input-gradient norm and its parameter gradients.

        Returns ``(mean_sq, grads)`` with
        ``mean_sq = (1/N) sum_k ||d f/d x (x_k)||^2`` and ``grads`` the exact
        gradient of that mean w.r.t. the parameters (flat list aligned with
        :meth:`param_list`). The input gradient is re-expressed as a
        forward-mode directional derivative with tangent g = d f/d x, and
        plain reverse mode runs over that augmented computation.
        """
        inputs, d1s = cache
        n = inputs[0].shape[0]
        last = self.n_layers - 1
        g = self._input_gradient_from_cache(cache)
        mean_sq = float(np.sum(g * g) / n)

        # tangent-only forward (primal values come from the cache)
        t_in = []  # T_{l-1}
        s_pre = []  # S_l = T_{l-1} @ W_l
        t = g
        for layer, w in enumerate(self.weights):
            t_in.append(t)
            s = t @ w
            s_pre.append(s)
            t = s if layer == last else d1s[layer] * s

        # reverse pass over the augmented computation with seed dh/dT_L = 1
        grads: list[np.ndarray | None] = [None] * (2 * self.n_layers)
        a_bar = np.zeros((n, 1))
        t_bar = np.ones((n, 1))
        for layer in range(self.n_layers - 1, -1, -1):
            if layer == last:
                z_bar = a_bar
                s_bar = t_bar
            else:
                d1 = d1s[layer]
                d2 = self._d2_from_d1(d1, inputs[layer + 1])
                s_bar = t_bar * d1
                z_bar = a_bar * d1 + t_bar * d2 * s_pre[layer]
            grads[2 * layer] = inputs[layer].T @ z_bar + t_in[layer].T @ s_bar
            grads[2 * layer + 1] = z_bar.sum(axis=0)
            a_bar = z_bar @ self.weights[layer].T
            t_bar = s_bar @ self.weights[layer].T
        scale = 2.0 / n
        return mean_sq, [gr * scale for gr in grads]

    def grad_norm_backward(self, x: np.ndarray):
        """Cache-building wrapper around :meth:`grad_norm_from_cache`."""
        if self.out_dim != 1:
            raise ValueError("grad_norm_backward requires a scalar-output network")
        x2, _ = self._check_input(x)
        _, cache = self.forward_cached(x2)
        return self.grad_norm_from_cache(cache)

    # ----- serialization ----------------------------------------------------

    def to_bytes(self) -> bytes:
        w = blob.Writer()
        w.raw(_MLP_MAGIC)
        w.u32(_MLP_VERSION)
        w.u8(ACTIVATIONS.index(self.hidden))
        w.u32(len(self.widths))
        for width in self.widths:
            w.u32(width)
        for arr in self.param_list():
            w.array(arr)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Mlp":
        r = blob.Reader(data)
        r.expect_magic(_MLP_MAGIC, "mlp blob")
        version = r.u32()
        if version != _MLP_VERSION:
            raise CheckpointError(f"unsupported mlp blob version {version}")
        hidden = ACTIVATIONS[r.u8()]
        n = r.u32()
        widths = tuple(r.u32() for _ in range(n))
        net = cls.zeros(widths, hidden)
        for layer in range(net.n_layers):
            net.weights[layer] = r.array()
            net.biases[layer] = r.array()
            if net.weights[layer].shape != (widths[layer], widths[layer + 1]):
                raise CheckpointError("mlp blob weight shape mismatch")
        if not r.done():
            raise CheckpointError("trailing bytes in mlp blob")
        return net


def add_grads(acc: list[np.ndarray], extra: list[np.ndarray], scale: float = 1.0):
    """In-place ``acc += scale * extra`` over flat gradient lists."""
    for a, e in zip(acc, extra):
        a += scale * e
    return acc


class Adam:
    """First-order adaptive optimizer over a flat list of parameter arrays.

    A step with any non-finite gradient entry is skipped entirely and counted
    in ``skipped_updates`` (divergence diagnostic). Zero gradients are a fixed
    point.
    """

    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.skipped_updates = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> bool:
        """Update ``params`` in place; returns False if skipped as non-finite."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient structure does not match optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                self.skipped_updates += 1
                return False
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return True

    def to_bytes(self) -> bytes:
        w = blob.Writer()
        w.raw(_ADAM_MAGIC)
        w.u32(_ADAM_VERSION)
        for value in (self.lr, self.beta1, self.beta2, self.eps):
            w.f64(value)
        w.u64(self.t)
        w.u64(self.skipped_updates)
        w.u32(len(self.m))
        for m, v in zip(self.m, self.v):
            w.array(m)
            w.array(v)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, params: list[np.ndarray]) -> "Adam":
        r = blob.Reader(data)
        r.expect_magic(_ADAM_MAGIC, "adam blob")
        version = r.u32()
        if version != _ADAM_VERSION:
            raise CheckpointError(f"unsupported adam blob version {version}")
        lr, beta1, beta2, eps = (r.f64() for _ in range(4))
        opt = cls(params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        opt.t = r.u64()
        opt.skipped_updates = r.u64()
        count = r.u32()
        if count != len(params):
            raise CheckpointError("adam blob parameter count mismatch")
        for i in range(count):
            opt.m[i] = r.array()
            opt.v[i] = r.array()
            if opt.m[i].shape != params[i].shape:
                raise CheckpointError("adam blob moment shape mismatch")
        if not r.done():
            raise CheckpointError("trailing bytes in adam blob")
        return opt
