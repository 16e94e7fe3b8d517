"""Minimal reverse-mode automatic differentiation over numpy arrays, plus
the multilayer perceptron, Adam, Polyak tracking, and the squashed-Gaussian
reparameterization used by the agents.

Nodes hold whole arrays, so batched training costs a handful of numpy calls
per layer rather than per scalar. One tape is built per training step and
consumed by a single backward pass.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward", "needs_grad", "_done")

    def __init__(self, value, parents=(), backward=None, needs_grad=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward
        self.needs_grad = needs_grad or any(p.needs_grad for p in parents)
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, grad):
        """Accumulate a gradient the caller may still hold a reference to."""
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def _accumulate_owned(self, grad):
        """Accumulate a freshly allocated gradient (no defensive copy)."""
        if self.grad is None:
            self.grad = grad
        else:
            self.grad += grad

    # operator sugar ---------------------------------------------------------

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __neg__(self):
        return mul(self, constant(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(value) -> Tensor:
    return Tensor(value)


def parameter(value) -> Tensor:
    return Tensor(np.array(value, dtype=float), needs_grad=True)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _acc_unbroadcast(node, g, negate=False):
    """Accumulate g (possibly broadcast) onto node; reductions allocate."""
    u = _unbroadcast(-g if negate else g, node.value.shape)
    if u is g:
        node._accumulate(u)
    else:
        node._accumulate_owned(u)


# -- primitive operations ----------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value, (a, b))
    if out.needs_grad:
        def backward(g):
            if a.needs_grad:
                _acc_unbroadcast(a, g)
            if b.needs_grad:
                _acc_unbroadcast(b, g)
        out._backward = backward
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value, (a, b))
    if out.needs_grad:
        def backward(g):
            if a.needs_grad:
                _acc_unbroadcast(a, g)
            if b.needs_grad:
                b._accumulate_owned(_unbroadcast(-g, b.value.shape))
        out._backward = backward
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value, (a, b))
    if out.needs_grad:
        def backward(g):
            if a.needs_grad:
                a._accumulate_owned(_unbroadcast(g * b.value, a.value.shape))
            if b.needs_grad:
                b._accumulate_owned(_unbroadcast(g * a.value, b.value.shape))
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value, (a, b))
    if out.needs_grad:
        def backward(g):
            if a.needs_grad:
                a._accumulate_owned(g @ b.value.T)
            if b.needs_grad:
                b._accumulate_owned(a.value.T @ g)
        out._backward = backward
    return out


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused affine layer: one tape node for x @ w + b."""
    out = Tensor(x.value @ w.value + b.value, (x, w, b))
    if out.needs_grad:
        def backward(g):
            if x.needs_grad:
                x._accumulate_owned(g @ w.value.T)
            if w.needs_grad:
                w._accumulate_owned(x.value.T @ g)
            if b.needs_grad:
                b._accumulate_owned(g.sum(axis=0))
        out._backward = backward
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.value * a.value, (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate_owned(2.0 * a.value * g)
        out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    val = np.exp(a.value)
    out = Tensor(val, (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate_owned(val * g)
        out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.value), (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate_owned(g / a.value)
        out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    val = np.tanh(a.value)
    out = Tensor(val, (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate_owned((1.0 - val * val) * g)
        out._backward = backward
    return out


def _softplus_values(x: np.ndarray) -> np.ndarray:
    # max(x, 0) + log1p(exp(-|x|)): stable and much faster than logaddexp
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a: Tensor) -> Tensor:
    val = _softplus_values(a.value)
    out = Tensor(val, (a,))
    if out.needs_grad:
        # sigmoid(x) = exp(x - softplus(x)), reusing the forward value
        sig = np.exp(a.value - val)

        def backward(g):
            a._accumulate_owned(sig * g)
        out._backward = backward
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    val = np.clip(a.value, lo, hi)
    out = Tensor(val, (a,))
    if out.needs_grad:
        mask = (a.value > lo) & (a.value < hi)

        def backward(g):
            a._accumulate_owned(np.where(mask, g, 0.0))
        out._backward = backward
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.value <= b.value
    out = Tensor(np.where(take_a, a.value, b.value), (a, b))
    if out.needs_grad:
        def backward(g):
            if a.needs_grad:
                a._accumulate_owned(np.where(take_a, g, 0.0))
            if b.needs_grad:
                b._accumulate_owned(np.where(take_a, 0.0, g))
        out._backward = backward
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,))
    if out.needs_grad:
        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate_owned(np.broadcast_to(g, a.value.shape).copy())
        out._backward = backward
    return out


def tmean(a: Tensor) -> Tensor:
    n = a.value.size
    out = Tensor(a.value.sum() / n, (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate_owned(np.full(a.value.shape, float(g) / n))
        out._backward = backward
    return out


def flatten(a: Tensor) -> Tensor:
    out = Tensor(a.value.reshape(-1), (a,))
    if out.needs_grad:
        def backward(g):
            a._accumulate(g.reshape(a.value.shape))
        out._backward = backward
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.value[:, start:stop], (a,))
    if out.needs_grad:
        def backward(g):
            full = np.zeros_like(a.value)
            full[:, start:stop] = g
            a._accumulate_owned(full)
        out._backward = backward
    return out


def concat(parts, axis=1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    if out.needs_grad:
        sizes = [p.value.shape[axis] for p in parts]

        def backward(g):
            offset = 0
            for p, size in zip(parts, sizes):
                if p.needs_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(offset, offset + size)
                    p._accumulate(g[tuple(sl)])
                offset += size
        out._backward = backward
    return out


def backward(loss: Tensor):
    """Reverse-accumulate gradients from a scalar loss; a tape may only be
    walked once."""
    if loss.value.ndim != 0 and loss.value.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._done:
        raise RuntimeError("backward was already run on this tape")
    loss._done = True
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------

_ACTIVATIONS = {"softplus": softplus, "tanh": tanh}


class Mlp:
    """Fully connected net with a smooth rectifier on hidden layers."""

    def __init__(self, sizes, rng, activation="softplus"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(parameter(rng.uniform(-bound, bound, (fan_in, fan_out))))
            self.biases.append(parameter(rng.uniform(-bound, bound, fan_out)))

    def parameters(self):
        return self.weights + self.biases

    @property
    def param_count(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.sizes[:-1], self.sizes[1:]))

    def forward(self, x: Tensor) -> Tensor:
        act = _ACTIVATIONS[self.activation]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = linear(h, w, b)
            if i != last:
                h = act(h)
        return h

    def forward_array(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass for target nets and rollouts."""
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.value + b.value
            if i != last:
                h = _softplus_values(h) if self.activation == "softplus" else np.tanh(h)
        return h

    def copy_from(self, other: "Mlp"):
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine.value[...] = theirs.value

    def clone(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin.sizes = self.sizes
        twin.activation = self.activation
        twin.weights = [parameter(w.value.copy()) for w in self.weights]
        twin.biases = [parameter(b.value.copy()) for b in self.biases]
        return twin

    # -- checkpoint format: text header line, then little-endian float64 ----

    def save(self, path):
        with open(path, "wb") as fh:
            header = " ".join(str(s) for s in self.sizes) + f" {self.activation}\n"
            fh.write(header.encode("ascii"))
            for p in self.parameters():
                fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").split()
            sizes = [int(s) for s in header[:-1]]
            activation = header[-1]
            net = cls(sizes, np.random.default_rng(0), activation=activation)
            for p in net.parameters():
                raw = fh.read(p.value.size * 8)
                p.value[...] = np.frombuffer(raw, dtype="<f8").reshape(p.value.shape)
        return net


# ---------------------------------------------------------------------------
# Optimization
# ---------------------------------------------------------------------------

class Adam:
    """Adam with the standard bias correction; state is per-parameter."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        correction1 = 1.0 - b1**self.step_count
        correction2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def polyak_update(target_params, online_params, tau: float):
    """target <- tau * online + (1 - tau) * target, in place."""
    for tgt, src in zip(target_params, online_params):
        tgt.value *= 1.0 - tau
        tgt.value += tau * src.value


# ---------------------------------------------------------------------------
# Squashed-Gaussian reparameterization
# ---------------------------------------------------------------------------

def reparameterized_gaussian_sample(mean: Tensor, log_std: Tensor, noise: np.ndarray):
    """Differentiable squashed sample and its log-density.

    action = tanh(mean + exp(log_std) * noise); the log-density carries the
    tanh change-of-variables correction and is differentiable with respect
    to mean and log_std through the pathwise sample. Implemented as one
    fused tape node per output with hand-derived gradients (covered by the
    finite-difference suite).
    """
    s_c = np.clip(log_std.value, LOG_STD_MIN, LOG_STD_MAX)
    in_range = (log_std.value > LOG_STD_MIN) & (log_std.value < LOG_STD_MAX)
    std = np.exp(s_c)
    std_eps = std * noise
    a = np.tanh(mean.value + std_eps)
    dtanh = 1.0 - a * a
    one_m_a2 = (1.0 + SQUASH_EPS) - a * a
    logp = (-0.5 * (noise * noise + LOG_2PI) - s_c - np.log(one_m_a2)).sum(axis=1)

    action = Tensor(a, (mean, log_std))
    log_density = Tensor(logp, (mean, log_std))
    if action.needs_grad:
        def backward_action(g):
            common = g * dtanh
            if mean.needs_grad:
                mean._accumulate_owned(common)
            if log_std.needs_grad:
                log_std._accumulate_owned(common * std_eps * in_range)
        action._backward = backward_action

        # d logp / dz = 2 a (1 - a^2) / (1 + eps - a^2) from the squash
        # correction; the Gaussian term depends on the parameters only
        # through -log_std (the normalized residual is the frozen noise)
        w = 2.0 * a * dtanh / one_m_a2

        def backward_logp(g):
            gg = g[:, None]
            if mean.needs_grad:
                mean._accumulate_owned(gg * w)
            if log_std.needs_grad:
                log_std._accumulate_owned(gg * ((w * std_eps) - 1.0) * in_range)
        log_density._backward = backward_logp
    return action, log_density


def squashed_gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray,
                               action: np.ndarray) -> np.ndarray:
    """Tape-free log-density of already-squashed actions."""
    log_std = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    a = np.clip(action, -1.0 + 1e-12, 1.0 - 1e-12)
    z = np.arctanh(a)
    std = np.exp(log_std)
    gauss = -0.5 * (((z - mean) / std) ** 2 + LOG_2PI) - log_std
    correction = np.log(1.0 + SQUASH_EPS - action**2)
    return (gauss - correction).sum(axis=-1)
