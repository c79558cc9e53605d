"""Dense tensors with eagerly recorded reverse-mode gradients.

Layout convention for activations is NHWC throughout the package. A graph
is recorded through per-node closures while ops execute and is released as
soon as `backward` has run, so one training step owns one graph.

Dtype policy: ops preserve the dtype of their inputs. Models run float32;
gradient checking builds the same graphs in float64.
"""

from __future__ import annotations

import contextlib

import numpy as np

from dreamnav.errors import ConfigError, TrainError

_GRAD_ENABLED = True


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy array plus an optional gradient buffer and graph linkage.

    Invariants: `grad`, when present, has the same shape as `data`; values
    must stay finite after any forward/backward pass (checked by trainers,
    not per op).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("divide by a Tensor is not part of the op set; use mul of a reciprocal")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr)


def _make(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Wrap an op result; record graph linkage only when grads can flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce `grad` back to `shape` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), back)


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), back)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), back)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def back(g):
        return (2.0 * g * a.data,)

    return _make(out, (a,), back)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def back(g):
        return (g * out,)

    return _make(out, (a,), back)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def back(g):
        return (g / a.data,)

    return _make(out, (a,), back)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def back(g):
        # subgradient 0 at the kink
        return (g * (a.data > 0),)

    return _make(out, (a,), back)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ConfigError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    out = np.where(a.data > 0, a.data, a.data * np.asarray(slope, a.dtype))

    def back(g):
        return (np.where(a.data > 0, g, g * np.asarray(slope, a.dtype)),)

    return _make(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), back)


def activation(a: Tensor, kind: str, slope: float = 0.2) -> Tensor:
    """Dispatch by name; `kind` is one of relu | leaky_relu | sigmoid | tanh | none."""
    if kind == "relu":
        return relu(a)
    if kind == "leaky_relu":
        return leaky_relu(a, slope)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    if kind == "none":
        return a
    raise ConfigError(f"unknown activation kind {kind!r}")


# ---------------------------------------------------------------------------
# shape / gather ops


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out = a.data.reshape(shape)

    def back(g):
        return (g.reshape(old),)

    return _make(out, (a,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), back)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), back)


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# reductions and compositions


def sum_(a: Tensor, axis=None) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        g_exp = np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).astype(a.dtype, copy=True),)

    return _make(out, (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return sum_(a, axis=axis) * (1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ConfigError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ConfigError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x of shape (N, D); w (D, M), b (M,)."""
    if x.data.ndim != 2:
        raise ConfigError(f"linear expects a 2-D input, got shape {x.data.shape}")
    if x.data.shape[1] != w.data.shape[0]:
        raise ConfigError(
            f"linear dim mismatch: input {x.data.shape} incompatible with weight {w.data.shape}"
        )
    return add(matmul(x, w), b)


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements."""
    d = sub(a, _as_tensor(b, a.dtype))
    return mean(square(d))


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy, computed from logits for stability."""
    t = np.asarray(targets, dtype=logits.dtype)
    z = logits.data
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(loss.mean(), dtype=logits.dtype)

    def back(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        return (g * (p - t) / z.size,)

    return _make(out, (logits,), back)


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, diag exp(logvar)) || N(0, I)) summed over all elements:
    0.5 * sum(mu^2 + exp(logvar) - logvar - 1). Non-negative."""
    if mu.shape != logvar.shape:
        raise ConfigError(f"kl_diag_gaussian shape mismatch: {mu.shape} vs {logvar.shape}")
    term = add(sub(add(square(mu), exp(logvar)), logvar), -1.0)
    return sum_(term) * 0.5


def reparameterize(mu: Tensor, logvar: Tensor, rng: np.random.Generator) -> Tensor:
    """Sample mu + exp(logvar/2) * eps with eps ~ N(0, I) from `rng`."""
    if mu.shape != logvar.shape:
        raise ConfigError(f"reparameterize shape mismatch: {mu.shape} vs {logvar.shape}")
    eps = rng.standard_normal(mu.shape).astype(mu.dtype)
    std = exp(mul(logvar, 0.5))
    return add(mu, mul(std, Tensor(eps)))


# ---------------------------------------------------------------------------
# reverse pass


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) to every reachable leaf with requires_grad.

    `loss` must be a scalar. Leaf gradients accumulate into `.grad` (so a
    prior `zero_grad` on the parameter store gives non-participating
    parameters an explicit zero gradient).
    """
    if loss.data.size != 1:
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ConfigError("loss does not depend on any tensor with requires_grad")
    if not np.isfinite(loss.data).all():
        raise TrainError("loss is non-finite before backward")

    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                grads[id(parent)] = pg
            else:
                # out-of-place: backward fns may hand back views of shared buffers
                grads[id(parent)] = acc + pg
        # release graph references eagerly
        node._backward = None
        node._parents = ()
