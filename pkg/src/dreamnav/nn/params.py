"""Named parameter collections and the Adam update."""

from __future__ import annotations

import math

import numpy as np

from dreamnav.errors import ConfigError, TrainError
from dreamnav.nn.tensor import Tensor


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Uniform init with ReLU gain: bound = sqrt(6 / fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class ParamStore:
    """Ordered name -> Tensor map with per-parameter Adam moments.

    Names are unique; moment buffers always shape-match their parameter;
    the step counter only moves forward.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Tensor(np.asarray(value), requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params.keys())

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def n_parameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def subset(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def view(self, prefix) -> "ParamStore":
        """A store sharing this store's Tensor objects for names under
        `prefix` (a string or tuple of strings), with its own fresh Adam
        state. Updates are visible to both stores since the tensors are
        the same instances."""
        sub = ParamStore()
        for k, v in self._params.items():
            if k.startswith(prefix):
                sub._params[k] = v
        return sub

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros_like(p.data)

    def check_finite_grads(self) -> None:
        for name, p in self._params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise TrainError(f"non-finite gradient in parameter {name!r}")

    def check_finite_params(self) -> None:
        for name, p in self._params.items():
            if not np.isfinite(p.data).all():
                raise TrainError(f"non-finite value in parameter {name!r}")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            p = self._params.get(name)
            if p is None:
                raise ConfigError(f"unknown parameter {name!r} in state dict")
            if p.data.shape != arr.shape:
                raise ConfigError(
                    f"shape mismatch for {name!r}: have {p.data.shape}, loading {arr.shape}"
                )
            p.data = arr.astype(p.data.dtype)

    def flat_values(self, names=None) -> np.ndarray:
        names = self.names() if names is None else names
        return np.concatenate([self._params[n].data.reshape(-1) for n in names])

    def set_flat_values(self, flat: np.ndarray, names=None) -> None:
        names = self.names() if names is None else names
        ofs = 0
        for n in names:
            p = self._params[n]
            p.data = flat[ofs : ofs + p.size].reshape(p.shape).astype(p.data.dtype)
            ofs += p.size
        if ofs != flat.size:
            raise ConfigError(f"flat vector length {flat.size} does not match parameters ({ofs})")


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One Adam update over every parameter in the store; consumes gradients."""
    store.t += 1
    t = store.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store._params.items():
        g = p.grad
        if g is None:
            raise TrainError(f"adam_step: parameter {name!r} has no gradient")
        m = store._m.get(name)
        if m is None:
            m = store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - (lr / bc1) * m / (np.sqrt(v / bc2) + eps)
        p.grad = None
