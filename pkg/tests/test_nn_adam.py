import numpy as np
import pytest

from dreamnav.errors import ConfigError, TrainError
from dreamnav import nn
from dreamnav.nn import ParamStore, Tensor, adam_step


def test_first_step_moves_by_about_lr():
    store = ParamStore()
    p = store.add("w", np.array([1.0], np.float32))
    p.grad = np.array([1.0], np.float32)
    adam_step(store, lr=0.001)
    # bias-corrected m-hat = v-hat = 1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(1.0 - 0.001, abs=1e-7)
    assert store.t == 1
    assert p.grad is None  # consumed


def test_zero_grad_leaves_param_put_counts_step():
    store = ParamStore()
    p = store.add("w", np.array([2.5], np.float32))
    p.grad = np.zeros(1, np.float32)
    adam_step(store, lr=0.1)
    assert p.data[0] == 2.5
    assert store.t == 1


def test_missing_grad_raises():
    store = ParamStore()
    store.add("w", np.zeros(3, np.float32))
    with pytest.raises(TrainError, match="'w'"):
        adam_step(store, lr=0.01)


def test_nonfinite_grad_names_parameter():
    store = ParamStore()
    store.add("enc/w", np.zeros(2, np.float32))
    store.add("dec/w", np.zeros(2, np.float32))
    store.zero_grad()
    store["dec/w"].grad[0] = np.nan
    with pytest.raises(TrainError, match="dec/w"):
        store.check_finite_grads()


def test_duplicate_name_rejected():
    store = ParamStore()
    store.add("w", np.zeros(1, np.float32))
    with pytest.raises(ConfigError):
        store.add("w", np.zeros(1, np.float32))


def test_training_is_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(42)
        store = ParamStore()
        w = store.add("w", rng.normal(size=(4, 4)).astype(np.float32))
        x = rng.normal(size=(4, 1)).astype(np.float32)
        for _ in range(25):
            store.zero_grad()
            out = nn.matmul(w, Tensor(x))
            nn.backward(nn.sum_(nn.square(out)))
            adam_step(store, lr=0.01)
        return w.data.copy()

    assert np.array_equal(run(), run())


def test_flat_roundtrip():
    store = ParamStore()
    rng = np.random.default_rng(0)
    store.add("a", rng.normal(size=(2, 3)).astype(np.float32))
    store.add("b", rng.normal(size=(4,)).astype(np.float32))
    flat = store.flat_values()
    assert flat.shape == (10,)
    store.set_flat_values(flat * 2.0)
    assert np.allclose(store["a"].data, flat[:6].reshape(2, 3) * 2.0)
