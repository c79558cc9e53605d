import numpy as np
import pytest

from dreamnav.errors import ConfigError
from dreamnav import nn
from dreamnav.nn import Tensor


def _rand(shape, rng, dtype=np.float32):
    return rng.normal(size=shape).astype(dtype)


def test_output_size_single_layer():
    # 64x64x3 input, 4x4 kernel, stride 2, no padding -> 31x31
    rng = np.random.default_rng(0)
    x = Tensor(_rand((1, 64, 64, 3), rng))
    w = Tensor(_rand((4, 4, 3, 8), rng))
    b = Tensor(np.zeros(8, np.float32))
    y = nn.conv2d(x, w, b, stride=2, padding=0)
    assert y.shape == (1, 31, 31, 8)


def test_spatial_chain_64_to_2():
    rng = np.random.default_rng(1)
    x = Tensor(_rand((1, 64, 64, 3), rng))
    sizes = [x.shape[1]]
    channels = [3, 32, 64, 128, 256]
    for c_in, c_out in zip(channels, channels[1:]):
        w = Tensor(_rand((4, 4, c_in, c_out), rng) * 0.05)
        x = nn.conv2d(x, w, Tensor(np.zeros(c_out, np.float32)), stride=2, padding=0)
        sizes.append(x.shape[1])
    assert sizes == [64, 31, 14, 6, 2]
    assert x.shape == (1, 2, 2, 256)


def test_identity_one_by_one_kernel():
    rng = np.random.default_rng(2)
    x = Tensor(_rand((2, 5, 5, 3), rng))
    w = np.zeros((1, 1, 3, 3), np.float32)
    for c in range(3):
        w[0, 0, c, c] = 1.0
    y = nn.conv2d(x, Tensor(w), Tensor(np.zeros(3, np.float32)), stride=1, padding=0)
    assert np.array_equal(y.data, x.data)


def test_channel_mismatch_reports_both_shapes():
    x = Tensor(np.zeros((1, 8, 8, 3), np.float32))
    w = Tensor(np.zeros((4, 4, 5, 2), np.float32))
    with pytest.raises(ConfigError, match=r"\(1, 8, 8, 3\).*\(4, 4, 5, 2\)"):
        nn.conv2d(x, w, None, stride=2, padding=0)


def test_transpose_doubles_spatial_dims():
    rng = np.random.default_rng(3)
    x = Tensor(_rand((1, 2, 2, 6), rng))
    w = Tensor(_rand((4, 4, 4, 6), rng))
    y = nn.conv2d_transpose(x, w, Tensor(np.zeros(4, np.float32)), upsample_factor=2)
    assert y.shape == (1, 4, 4, 4)


def test_transpose_chain_2_to_64():
    rng = np.random.default_rng(4)
    x = Tensor(_rand((1, 2, 2, 256), rng) * 0.1)
    for c_in, c_out in [(256, 256), (256, 128), (128, 64), (64, 32), (32, 3)]:
        w = Tensor(_rand((4, 4, c_out, c_in), rng) * 0.02)
        x = nn.conv2d_transpose(x, w, Tensor(np.zeros(c_out, np.float32)))
    assert x.shape == (1, 64, 64, 3)


def test_transpose_rejects_incompatible_kernel():
    x = Tensor(np.zeros((1, 2, 2, 4), np.float32))
    w = Tensor(np.zeros((3, 3, 2, 4), np.float32))
    with pytest.raises(ConfigError):
        nn.conv2d_transpose(x, w, None, upsample_factor=2)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_conv_transpose_adjoint_identity(seed):
    # <conv(x), y> == <x, conv_transpose(y)> with a shared kernel
    rng = np.random.default_rng(seed)
    x = _rand((2, 8, 8, 5), rng, np.float64)
    w = Tensor(_rand((4, 4, 5, 7), rng, np.float64))
    y = _rand((2, 4, 4, 7), rng, np.float64)

    cx = nn.conv2d(Tensor(x), w, None, stride=2, padding=1).data
    wt = Tensor(w.data.copy())  # layout (kh, kw, c_out=5, c_in=7) from the transpose op's view
    ty = nn.conv2d_transpose(Tensor(y), wt, None, upsample_factor=2).data

    lhs = float((cx * y).sum())
    rhs = float((x * ty).sum())
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-4)


def test_conv_matches_bruteforce_loops():
    rng = np.random.default_rng(5)
    x = _rand((1, 6, 6, 2), rng, np.float64)
    w = _rand((3, 3, 2, 4), rng, np.float64)
    b = _rand((4,), rng, np.float64)
    out = nn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1).data

    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    expected = np.zeros_like(out)
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            patch = xp[0, i * 2 : i * 2 + 3, j * 2 : j * 2 + 3, :]
            for co in range(4):
                expected[0, i, j, co] = (patch * w[:, :, :, co]).sum() + b[co]
    assert np.allclose(out, expected, rtol=1e-12)
