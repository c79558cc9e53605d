"""2-D convolution and its transposed (upsampling) counterpart, NHWC.

Both ops share one im2col/col2im pair, and the transposed op is defined
as the exact adjoint of `conv2d(stride=factor, padding=(k-factor)//2)`,
so the inner-product identity <conv(x), y> == <x, conv_transpose(y)>
holds to float rounding by construction.

Weight layouts:
    conv2d:            (kh, kw, c_in, c_out)
    conv2d_transpose:  (kh, kw, c_out, c_in)   i.e. the weight of the
        downsampling conv this op is the adjoint of.
"""

from __future__ import annotations

import numpy as np

from dreamnav.errors import ConfigError
from dreamnav.nn.tensor import Tensor, _make


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _pad_nhwc(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Patch matrix of shape (N*oh*ow, kh*kw*C) for a padded NHWC input."""
    xp = np.ascontiguousarray(_pad_nhwc(x, pad))
    n, h, w, c = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, kh, kw, c),
        strides=(s0, s1 * stride, s2 * stride, s1, s2, s3),
        writeable=False,
    )
    return view.reshape(n * oh * ow, kh * kw * c), oh, ow


def _col2im(
    cols: np.ndarray, n: int, h: int, w: int, c: int, kh: int, kw: int, stride: int, pad: int
) -> np.ndarray:
    """Adjoint of `_im2col`: scatter-add patches back onto an (N,h,w,c) grid."""
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    out = np.zeros((n, hp, wp, c), dtype=cols.dtype)
    colsr = cols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        hi = i + (oh - 1) * stride + 1
        for j in range(kw):
            wj = j + (ow - 1) * stride + 1
            out[:, i:hi:stride, j:wj:stride, :] += colsr[:, :, :, i, j, :]
    if pad:
        out = out[:, pad : pad + h, pad : pad + w, :]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NHWC batch with an (kh,kw,c_in,c_out) kernel."""
    if x.data.ndim != 4:
        raise ConfigError(f"conv2d input must be NHWC 4-D, got shape {x.data.shape}")
    if w.data.ndim != 4:
        raise ConfigError(f"conv2d weight must be 4-D (kh,kw,c_in,c_out), got {w.data.shape}")
    if stride < 1 or padding < 0:
        raise ConfigError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    n, h, wid, c_in = x.data.shape
    kh, kw, wc_in, c_out = w.data.shape
    if c_in != wc_in:
        raise ConfigError(
            f"conv2d channel mismatch: input shape {x.data.shape} vs weight shape {w.data.shape}"
        )
    if h + 2 * padding < kh or wid + 2 * padding < kw:
        raise ConfigError(
            f"conv2d kernel {kh}x{kw} larger than padded input {x.data.shape} (padding={padding})"
        )

    w2 = w.data.reshape(kh * kw * c_in, c_out)
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        cols, oh, ow = x.data.reshape(n * h * wid, c_in), h, wid
    else:
        cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    out2 = cols @ w2
    if b is not None:
        out2 = out2 + b.data
    out = out2.reshape(n, oh, ow, c_out)

    def back(g):
        g2 = g.reshape(n * oh * ow, c_out)
        dw = (cols.T @ g2).reshape(w.data.shape)
        db = None if b is None else g2.sum(axis=0)
        if kh == 1 and kw == 1 and stride == 1 and padding == 0:
            dx = (g2 @ w2.T).reshape(n, h, wid, c_in)
        else:
            dx = _col2im(g2 @ w2.T, n, h, wid, c_in, kh, kw, stride, padding)
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None, upsample_factor: int = 2) -> Tensor:
    """Upsampling conv: output spatial dims are `upsample_factor`x the input's.

    Defined as the adjoint of conv2d(stride=factor, padding=(kh-factor)//2).
    Input has c_in channels (the weight's last axis), output has c_out.
    """
    if x.data.ndim != 4:
        raise ConfigError(f"conv2d_transpose input must be NHWC 4-D, got {x.data.shape}")
    kh, kw, c_out, c_in = w.data.shape
    if kh != kw:
        raise ConfigError(f"conv2d_transpose expects square kernels, got {w.data.shape}")
    if (kh - upsample_factor) % 2 != 0 or kh < upsample_factor:
        raise ConfigError(
            f"kernel {kh} incompatible with upsample factor {upsample_factor}: "
            "(kernel - factor) must be even and non-negative"
        )
    n, h, wid, xc = x.data.shape
    if xc != c_in:
        raise ConfigError(
            f"conv2d_transpose channel mismatch: input {x.data.shape} vs weight {w.data.shape}"
        )
    stride = upsample_factor
    pad = (kh - stride) // 2
    oh, ow = h * stride, wid * stride

    w2 = w.data.reshape(kh * kw * c_out, c_in)
    x2 = x.data.reshape(n * h * wid, c_in)
    out = _col2im(x2 @ w2.T, n, oh, ow, c_out, kh, kw, stride, pad)
    if b is not None:
        out = out + b.data

    def back(g):
        gcols, goh, gow = _im2col(g, kh, kw, stride, pad)
        # by construction goh == h, gow == wid
        dx = (gcols @ w2).reshape(n, h, wid, c_in)
        dw = (gcols.T @ x2).reshape(w.data.shape)
        db = None if b is None else g.sum(axis=(0, 1, 2))
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)
