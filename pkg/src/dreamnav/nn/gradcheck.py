"""Finite-difference verification of recorded gradients."""

from __future__ import annotations

import numpy as np

from dreamnav.nn.tensor import Tensor, backward


def grad_check(
    build_loss,
    leaves: list[Tensor],
    eps: float = 1e-3,
    max_probes_per_leaf: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between recorded and central-difference gradients.

    `build_loss` must rebuild the scalar loss from the leaves' current
    `.data` every call. The analytic gradient is taken from the graph as
    built (whatever dtype the leaves carry); the numeric probe always runs
    in float64 so the reference side never limits the comparison. Error
    per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    for leaf in leaves:
        leaf.requires_grad = True
        leaf.grad = None
    loss = build_loss()
    backward(loss)
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    original = [leaf.data for leaf in leaves]
    for leaf in leaves:
        leaf.data = leaf.data.astype(np.float64)
    try:
        worst = 0.0
        for leaf, ana in zip(leaves, analytic):
            flat = leaf.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_probes_per_leaf is not None and flat.size > max_probes_per_leaf:
                gen = rng if rng is not None else np.random.default_rng(0)
                idx = gen.choice(flat.size, size=max_probes_per_leaf, replace=False)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = float(build_loss().data)
                flat[i] = orig - eps
                f_minus = float(build_loss().data)
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = float(ana.reshape(-1)[i])
                denom = max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, abs(a - numeric) / denom)
    finally:
        for leaf, data in zip(leaves, original):
            leaf.data = data
    return worst
