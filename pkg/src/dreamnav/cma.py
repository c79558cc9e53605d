"""Covariance matrix adaptation evolution strategy (minimization).

Standard (mu/lambda) weighted-recombination CMA-ES with evolution paths
and cumulative step-size adaptation. Two covariance modes:

  * full:     complete covariance with per-generation eigendecomposition;
              fine up to a few hundred dimensions.
  * diagonal: separable variant that adapts coordinate-wise variances
              only; linear cost, used for policy searches with thousands
              of parameters.

Degenerate covariances trigger a restart around the current mean with an
inflated step size; restarts are counted and logged.
"""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class CMAES:
    def __init__(
        self,
        x0: np.ndarray,
        sigma0: float,
        population: int | None = None,
        diagonal: bool = False,
        seed: int = 0,
        restart_inflate: float = 3.0,
    ):
        self.n = int(np.asarray(x0).size)
        self.mean = np.asarray(x0, np.float64).reshape(-1).copy()
        self.sigma0 = float(sigma0)
        self.sigma = float(sigma0)
        self.diagonal = diagonal
        self.restart_inflate = restart_inflate
        self.rng = np.random.default_rng(seed)

        n = self.n
        self.lam = population if population is not None else 4 + int(3 * math.log(n))
        self.mu = self.lam // 2
        w = np.log((self.lam + 1) / 2.0) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mu_eff = 1.0 / float((self.weights**2).sum())

        self.c_sigma = (self.mu_eff + 2) / (n + self.mu_eff + 5)
        self.d_sigma = 1 + 2 * max(0.0, math.sqrt((self.mu_eff - 1) / (n + 1)) - 1) + self.c_sigma
        self.c_c = (4 + self.mu_eff / n) / (n + 4 + 2 * self.mu_eff / n)
        self.c_1 = 2 / ((n + 1.3) ** 2 + self.mu_eff)
        self.c_mu = min(
            1 - self.c_1, 2 * (self.mu_eff - 2 + 1 / self.mu_eff) / ((n + 2) ** 2 + self.mu_eff)
        )
        if diagonal:
            # separable variant learns n instead of n^2 entries
            self.c_mu = min(1 - self.c_1, self.c_mu * (n + 2) / 3.0)
        self.chi_n = math.sqrt(n) * (1 - 1 / (4 * n) + 1 / (21 * n * n))

        self._reset_covariance()
        self.p_sigma = np.zeros(n)
        self.p_c = np.zeros(n)
        self.generation = 0
        self.restarts = 0
        self.best_x = self.mean.copy()
        self.best_f = math.inf
        self._pending = None

    def _reset_covariance(self):
        if self.diagonal:
            self.var = np.ones(self.n)
        else:
            self.cov = np.eye(self.n)
            self._decompose()

    def _decompose(self):
        self.cov = (self.cov + self.cov.T) / 2.0
        vals, vecs = np.linalg.eigh(self.cov)
        vals = np.maximum(vals, 1e-20)
        self._eigvals = vals
        self._eigvecs = vecs
        self._sqrt_d = np.sqrt(vals)

    def ask(self) -> np.ndarray:
        """Sample lam candidates, shape (lam, n)."""
        z = self.rng.standard_normal((self.lam, self.n))
        if self.diagonal:
            y = z * np.sqrt(self.var)
        else:
            y = (z * self._sqrt_d) @ self._eigvecs.T
        xs = self.mean + self.sigma * y
        self._pending = (xs, y, z)
        return xs

    def tell(self, xs: np.ndarray, fitnesses: np.ndarray) -> None:
        """Rank-based update; fitness is minimized."""
        fit = np.asarray(fitnesses, np.float64)
        order = np.argsort(fit, kind="stable")
        if fit[order[0]] < self.best_f:
            self.best_f = float(fit[order[0]])
            self.best_x = np.asarray(xs[order[0]], np.float64).copy()

        _, y_all, _ = self._pending
        y_sel = y_all[order[: self.mu]]
        y_w = self.weights @ y_sel
        self.mean = self.mean + self.sigma * y_w

        if self.diagonal:
            c_inv_sqrt_yw = y_w / np.sqrt(self.var)
        else:
            c_inv_sqrt_yw = self._eigvecs @ ((self._eigvecs.T @ y_w) / self._sqrt_d)
        self.p_sigma = (1 - self.c_sigma) * self.p_sigma + math.sqrt(
            self.c_sigma * (2 - self.c_sigma) * self.mu_eff
        ) * c_inv_sqrt_yw

        ps_norm = float(np.linalg.norm(self.p_sigma))
        h_sigma = ps_norm / math.sqrt(
            1 - (1 - self.c_sigma) ** (2 * (self.generation + 1))
        ) < (1.4 + 2 / (self.n + 1)) * self.chi_n
        self.p_c = (1 - self.c_c) * self.p_c + (
            math.sqrt(self.c_c * (2 - self.c_c) * self.mu_eff) * y_w if h_sigma else 0.0
        )

        if self.diagonal:
            rank_mu = self.weights @ (y_sel**2)
            self.var = (
                (1 - self.c_1 - self.c_mu) * self.var
                + self.c_1 * self.p_c**2
                + self.c_mu * rank_mu
            )
        else:
            rank_one = np.outer(self.p_c, self.p_c)
            rank_mu = (y_sel * self.weights[:, None]).T @ y_sel
            self.cov = (1 - self.c_1 - self.c_mu) * self.cov + self.c_1 * rank_one + self.c_mu * rank_mu

        self.sigma *= math.exp((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1))
        self.generation += 1

        if self._degenerate():
            self.restarts += 1
            log.warning("covariance degenerated at generation %d; restarting", self.generation)
            self.sigma = self.sigma0 * self.restart_inflate
            self.p_sigma[:] = 0.0
            self.p_c[:] = 0.0
            self._reset_covariance()
        elif not self.diagonal:
            self._decompose()

    def _degenerate(self) -> bool:
        if not math.isfinite(self.sigma) or self.sigma < 1e-12 or self.sigma > 1e7 * self.sigma0:
            return True
        if self.diagonal:
            if not np.isfinite(self.var).all() or self.var.min() <= 0:
                return True
            return float(self.var.max() / self.var.min()) > 1e14
        if not np.isfinite(self.cov).all():
            return True
        vals = np.linalg.eigvalsh((self.cov + self.cov.T) / 2.0)
        return vals.min() <= 0 or float(vals.max() / max(vals.min(), 1e-300)) > 1e14


def minimize(f, x0, sigma0, generations: int, population: int | None = None, seed: int = 0, diagonal: bool = False):
    """Small functional wrapper: returns (best_x, best_f)."""
    es = CMAES(x0, sigma0, population=population, seed=seed, diagonal=diagonal)
    for _ in range(generations):
        xs = es.ask()
        es.tell(xs, np.array([f(x) for x in xs]))
    return es.best_x, es.best_f
