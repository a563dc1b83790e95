"""Randomized low-rank SVD (Halko, Martinsson & Tropp 2011).

The range finder sketches ``a`` with a Gaussian test matrix, runs ``q``
subspace power iterations with re-orthonormalization after every
multiplication, and returns an orthonormal basis ``Q`` with
``k + p`` columns. The leading singular values of the compressed matrix
``Q^T a`` approximate those of ``a`` from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import SvdResult, as_matrix, gaussian_matrix, orthonormalize_stack, svd


@dataclass(frozen=True)
class RsvdConfig:
    k: int
    p: int = 2
    q: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"target rank k must be >= 1, got {self.k}")
        if self.p < 0:
            raise ValueError(f"oversampling p must be >= 0, got {self.p}")
        if self.q < 0:
            raise ValueError(f"power iterations q must be >= 0, got {self.q}")

    @property
    def sketch_size(self) -> int:
        return self.k + self.p

    def check_shape(self, rows: int, cols: int) -> None:
        if self.sketch_size > min(rows, cols):
            raise ValueError(
                f"k + p = {self.sketch_size} exceeds min dimension {min(rows, cols)} "
                f"of a {rows}x{cols} matrix"
            )


@dataclass(frozen=True)
class RsvdResult:
    q_star: np.ndarray
    compressed: np.ndarray
    svd_of_compressed: SvdResult
    top_k_sigmas: np.ndarray

    @property
    def k(self) -> int:
        return len(self.top_k_sigmas)

    def rank_k_approximation(self) -> np.ndarray:
        """``Q (Q^T a)_k``: the rank-k reconstruction from the truncated compressed SVD."""
        u, s, vt = self.svd_of_compressed
        k = self.k
        return self.q_star @ ((u[:, :k] * s[:k]) @ vt[:k])


def range_finder_stack(a: np.ndarray, omega: np.ndarray, power_iters: int) -> np.ndarray:
    """Range finder on a stack of matrices ``a`` (..., m, n) with sketches ``omega`` (..., n, l)."""
    at = np.swapaxes(a, -1, -2)
    q = orthonormalize_stack(a @ omega)
    for _ in range(power_iters):
        z = orthonormalize_stack(at @ q)
        q = orthonormalize_stack(a @ z)
    return q


def randomized_range_finder(a, cfg: RsvdConfig, seed) -> np.ndarray:
    """Orthonormal ``Q`` (rows x (k+p)) with ``Q Q^T a ~= a``.

    ``Omega`` is drawn once from ``seed`` and reused for every power step.
    """
    a = as_matrix(a)
    cfg.check_shape(*a.shape)
    omega = gaussian_matrix(a.shape[1], cfg.sketch_size, seed)
    return range_finder_stack(a, omega, cfg.q)


def rsvd(a, cfg: RsvdConfig, seed) -> RsvdResult:
    a = as_matrix(a)
    q_star = randomized_range_finder(a, cfg, seed)
    compressed = q_star.T @ a
    dec = svd(compressed)
    return RsvdResult(q_star, compressed, dec, dec.s[: cfg.k].copy())


def halko_constant(cfg: RsvdConfig, r: int) -> float:
    """C_{k,q} = 1 + (1 + 4 sqrt(2r / (k - 1)))^(1 / (2q + 1))."""
    if cfg.k < 2:
        raise ValueError(f"halko_constant needs k >= 2 (the formula divides by k - 1), got k = {cfg.k}")
    if r < cfg.k:
        raise ValueError(f"rank r = {r} must be >= k = {cfg.k}")
    inner = 1.0 + 4.0 * math.sqrt(2.0 * r / (cfg.k - 1))
    return 1.0 + inner ** (1.0 / (2 * cfg.q + 1))

