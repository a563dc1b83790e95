"""JEPA-SCORE: log-volume of an encoder's Jacobian, exact and sketched.

``JS(x) = sum_{i<=r} log sigma_i(J_f(x))`` over the numerical rank ``r``.
The sketched score keeps only the top ``k`` singular values of the
compressed Jacobian ``Q^T J_f(x)``. :func:`certify` evaluates both, splits
their difference into a sketching part and a truncation part, and checks
each part against its closed-form upper bound.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import Encoder
from .linalg import frobenius_norm, singular_values, spectral_norm, svd
from .rsvd import RsvdConfig, RsvdResult, halko_constant, rsvd

log = logging.getLogger(__name__)

# sigma_i counts toward the rank when sigma_i > RANK_RTOL * sigma_max
RANK_RTOL = 1e-10


class DegenerateScoreError(ArithmeticError):
    """All (or a required) singular value fell below the rank tolerance; the log-sum is -inf."""


def rank_tolerance(sigmas) -> float:
    sigmas = np.asarray(sigmas)
    return RANK_RTOL * float(sigmas[0]) if sigmas.size else 0.0


def numerical_rank(sigmas) -> int:
    sigmas = np.asarray(sigmas)
    if sigmas.size == 0 or sigmas[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sigmas > rank_tolerance(sigmas)))


def jepa_score_exact(enc: Encoder, x) -> tuple[float, np.ndarray]:
    """Exact score at ``x``; also returns the retained singular values (length ``r``)."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("input point has non-finite coordinates")
    sigmas = svd(enc.jacobian(x)).s
    r = numerical_rank(sigmas)
    if r == 0:
        raise DegenerateScoreError("Jacobian has numerical rank 0; the score is -inf")
    kept = sigmas[:r]
    return float(np.sum(np.log(kept))), kept


def jepa_scores(enc: Encoder, xs) -> np.ndarray:
    """Exact scores for a batch ``(m, n)`` of points, one batched SVD."""
    sig = singular_values(enc.jacobian(np.asarray(xs, dtype=np.float64)))
    tol = RANK_RTOL * sig[:, :1]
    keep = sig > tol
    bad = np.flatnonzero(~keep[:, 0] | (sig[:, 0] <= 0.0))
    if bad.size:
        raise DegenerateScoreError(f"Jacobian at sample {bad[0]} has numerical rank 0")
    return np.where(keep, np.log(np.where(keep, sig, 1.0)), 0.0).sum(axis=1)


def _check_top_k(sigmas: np.ndarray) -> None:
    tol = RANK_RTOL * sigmas[0] if sigmas[0] > 0 else 0.0
    bad = np.flatnonzero(sigmas <= tol)
    if bad.size:
        raise DegenerateScoreError(
            f"compressed singular value sigma~_{bad[0] + 1} = {sigmas[bad[0]]:.3e} "
            f"is at or below the rank tolerance {tol:.3e}"
        )


def jepa_score_approx(enc: Encoder, x, cfg: RsvdConfig, seed) -> tuple[float, RsvdResult]:
    res = rsvd(enc.jacobian(np.asarray(x, dtype=np.float64)), cfg, seed)
    _check_top_k(res.top_k_sigmas)
    return float(np.sum(np.log(res.top_k_sigmas))), res


@dataclass(frozen=True)
class ScoreReport:
    """Exact vs. sketched score at one input, with the error split and its bounds.

    ``e_rsvd + e_trunc`` equals ``js_exact - js_approx``. ``bound_trunc`` is
    signed: it is the log of a mean squared residual and goes negative once
    the tail is small.
    """

    js_exact: float
    js_approx: float
    e_rsvd: float
    e_trunc: float
    bound_rsvd: float
    bound_trunc: float
    numerical_rank: int
    sigmas_exact: np.ndarray = field(repr=False)
    sigmas_approx: np.ndarray = field(repr=False)
    k: int = 0
    halko_constant: float = math.nan
    sigma_next: float = math.nan
    projection_residual: float = math.nan
    approx_residual_fro2: float = math.nan
    vacuous_trunc: bool = False
    surrogate_bound: bool = False

    @property
    def total_error(self) -> float:
        return self.js_exact - self.js_approx

    @property
    def holds(self) -> bool:
        return self.e_rsvd <= self.bound_rsvd + 1e-8 and self.e_trunc <= self.bound_trunc + 1e-8


def certify(enc: Encoder, x, cfg: RsvdConfig, seed) -> ScoreReport:
    """Exact and sketched scores at ``x`` plus the certificate terms.

    The rank-``k`` reconstruction is ``Q (Q^T J)_k``. ``sigma_{k+1}`` is
    taken from the exact SVD. When the numerical rank does not exceed ``k``
    the truncation error and its bound are both zero and ``vacuous_trunc``
    is set.
    """
    jac = enc.jacobian(np.asarray(x, dtype=np.float64))
    all_sigmas = svd(jac).s
    r = numerical_rank(all_sigmas)
    if r == 0:
        raise DegenerateScoreError("Jacobian has numerical rank 0; the score is -inf")
    sig = all_sigmas[:r]
    res = rsvd(jac, cfg, seed)
    sig_t = res.top_k_sigmas
    _check_top_k(sig_t)
    k = cfg.k
    if r < k:
        raise DegenerateScoreError(f"numerical rank {r} is below the target rank k = {k}")

    js_exact = float(np.sum(np.log(sig)))
    js_approx = float(np.sum(np.log(sig_t)))
    e_rsvd = float(np.sum(np.log(sig[:k] / sig_t)))
    e_trunc = float(np.sum(np.log(sig[k:])))

    c = halko_constant(cfg, r)
    sigma_next = float(all_sigmas[k]) if k < all_sigmas.size else 0.0
    bound_rsvd = float(np.sum(np.log1p(c * sigma_next / sig_t)))

    approx_residual = jac - res.rank_k_approximation()
    resid_fro2 = frobenius_norm(approx_residual) ** 2
    vacuous = r <= k
    if vacuous:
        bound_trunc = 0.0
    else:
        bound_trunc = 0.5 * (r - k) * math.log(resid_fro2 / (r - k))

    return ScoreReport(
        js_exact=js_exact,
        js_approx=js_approx,
        e_rsvd=e_rsvd,
        e_trunc=e_trunc,
        bound_rsvd=bound_rsvd,
        bound_trunc=bound_trunc,
        numerical_rank=r,
        sigmas_exact=sig,
        sigmas_approx=sig_t,
        k=k,
        halko_constant=c,
        sigma_next=sigma_next,
        projection_residual=spectral_norm(jac - res.q_star @ res.compressed),
        approx_residual_fro2=resid_fro2,
        vacuous_trunc=vacuous,
    )


def surrogate_rsvd_bound(res: RsvdResult, cfg: RsvdConfig, r: int) -> float:
    """Sketching-error bound with ``sigma_{k+1}`` replaced by the ``(k+1)``-th compressed value.

    For use when no exact SVD is available (guidance time). Needs ``p >= 1``.
    """
    if cfg.p < 1:
        raise ValueError("a surrogate sigma_{k+1} needs oversampling p >= 1")
    c = halko_constant(cfg, r)
    return float(np.sum(np.log1p(c * res.svd_of_compressed.s[cfg.k] / res.top_k_sigmas)))


def certify_sweep(enc: Encoder, xs, cfg: RsvdConfig, seed) -> list[ScoreReport]:
    """Certify every point of a batch; sample ``i`` sketches with seed ``(*seed, i)``."""
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    reports = [certify(enc, x, cfg, base + [i]) for i, x in enumerate(np.atleast_2d(xs))]
    failed = [i for i, rep in enumerate(reports) if not rep.holds]
    if failed:
        log.warning("certificate violated at %d of %d samples: %s", len(failed), len(reports), failed[:10])
    return reports


VARIANCE_ELBOW_FRACTION = 0.05


@dataclass(frozen=True)
class SpectrumStats:
    """Per-index statistics of exact singular values over a batch.

    Indices are 1-based in ``k_th``; arrays are indexed from 0.
    ``offset_value`` is the batch mean of ``sum_{i >= k_th} log sigma_i`` and
    ``offset_std`` its spread across samples.
    """

    mean: np.ndarray
    variance: np.ndarray
    cumulative_ratio: np.ndarray
    k_th: int
    offset_value: float
    offset_std: float
    tail_sums: np.ndarray = field(repr=False)
    ragged: bool = False

    def semantic_truncation(self, e_trunc) -> np.ndarray:
        """Input-dependent part of the truncation error once the offset is removed."""
        return np.asarray(e_trunc) - self.offset_value


def variance_elbow(variance) -> int:
    """Smallest 1-based index whose variance is at most 5% of the largest one.

    Falls back to the last index when no index gets that low.
    """
    variance = np.asarray(variance)
    below = np.flatnonzero(variance <= VARIANCE_ELBOW_FRACTION * variance.max())
    return int(below[0]) + 1 if below.size else variance.size


def spectrum_stats(enc: Encoder, xs, k_th: int | None = None) -> SpectrumStats:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[0] < 2:
        raise ValueError(f"spectrum statistics need a batch of at least 2 points, got shape {xs.shape}")
    sig = singular_values(enc.jacobian(xs))
    ranks = np.array([numerical_rank(s) for s in sig])
    r = int(ranks.min())
    if r == 0:
        raise DegenerateScoreError(f"sample {int(np.argmin(ranks))} has numerical rank 0")
    ragged = bool(np.any(ranks != r))
    if ragged:
        log.warning("numerical ranks differ across the batch (%d..%d); truncating to %d", r, ranks.max(), r)
    sig = sig[:, :r]
    # shifting by the first sample keeps constant columns at exactly zero variance
    variance = (sig - sig[0]).var(axis=0)
    total = variance.sum()
    if total > 0:
        cumulative = np.cumsum(variance) / total
        cumulative[-1] = 1.0
    else:
        cumulative = np.ones(r)
    if k_th is None:
        k_th = variance_elbow(variance)
    if not 1 <= k_th <= r:
        raise ValueError(f"k_th = {k_th} outside the common spectrum length 1..{r}")
    tails = np.log(sig[:, k_th - 1 :]).sum(axis=1)
    return SpectrumStats(
        mean=sig.mean(axis=0),
        variance=variance,
        cumulative_ratio=cumulative,
        k_th=k_th,
        offset_value=float(tails.mean()),
        offset_std=float((tails - tails[0]).std()),
        tail_sums=tails,
        ragged=ragged,
    )
