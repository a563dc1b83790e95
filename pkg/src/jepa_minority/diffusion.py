"""DDPM over Gaussian-mixture data, with JEPA guidance.

The noise predictor is not learned: for mixture data the diffused marginal
at step ``t`` is again a mixture (means ``sqrt(abar_t) mu_j``, covariances
``abar_t Sigma_j + (1 - abar_t) I``), and the optimal predictor is
``eps(x_t, t) = -sqrt(1 - abar_t) * grad log p_t(x_t)``.

Timesteps run ``t = T, ..., 1``; ``abar_0`` is taken to be 1.

Randomness: chain ``c`` of a run seeded with ``seed`` draws its noise from
``default_rng([seed, c, 0])`` (initial state first, then one vector per
step ``t > 1``) and its sketch matrices from ``default_rng([seed, c, 1])``.
A chain's trajectory therefore does not depend on how many other chains
run alongside it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .encoders import Encoder
from .rsvd import RsvdConfig, range_finder_stack
from .score import RANK_RTOL

log = logging.getLogger(__name__)


class SamplerError(FloatingPointError):
    pass


@dataclass(frozen=True)
class VarianceSchedule:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.array(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ValueError("beta must be a non-empty vector")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("every beta_t must lie in (0, 1)")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        abar = np.cumprod(1.0 - beta)
        abar.setflags(write=False)
        object.__setattr__(self, "_alpha_bar", abar)

    @classmethod
    def linear(cls, T: int = 250, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "VarianceSchedule":
        return cls(np.linspace(beta_start, beta_end, T))

    @classmethod
    def cosine(cls, T: int = 250, offset: float = 0.008, max_beta: float = 0.999) -> "VarianceSchedule":
        """``abar(t) = cos^2(((t/T + offset) / (1 + offset)) * pi/2)``, normalized to ``abar(0) = 1``."""
        steps = np.arange(T + 1) / T
        f = np.cos((steps + offset) / (1.0 + offset) * math.pi / 2) ** 2
        return cls(np.minimum(1.0 - f[1:] / f[:-1], max_beta))

    @property
    def T(self) -> int:
        return self.beta.size

    @property
    def alpha_bar(self) -> np.ndarray:
        return self._alpha_bar

    def beta_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.beta[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self._alpha_bar[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 1..{self.T}")


class GaussianMixture:
    """Finite Gaussian mixture with full covariances."""

    def __init__(self, weights, means, covariances):
        w = np.array(weights, dtype=np.float64)
        mu = np.atleast_2d(np.array(means, dtype=np.float64))
        cov = np.array(covariances, dtype=np.float64)
        if w.ndim != 1 or mu.shape[0] != w.size or cov.shape != (w.size, mu.shape[1], mu.shape[1]):
            raise ValueError(
                f"shape mismatch: weights {w.shape}, means {mu.shape}, covariances {cov.shape}"
            )
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be non-negative and sum to 1, got sum {w.sum()!r}")
        if not np.allclose(cov, np.swapaxes(cov, -1, -2), rtol=0, atol=1e-12):
            raise ValueError("covariances must be symmetric")
        evals, evecs = np.linalg.eigh(cov)
        if np.any(evals <= 0):
            j = int(np.argwhere(evals <= 0)[0][0])
            raise ValueError(f"covariance {j} is not positive definite")
        self.weights, self.means, self.covariances = w, mu, cov
        self._evals, self._evecs = evals, evecs
        for v in (w, mu, cov, evals, evecs):
            v.setflags(write=False)

    @classmethod
    def isotropic(cls, weights, means, scales) -> "GaussianMixture":
        means = np.atleast_2d(np.array(means, dtype=np.float64))
        n = means.shape[1]
        scales = np.broadcast_to(np.asarray(scales, dtype=np.float64), (means.shape[0],))
        return cls(weights, means, scales[:, None, None] ** 2 * np.eye(n))

    @property
    def n(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def _component_logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        diff = x[..., None, :] - self.means  # (..., K, n)
        proj = np.einsum("...kn,knm->...km", diff, self._evecs)
        maha = np.sum(proj**2 / self._evals, axis=-1)
        logdet = np.sum(np.log(self._evals), axis=-1)
        return -0.5 * (maha + logdet + self.n * math.log(2 * math.pi))

    def log_density(self, x) -> np.ndarray:
        return logsumexp(self._component_logpdf(x) + np.log(self.weights), axis=-1)

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def responsibilities(self, x) -> np.ndarray:
        lp = self._component_logpdf(x) + np.log(self.weights)
        return np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))

    def diffused(self, alpha_bar: float) -> "GaussianMixture":
        """Law of ``sqrt(abar) x0 + sqrt(1 - abar) z`` for ``x0`` from this mixture."""
        return GaussianMixture(
            self.weights,
            math.sqrt(alpha_bar) * self.means,
            alpha_bar * self.covariances + (1.0 - alpha_bar) * np.eye(self.n),
        )

    def sample(self, m: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        comp = rng.choice(self.n_components, size=m, p=self.weights)
        chol = np.linalg.cholesky(self.covariances)
        z = rng.standard_normal((m, self.n))
        return self.means[comp] + np.einsum("mij,mj->mi", chol[comp], z)


def gmm_score(gmm: GaussianMixture, x) -> np.ndarray:
    """``grad log p(x)`` for the mixture, stabilized with log-sum-exp.

    Accepts a point ``(n,)`` or a batch ``(..., n)``.
    """
    x = np.asarray(x, dtype=np.float64)
    resp = gmm.responsibilities(x)  # (..., K)
    diff = x[..., None, :] - gmm.means
    prec = np.linalg.inv(gmm.covariances)
    comp_scores = -np.einsum("knm,...km->...kn", prec, diff)
    return np.einsum("...k,...kn->...n", resp, comp_scores)


def epsilon_analytic(gmm: GaussianMixture, sched: VarianceSchedule, x_t, t: int) -> np.ndarray:
    """Optimal noise prediction at step ``t``.

    Works in each component's covariance eigenbasis, where the diffused
    covariance is diagonal: ``abar * lambda + 1 - abar``.
    """
    abar = sched.alpha_bar_at(t)
    x = np.asarray(x_t, dtype=np.float64)
    lam = abar * gmm._evals + (1.0 - abar)  # (K, n)
    diff = x[..., None, :] - math.sqrt(abar) * gmm.means
    proj = np.einsum("...kn,knm->...km", diff, gmm._evecs)
    logpdf = -0.5 * (
        np.sum(proj**2 / lam, axis=-1) + np.sum(np.log(lam), axis=-1) + gmm.n * math.log(2 * math.pi)
    )
    lp = logpdf + np.log(gmm.weights)
    resp = np.exp(lp - logsumexp(lp, axis=-1, keepdims=True))
    whitened = np.einsum("knm,...km->...kn", gmm._evecs, proj / lam)
    return math.sqrt(1.0 - abar) * np.einsum("...k,...kn->...n", resp, whitened)


def denoised_estimate(sched: VarianceSchedule, x_t, t: int, eps) -> np.ndarray:
    """Tweedie estimate ``(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)``."""
    abar = sched.alpha_bar_at(t)
    return (np.asarray(x_t) - math.sqrt(1.0 - abar) * np.asarray(eps)) / math.sqrt(abar)


def forward_marginal_sample(sched: VarianceSchedule, x0, t: int, seed) -> np.ndarray:
    """Draw from ``q(x_t | x_0) = N(sqrt(abar_t) x_0, (1 - abar_t) I)``; ``t = 0`` returns ``x_0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if t == 0:
        return x0.copy()
    abar = sched.alpha_bar_at(t)
    z = np.random.default_rng(seed).standard_normal(x0.shape)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * z


def forward_transitions(sched: VarianceSchedule, x0, t: int, seed) -> np.ndarray:
    """Apply the one-step kernels ``q(x_s | x_{s-1})`` for ``s = 1..t``."""
    x = np.array(x0, dtype=np.float64)
    rng = np.random.default_rng(seed)
    for s in range(1, t + 1):
        b = sched.beta_at(s)
        x = math.sqrt(1.0 - b) * x + math.sqrt(b) * rng.standard_normal(x.shape)
    return x


@dataclass(frozen=True)
class GuidanceConfig:
    eta: float
    rsvd: RsvdConfig
    seed: int
    schedule_kind: str = "variance-scaled"
    tau: float = 1.0
    n_every: int = 1

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.schedule_kind not in ("variance-scaled", "constant"):
            raise ValueError(f"schedule_kind must be 'variance-scaled' or 'constant', got {self.schedule_kind!r}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.n_every < 1:
            raise ValueError(f"n_every must be >= 1, got {self.n_every}")

    def active(self, t: int, T: int) -> bool:
        return t < self.tau * T and t % self.n_every == 0

    def step_size(self, sched: VarianceSchedule, t: int) -> float:
        if self.schedule_kind == "constant":
            return self.eta
        return self.eta * sched.beta_at(t)


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    x0_hat: np.ndarray | None = None
    guidance_norm: float | None = None
    js_star: float | None = None


@dataclass
class SampleTrace:
    x0: np.ndarray
    steps: list[StepRecord] = field(default_factory=list)

    def guided_steps(self) -> list[int]:
        return [s.t for s in self.steps if s.guidance_norm is not None]


@dataclass
class _GuidanceOutput:
    direction: np.ndarray  # -grad JS*, (B, n)
    x0_hat: np.ndarray
    js_star: np.ndarray
    degenerate: np.ndarray


def _js_star_stack(enc: Encoder, sched, gmm, points, t, q_t, k) -> tuple[np.ndarray, np.ndarray]:
    """``sum log sigma~_i(Q*^T J_f(x0_hat(points)))`` with ``Q*`` held fixed.

    ``points`` is ``(B, P, n)``; ``q_t`` is ``Q*^T`` with shape ``(B, l, d)``.
    Returns the scores ``(B, P)`` and a degeneracy mask of the same shape.
    """
    eps = epsilon_analytic(gmm, sched, points, t)
    x0h = denoised_estimate(sched, points, t, eps)
    comp = q_t[:, None] @ enc.jacobian(x0h)
    sig = np.linalg.svd(comp, compute_uv=False)[..., :k]
    degenerate = np.any(sig <= RANK_RTOL * sig[..., :1], axis=-1) | (sig[..., 0] <= 0)
    js = np.sum(np.log(np.where(sig > 0, sig, 1.0)), axis=-1)
    return js, degenerate


def _guidance_stack(enc: Encoder, sched, gmm, x_t, t, cfg: GuidanceConfig, omega) -> _GuidanceOutput:
    """Frozen-projection guidance direction for a batch of states ``x_t`` (B, n)."""
    k = cfg.rsvd.k
    eps = epsilon_analytic(gmm, sched, x_t, t)
    x0h = denoised_estimate(sched, x_t, t, eps)
    jac = enc.jacobian(x0h)
    q_star = range_finder_stack(jac, omega, cfg.rsvd.q)
    q_t = np.swapaxes(q_star, -1, -2)
    h = 1e-4 * (1.0 + np.linalg.norm(x_t, axis=-1))
    n = x_t.shape[-1]
    offsets = h[:, None, None] * np.eye(n)
    points = np.concatenate([x_t[:, None] + offsets, x_t[:, None] - offsets, x_t[:, None]], axis=1)
    js, degenerate = _js_star_stack(enc, sched, gmm, points, t, q_t, k)
    grad = (js[:, :n] - js[:, n : 2 * n]) / (2.0 * h[:, None])
    bad = degenerate.any(axis=1)
    if bad.any():
        log.warning("degenerate compressed spectrum at t=%d for %d chain(s); skipping their guidance", t, bad.sum())
        grad[bad] = 0.0
    return _GuidanceOutput(-grad, x0h, js[:, -1], bad)


def frozen_guidance_gradient(
    enc: Encoder,
    sched: VarianceSchedule,
    gmm: GaussianMixture,
    x_t,
    t: int,
    cfg: GuidanceConfig,
    omega=None,
) -> np.ndarray:
    """Guidance direction ``-grad_{x_t} JS*(x0_hat(x_t))`` at a single state.

    ``Q*`` comes from a randomized range finder on ``J_f(x0_hat)`` and is
    then frozen; the gradient is a central difference in ``x_t`` with step
    ``1e-4 * (1 + ||x_t||)``. ``omega`` (n x (k+p)) defaults to a draw from
    ``default_rng([cfg.seed, t])``. A degenerate compressed spectrum
    yields the zero vector.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    cfg.rsvd.check_shape(enc.d, enc.n)
    if omega is None:
        omega = np.random.default_rng([cfg.seed, t]).standard_normal((enc.n, cfg.rsvd.sketch_size))
    out = _guidance_stack(enc, sched, gmm, x_t[None], t, cfg, np.asarray(omega)[None])
    return out.direction[0]


def js_star(enc: Encoder, sched, gmm, x_t, t: int, q_star, k: int) -> float:
    """Frozen-projection score ``sum_{i<=k} log sigma~_i`` at a single state."""
    q_t = np.asarray(q_star).T[None]
    points = np.asarray(x_t, dtype=np.float64)[None, None]
    js, _ = _js_star_stack(enc, sched, gmm, points, t, q_t, k)
    return float(js[0, 0])


class _ChainNoise:
    """Per-chain standard normal streams, drawn in blocks."""

    def __init__(self, seed, chains, shape, stream, block):
        self.rngs = [np.random.default_rng([seed, c, stream]) for c in chains]
        self.shape = shape
        self.block = block
        self._buf = None
        self._pos = block

    def next(self) -> np.ndarray:
        if self._pos == self.block:
            self._buf = np.stack([g.standard_normal((self.block,) + self.shape) for g in self.rngs])
            self._pos = 0
        out = self._buf[:, self._pos]
        self._pos += 1
        return out


def _run_chains(
    gmm: GaussianMixture,
    sched: VarianceSchedule,
    seed,
    chains,
    enc: Encoder | None = None,
    cfg: GuidanceConfig | None = None,
    record: bool = False,
) -> tuple[np.ndarray, list[StepRecord]]:
    n, T = gmm.n, sched.T
    noise = _ChainNoise(seed, chains, (n,), stream=0, block=min(T, 25))
    guided = enc is not None and cfg is not None
    if guided:
        cfg.rsvd.check_shape(enc.d, enc.n)
        sketches = _ChainNoise(seed, chains, (n, cfg.rsvd.sketch_size), stream=1, block=1)
    x = noise.next().copy()
    records = []
    for t in range(T, 0, -1):
        b = sched.beta_at(t)
        abar = sched.alpha_bar_at(t)
        eps = epsilon_analytic(gmm, sched, x, t)
        mean = (x - b / math.sqrt(1.0 - abar) * eps) / math.sqrt(1.0 - b)
        x_next = mean + math.sqrt(b) * noise.next() if t > 1 else mean
        rec = StepRecord(t, x[0].copy()) if record else None
        if guided and cfg.active(t, T):
            out = _guidance_stack(enc, sched, gmm, x, t, cfg, sketches.next())
            x_next = x_next + cfg.step_size(sched, t) * out.direction
            if record:
                rec.x0_hat = out.x0_hat[0].copy()
                rec.guidance_norm = float(np.linalg.norm(out.direction[0]))
                rec.js_star = float(out.js_star[0])
        if not np.all(np.isfinite(x_next)):
            raise SamplerError(f"non-finite sampler state at t={t}")
        x = x_next
        if record:
            records.append(rec)
    return x, records


def ddpm_sample(gmm: GaussianMixture, sched: VarianceSchedule, seed, chain: int = 0, record: bool = True) -> SampleTrace:
    """Ancestral sampling ``t = T..1`` with fixed variance ``beta_t I``; no noise at ``t = 1``."""
    x, recs = _run_chains(gmm, sched, seed, [chain], record=record)
    return SampleTrace(x[0], recs)


def guided_sample(
    enc: Encoder,
    gmm: GaussianMixture,
    sched: VarianceSchedule,
    cfg: GuidanceConfig,
    chain: int = 0,
    record: bool = True,
) -> SampleTrace:
    """JEPA-guided ancestral sampling.

    Identical to :func:`ddpm_sample` with ``seed = cfg.seed`` except at steps
    with ``t < tau T`` and ``t mod N == 0``, where after the stochastic step
    ``x_{t-1} += eta_t * (-grad_{x_t} JS*)``.
    """
    x, recs = _run_chains(gmm, sched, cfg.seed, [chain], enc=enc, cfg=cfg, record=record)
    return SampleTrace(x[0], recs)


def sample_batch(
    gmm: GaussianMixture,
    sched: VarianceSchedule,
    n_samples: int,
    seed,
    enc: Encoder | None = None,
    cfg: GuidanceConfig | None = None,
    chunk: int = 4096,
) -> np.ndarray:
    """Final samples of chains ``0..n_samples-1``, guided when ``enc`` and ``cfg`` are given.

    Chains are vectorized in chunks; chain ``c`` consumes the same noise
    stream as ``ddpm_sample(..., chain=c)``.
    """
    if cfg is not None and seed != cfg.seed:
        raise ValueError("guided batches take their seed from the guidance config")
    out = []
    for start in range(0, n_samples, chunk):
        chains = list(range(start, min(start + chunk, n_samples)))
        x, _ = _run_chains(gmm, sched, seed, chains, enc=enc, cfg=cfg)
        out.append(x)
    return np.concatenate(out, axis=0)
