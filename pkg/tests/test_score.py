import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jepa_minority.encoders import Encoder, LinearEncoder, RffEncoder, TanhMlpEncoder
from jepa_minority.linalg import gaussian_matrix
from jepa_minority.rsvd import RsvdConfig, rsvd
from jepa_minority.score import (
    DegenerateScoreError, certify, certify_sweep, jepa_score_approx, jepa_score_exact, jepa_scores,
    numerical_rank, spectrum_stats, surrogate_rsvd_bound, variance_elbow,
)
from oracles import jacobi_singular_values, matrix_with_spectrum


class QuadraticEncoder(Encoder):
    """``f(x) = (x1, x2^2 / 2, 0)``: the Jacobian loses rank where ``x2 = 0``."""

    n, d = 2, 3

    def forward(self, x):
        x = self._check_input(x)
        return np.stack([x[..., 0], 0.5 * x[..., 1] ** 2, 0 * x[..., 0]], axis=-1)

    def jacobian(self, x):
        x = self._check_input(x)
        jac = np.zeros(x.shape[:-1] + (3, 2))
        jac[..., 0, 0] = 1.0
        jac[..., 1, 1] = x[..., 1]
        return jac


def test_identity_and_scaled_identity():
    assert jepa_score_exact(LinearEncoder(np.eye(4)), np.ones(4))[0] == 0.0
    js, kept = jepa_score_exact(LinearEncoder(2 * np.eye(3)), np.zeros(3))
    assert math.isclose(js, 3 * math.log(2), rel_tol=0, abs_tol=1e-12)
    assert abs(js - 2.0794) < 1e-4
    assert kept.shape == (3,)


def test_tanh_score_matches_jacobi_oracle():
    enc = TanhMlpEncoder.random(4, 16, 32, seed=0)
    x = np.random.default_rng(1).standard_normal(4)
    oracle = float(np.sum(np.log(jacobi_singular_values(enc.jacobian(x)))))
    assert abs(jepa_score_exact(enc, x)[0] - oracle) <= 1e-8


def test_rank_deficient_jacobian_drops_null_directions():
    a = matrix_with_spectrum([2.0, 1.0], 5, 3, seed=0)
    js, kept = jepa_score_exact(LinearEncoder(a), np.zeros(3))
    assert kept.size == 2
    assert math.isclose(js, math.log(2.0), abs_tol=1e-12)


def test_degenerate_scores_raise():
    zero = TanhMlpEncoder(np.zeros((4, 2)), np.zeros(4), np.zeros((3, 4)), np.zeros(3))
    with pytest.raises(DegenerateScoreError):
        jepa_score_exact(zero, np.zeros(2))
    with pytest.raises(DegenerateScoreError, match="sample 0"):
        jepa_scores(zero, np.zeros((3, 2)))
    with pytest.raises(ValueError, match="non-finite"):
        jepa_score_exact(LinearEncoder(np.eye(2)), [np.inf, 0.0])


def test_batched_scores_match_pointwise():
    enc = TanhMlpEncoder.random(3, 10, 12, seed=4)
    xs = np.random.default_rng(2).standard_normal((25, 3))
    batch = jepa_scores(enc, xs)
    single = [jepa_score_exact(enc, x)[0] for x in xs]
    assert np.allclose(batch, single, rtol=0, atol=1e-12)
    # rank is recomputed per sample
    quad = QuadraticEncoder()
    mixed = jepa_scores(quad, np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert np.allclose(mixed, [math.log(2.0), 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=6), st.integers(0, 6))
def test_numerical_rank_counts_above_tolerance(vals, zeros):
    s = np.sort(np.array(vals + [0.0] * zeros))[::-1]
    r = numerical_rank(s)
    assert r == int(np.sum(s > 1e-10 * s[0]))
    assert r <= s.size


def test_approx_identity():
    js, res = jepa_score_approx(LinearEncoder(np.eye(5)), np.zeros(5), RsvdConfig(3, 2, 1), seed=0)
    assert abs(js) <= 1e-12
    assert res.q_star.shape == (5, 5)


def test_approx_known_spectrum():
    enc = LinearEncoder(matrix_with_spectrum([4, 3, 2, 1], 8, 4, seed=2))
    js, _ = jepa_score_approx(enc, np.zeros(4), RsvdConfig(2, 2, 2), seed=5)
    assert abs(js - math.log(12)) <= 1e-5


def test_approx_deterministic_and_degenerate_index():
    enc = TanhMlpEncoder.random(3, 8, 10, seed=1)
    a = jepa_score_approx(enc, np.ones(3), RsvdConfig(2, 1, 1), seed=9)[0]
    assert a == jepa_score_approx(enc, np.ones(3), RsvdConfig(2, 1, 1), seed=9)[0]
    rank_one = LinearEncoder(np.outer(np.arange(1, 5), [1.0, 2.0, 0.5]))
    with pytest.raises(DegenerateScoreError, match="sigma~_2"):
        jepa_score_approx(rank_one, np.zeros(3), RsvdConfig(2, 0, 1), seed=0)


def test_certify_identity_encoder():
    rep = certify(LinearEncoder(np.eye(5)), np.zeros(5), RsvdConfig(2, 1, 1), seed=0)
    assert abs(rep.e_rsvd) <= 1e-12
    assert abs(rep.e_trunc) <= 1e-12
    assert rep.bound_rsvd >= 0 and rep.bound_trunc >= -1e-12
    assert rep.holds


def test_certify_constructed_spectrum():
    enc = LinearEncoder(matrix_with_spectrum([10, 5, 1, 0.5, 0.1], 9, 5, seed=3))
    rep = certify(enc, np.zeros(5), RsvdConfig(2, 2, 2), seed=1)
    assert abs(rep.e_trunc - (math.log(1) + math.log(0.5) + math.log(0.1))) <= 1e-10
    assert abs(rep.e_trunc - (-2.9957)) <= 1e-4
    lhs = rep.js_exact - rep.js_approx
    assert abs(lhs - (rep.e_rsvd + rep.e_trunc)) <= 1e-8
    assert abs(rep.js_exact - math.log(10 * 5 * 1 * 0.5 * 0.1)) <= 1e-10
    assert rep.numerical_rank == 5 and rep.sigmas_exact.size == 5 and rep.sigmas_approx.size == 2
    assert rep.holds


def test_certify_fields_are_consistent():
    enc = TanhMlpEncoder.random(6, 16, 20, seed=7)
    x = np.random.default_rng(3).standard_normal(6)
    cfg = RsvdConfig(3, 1, 1)
    rep = certify(enc, x, cfg, seed=4)
    res = rsvd(enc.jacobian(x), cfg, 4)
    assert np.array_equal(rep.sigmas_approx, res.top_k_sigmas)
    s = np.linalg.svd(enc.jacobian(x), compute_uv=False)
    assert math.isclose(rep.sigma_next, s[3], rel_tol=1e-13)
    c = rep.halko_constant
    assert math.isclose(rep.bound_rsvd, float(np.sum(np.log1p(c * s[3] / res.top_k_sigmas))))
    resid = np.linalg.norm(enc.jacobian(x) - res.rank_k_approximation()) ** 2
    assert math.isclose(rep.bound_trunc, 1.5 * math.log(resid / 3))
    assert rep.total_error == rep.js_exact - rep.js_approx


def test_certify_vacuous_and_degenerate_rank():
    enc = LinearEncoder(matrix_with_spectrum([3.0, 2.0], 6, 4, seed=1))
    rep = certify(enc, np.zeros(4), RsvdConfig(2, 0, 1), seed=0)
    assert rep.vacuous_trunc and rep.e_trunc == 0 and rep.bound_trunc == 0
    with pytest.raises(DegenerateScoreError):
        certify(enc, np.zeros(4), RsvdConfig(3, 0, 1), seed=0)
    with pytest.raises(ValueError, match="k - 1"):
        certify(LinearEncoder(np.eye(3)), np.zeros(3), RsvdConfig(1, 1, 1), seed=0)


def test_certify_sweep_bounds_hold():
    enc = TanhMlpEncoder.random(8, 24, 32, seed=11)
    xs = np.random.default_rng(0).standard_normal((30, 8))
    reports = certify_sweep(enc, xs, RsvdConfig(3, 2, 1), seed=5)
    assert len(reports) == 30 and all(r.holds for r in reports)
    # per-sample seed derivation
    again = certify(enc, xs[4], RsvdConfig(3, 2, 1), [5, 4])
    assert again.js_approx == reports[4].js_approx


def test_surrogate_bound():
    enc = TanhMlpEncoder.random(6, 16, 20, seed=2)
    x = np.zeros(6)
    cfg = RsvdConfig(3, 2, 2)
    res = rsvd(enc.jacobian(x), cfg, 0)
    b = surrogate_rsvd_bound(res, cfg, 6)
    assert b > 0 and math.isfinite(b)
    with pytest.raises(ValueError, match="p >= 1"):
        surrogate_rsvd_bound(res, RsvdConfig(3, 0, 2), 6)


def test_linear_encoder_constancy():
    enc = LinearEncoder(gaussian_matrix(10, 4, seed=8))
    xs = np.random.default_rng(0).standard_normal((100, 4)) * 4
    vals = [jepa_score_exact(enc, x)[0] for x in xs]
    assert max(vals) - min(vals) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 2**31 - 1))
def test_scaling_law(c, seed):
    enc = TanhMlpEncoder.random(3, 8, 10, seed)
    scaled = TanhMlpEncoder(enc.w1, enc.b1, c * enc.w2, c * enc.b2)
    x = np.random.default_rng(seed).standard_normal(3)
    js, kept = jepa_score_exact(enc, x)
    assert abs(jepa_score_exact(scaled, x)[0] - (js + kept.size * math.log(c))) <= 1e-9 * max(1, abs(js))


def test_spectrum_stats_linear_encoder_is_constant():
    enc = LinearEncoder(gaussian_matrix(8, 3, seed=1))
    stats = spectrum_stats(enc, np.random.default_rng(0).standard_normal((50, 3)))
    assert np.all(stats.variance == 0)
    assert stats.offset_std == 0
    assert np.all(stats.cumulative_ratio == 1)


def test_spectrum_stats_duplicate_batch():
    enc = TanhMlpEncoder.random(3, 8, 10, seed=2)
    stats = spectrum_stats(enc, np.ones((2, 3)))
    assert np.all(stats.variance == 0)


@pytest.mark.parametrize("n,hidden,d,scale", [(6, 32, 48, 1.0), (4, 16, 32, 0.05)])
def test_spectrum_stats_recomputed_from_raw_spectra(n, hidden, d, scale):
    enc = TanhMlpEncoder.random(n, hidden, d, seed=3)
    # shrinking one input column gives a spectrum whose tail barely moves
    enc = TanhMlpEncoder(enc.w1 * np.r_[np.ones(n - 1), scale], enc.b1, enc.w2, enc.b2)
    xs = np.random.default_rng(4).standard_normal((1000, n))
    stats = spectrum_stats(enc, xs)
    raw = np.array([np.linalg.svd(enc.jacobian(x), compute_uv=False) for x in xs])
    var = raw.var(axis=0)
    assert np.allclose(stats.mean, raw.mean(axis=0))
    assert np.allclose(stats.variance, var)
    assert np.allclose(stats.cumulative_ratio, np.cumsum(var) / var.sum())
    assert np.all(np.diff(stats.cumulative_ratio) >= 0) and stats.cumulative_ratio[-1] == 1.0
    k = stats.k_th
    assert k == variance_elbow(var)
    low = np.flatnonzero(var <= 0.05 * var.max())
    assert k == (low[0] + 1 if low.size else var.size)
    tails = np.log(raw[:, k - 1 :]).sum(axis=1)
    assert math.isclose(stats.offset_value, tails.mean())
    assert math.isclose(stats.offset_std, tails.std())
    assert np.allclose(stats.semantic_truncation(tails), tails - tails.mean())


def test_spectrum_stats_rff_is_flat():
    stats = spectrum_stats(RffEncoder.random(4, 32, seed=0), np.random.default_rng(1).standard_normal((1000, 4)))
    # constant spectrum: what remains is rounding noise
    assert np.all(stats.variance <= 1e-20)
    assert np.all(np.diff(stats.cumulative_ratio) >= 0) and stats.cumulative_ratio[-1] == 1.0
    assert stats.offset_std <= 1e-10


def test_spectrum_stats_ragged_and_errors(caplog):
    quad = QuadraticEncoder()
    xs = np.array([[0.0, 1.0], [1.0, 2.0], [2.0, 0.0]])
    stats = spectrum_stats(quad, xs)
    assert stats.ragged and stats.mean.size == 1
    assert "truncating" in caplog.text
    with pytest.raises(ValueError, match="at least 2"):
        spectrum_stats(quad, xs[:1])
    with pytest.raises(ValueError, match="k_th"):
        spectrum_stats(quad, xs, k_th=2)


def test_variance_elbow():
    assert variance_elbow([1.0, 0.5, 0.04, 0.01]) == 3
    assert variance_elbow([0.0, 0.0]) == 1
    assert variance_elbow([1.0, 0.9]) == 2
