# %% [markdown]
# # Scoring a point and certifying the sketch
#
# The score of an input is the sum of log singular values of the encoder
# Jacobian there. A randomized sketch estimates the top-k part cheaply;
# `certify` splits the gap into a sketching error and a truncation error
# and checks each against its bound.

# %%
import numpy as np

from jepa_minority.encoders import LinearEncoder, TanhMlpEncoder
from jepa_minority.linalg import gaussian_matrix
from jepa_minority.rsvd import RsvdConfig
from jepa_minority.score import certify_sweep, jepa_score_approx, jepa_score_exact, spectrum_stats

enc = TanhMlpEncoder.random(6, 24, 16, seed=0)
x = np.random.default_rng(1).standard_normal(6)

js, sigmas = jepa_score_exact(enc, x)
print("exact score", round(js, 4))
print("singular values", sigmas.round(4))

# %% Sketching the top three directions
cfg = RsvdConfig(k=3, p=2, q=2)
approx, res = jepa_score_approx(enc, x, cfg, seed=7)
print("sketched top-3 score", round(approx, 4), "top-3 sigmas", res.top_k_sigmas.round(4))

# %% Error split and bounds over a batch
xs = np.random.default_rng(2).standard_normal((20, 6))
reports = certify_sweep(enc, xs, cfg, seed=3)
for r in reports[:5]:
    print(f"e_rsvd={r.e_rsvd:.2e} <= {r.bound_rsvd:.2e}   e_trunc={r.e_trunc:+.3f} <= {r.bound_trunc:+.3f}")
print("certificate holds on", sum(r.holds for r in reports), "of", len(reports))

# %% Which singular values move with the input?
stats = spectrum_stats(enc, xs)
print("per-index variance", stats.variance.round(4))
print("cumulative ratio", stats.cumulative_ratio.round(3), "elbow", stats.k_th)

# A linear map has the same Jacobian everywhere, so nothing varies.
flat = spectrum_stats(LinearEncoder(gaussian_matrix(16, 6, seed=0)), xs)
print("linear encoder variance", flat.variance)
