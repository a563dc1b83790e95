# %% [markdown]
# # Guiding a sampler toward low-score regions
#
# Samples come from an exact DDPM reverse process over a two-mode mixture.
# Guidance nudges late reverse steps along the gradient of the sketched
# score at the denoised estimate, which lowers the average score while the
# deferred start (tau = 0.8) keeps the mode split established early on.

# %%
import numpy as np

from jepa_minority.diffusion import GaussianMixture, GuidanceConfig, VarianceSchedule, sample_batch
from jepa_minority.encoders import TanhMlpEncoder
from jepa_minority.experiment import occupancy
from jepa_minority.rsvd import RsvdConfig
from jepa_minority.score import jepa_scores

gmm = GaussianMixture.isotropic([0.7, 0.3], [(-3.0, 0.0), (3.0, 0.0)], 0.5)
enc = TanhMlpEncoder.random(2, 16, 32, seed=0)
sched = VarianceSchedule.cosine(250)

# %% Sweep the step size
for eta in (0.0, 0.5, 1.0, 2.0):
    cfg = GuidanceConfig(eta, RsvdConfig(2, 0, 2), seed=5, tau=0.8, n_every=3)
    pts = sample_batch(gmm, sched, 1000, seed=5, enc=enc, cfg=cfg)
    js = jepa_scores(enc, pts)
    se = js.std(ddof=1) / np.sqrt(js.size)
    print(f"eta={eta:<4} mean score {js.mean():.4f} +- {se:.4f}  occupancy {occupancy(gmm, pts).round(3)}")

# %% [markdown]
# The same sweep, with CSVs, SVG scatter plots and a manifest, is one command:
#
#     python -m jepa_minority sweep --seed 5 --out runs/demo
