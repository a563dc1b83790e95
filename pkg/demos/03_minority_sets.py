# %% [markdown]
# # Rare to the generator vs rare to the encoder
#
# A generator-centric minority set ranks samples by the mixture density; a
# world-centric one ranks by the encoder score. When the rare mixture mode
# sits where the encoder is most sensitive, the two sets barely overlap.

# %%
import numpy as np

from jepa_minority.diffusion import GaussianMixture, VarianceSchedule, sample_batch
from jepa_minority.encoders import TanhMlpEncoder
from jepa_minority.metrics import MinoritySetSpec, avg_knn_distance, density_coverage, jaccard, minority_select

rare, common = np.array([3.0, 0.0]), np.array([-3.0, 0.0])
gmm = GaussianMixture.isotropic([0.9, 0.1], [common, rare], 0.5)

# hidden units centred on the rare mode: active there, saturated elsewhere
base = TanhMlpEncoder.random(2, 24, 8, seed=4)
w1 = 1.5 * base.w1
enc = TanhMlpEncoder(w1, -w1 @ rare, base.w2, base.b2)

batch = sample_batch(gmm, VarianceSchedule.cosine(250), 500, seed=1)

# %% Two bottom-10% selections
gen = minority_select(batch, MinoritySetSpec("generator-centric", "bottom-fraction", 0.1), gmm=gmm)
world = minority_select(batch, MinoritySetSpec("world-centric", "bottom-fraction", 0.1), enc=enc)
print("generator-centric picks near rare mode:", np.mean(batch[gen, 0] > 0).round(2))
print("world-centric picks near rare mode:   ", np.mean(batch[world, 0] > 0).round(2))
print("Jaccard overlap", round(jaccard(gen, world), 3))

# %% kNN metrics against a fresh reference draw
reference = sample_batch(gmm, VarianceSchedule.cosine(250), 500, seed=2)
density, coverage = density_coverage(batch, reference, k=5)
print(f"density {density:.3f} coverage {coverage:.3f}")
print("mean AvgkNN of each set:", avg_knn_distance(batch[gen], reference, 5).mean().round(3),
      avg_knn_distance(batch[world], reference, 5).mean().round(3))
