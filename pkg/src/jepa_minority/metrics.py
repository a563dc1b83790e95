"""Minority selection and kNN-based sample metrics.

Rankings order samples from rarest to most typical. Ties are broken by
input index (stable sort), so a constant score selects the first ``m``
samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .diffusion import GaussianMixture
from .encoders import Encoder
from .score import jepa_scores


def _points(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError(f"{name} must be a non-empty (m, n) array, got shape {a.shape}")
    return a


def avg_knn_distance(batch, reference, k: int, exclude_self: bool = True) -> np.ndarray:
    """Mean Euclidean distance from each query to its ``k`` nearest reference points.

    With ``exclude_self`` a reference point at distance exactly zero from the
    query is treated as the query itself and skipped.
    """
    batch, reference = _points(batch, "batch"), _points(reference, "reference")
    if k >= reference.shape[0]:
        raise ValueError(f"k = {k} must be smaller than the reference size {reference.shape[0]}")
    dist = cdist(batch, reference)
    if exclude_self:
        dist = np.where(dist == 0.0, np.inf, dist)
    nearest = np.sort(dist, axis=1)[:, :k]
    if not np.all(np.isfinite(nearest)):
        raise ValueError(f"fewer than k = {k} distinct reference points for some query")
    # sequential sum keeps results independent of k-dependent pairwise blocking
    return nearest.cumsum(axis=1)[:, -1] / k


def knn_radii(points, k: int) -> np.ndarray:
    """Distance from each point to its k-th nearest other point in the same set."""
    points = _points(points, "points")
    if k >= points.shape[0]:
        raise ValueError(f"k = {k} must be smaller than the set size {points.shape[0]}")
    dist = cdist(points, points)
    return np.sort(dist, axis=1)[:, k]


def density_coverage(generated, reference, k: int) -> tuple[float, float]:
    """Density and coverage of ``generated`` against ``reference`` (Naeem et al. 2020).

    Reference point ``i`` owns the open ball of radius equal to its k-NN
    distance within the reference set. Density counts, per generated point,
    how many balls contain it (normalized by ``k M``); coverage is the
    fraction of balls containing at least one generated point.
    """
    generated, reference = _points(generated, "generated"), _points(reference, "reference")
    radii = knn_radii(reference, k)
    inside = cdist(reference, generated) < radii[:, None]
    density = inside.sum() / (k * generated.shape[0])
    coverage = inside.any(axis=1).mean()
    return float(density), float(coverage)


@dataclass(frozen=True)
class MinoritySetSpec:
    kind: str  # "generator-centric" | "world-centric"
    threshold_mode: str  # "epsilon-cutoff" | "bottom-fraction"
    value: float

    def __post_init__(self):
        if self.kind not in ("generator-centric", "world-centric"):
            raise ValueError(f"unknown minority kind {self.kind!r}")
        if self.threshold_mode == "bottom-fraction":
            if not 0.0 < self.value <= 1.0:
                raise ValueError(f"bottom fraction must lie in (0, 1], got {self.value}")
        elif self.threshold_mode == "epsilon-cutoff":
            if not math.isfinite(self.value):
                raise ValueError("epsilon must be finite")
        else:
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")


def rarity_key(batch, spec: MinoritySetSpec, gmm: GaussianMixture | None = None,
               enc: Encoder | None = None, reference=None, k: int = 5) -> np.ndarray:
    """Per-sample key where smaller means rarer.

    generator-centric: mixture density ``p(x)``, or ``-AvgkNN`` against
    ``reference`` (the batch itself when omitted) if no mixture is given.
    world-centric: exact JEPA-SCORE.
    """
    batch = _points(batch, "batch")
    if spec.kind == "world-centric":
        if enc is None:
            raise ValueError("world-centric selection needs an encoder")
        return jepa_scores(enc, batch)
    if gmm is not None:
        return gmm.density(batch)
    return -avg_knn_distance(batch, batch if reference is None else reference, k)


def minority_select(batch, spec: MinoritySetSpec, gmm: GaussianMixture | None = None,
                    enc: Encoder | None = None, reference=None, k: int = 5) -> np.ndarray:
    """Sorted indices of the minority subset of ``batch``."""
    key = rarity_key(batch, spec, gmm=gmm, enc=enc, reference=reference, k=k)
    if spec.threshold_mode == "epsilon-cutoff":
        return np.flatnonzero(key < spec.value)
    m = math.ceil(spec.value * key.size - 1e-9)
    order = np.argsort(key, kind="stable")
    return np.sort(order[:m])


def jaccard(a, b) -> float:
    a, b = set(np.asarray(a).tolist()), set(np.asarray(b).tolist())
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)
