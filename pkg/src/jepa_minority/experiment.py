"""Experiment pipelines behind the command line.

Each command writes its tables into ``run.output`` together with the
config it ran (``config.ini``) and ``manifest.json``. The manifest holds
the config hash, seed, library version and a SHA-256 for every file; its
``timestamp`` line is the only part that changes between identical runs.

Random streams are derived from ``run.seed``: sampler chains use
``[seed, chain, 0|1]`` (see :mod:`jepa_minority.diffusion`), reference
draws ``[seed, 2]``, evaluation points ``[seed, 3]`` and certify sketches
``[seed, 4, i]``.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .diffusion import GaussianMixture, guided_sample, sample_batch
from .encoders import Encoder
from .metrics import avg_knn_distance, density_coverage
from .score import certify_sweep, jepa_score_approx, jepa_scores, spectrum_stats
from .tables import (
    REPORT_COLUMNS, SPECTRUM_COLUMNS, read_points, report_rows, sample_header, sample_rows,
    spectrum_comments, spectrum_rows, trace_header, trace_rows, write_table,
)

log = logging.getLogger(__name__)

COMMANDS = ("sample", "guided-sample", "score", "certify", "spectrum", "metrics", "sweep")
SUMMARY_COLUMNS = ("eta", "samples", "mean_js", "se_js", "density", "coverage", "mean_avg_knn")

REFERENCE_STREAM = 2
POINTS_STREAM = 3
CERTIFY_STREAM = 4


@dataclass
class RunResult:
    status: int
    output: Path
    files: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


@dataclass
class _Context:
    cfg: ExperimentConfig
    out: Path
    gmm: GaussianMixture
    enc: Encoder
    digest: str
    files: list[Path] = field(default_factory=list)

    @property
    def seed(self) -> int:
        return self.cfg.run.seed

    def table(self, name, header, rows, comments=()) -> Path:
        path = self.out / name
        write_table(path, header, rows, self.digest, comments)
        self.files.append(path)
        return path


def occupancy(gmm: GaussianMixture, points) -> np.ndarray:
    """Fraction of points whose most responsible component is ``j``."""
    labels = np.argmax(gmm.responsibilities(points), axis=1)
    return np.bincount(labels, minlength=gmm.n_components) / len(labels)


def reference_set(cfg: ExperimentConfig, gmm: GaussianMixture, enc: Encoder) -> np.ndarray:
    """i.i.d. mixture draw, or its lowest-JS fraction when ``run.reference = bottom-js``."""
    r = cfg.run
    ref = gmm.sample(r.reference_samples, [r.seed, REFERENCE_STREAM])
    if r.reference == "bottom-js":
        m = math.ceil(r.reference_fraction * len(ref))
        if m <= r.knn_k:
            raise ConfigError("run.reference_fraction", f"bottom-js reference keeps {m} points, need more than run.knn_k")
        ref = ref[np.sort(np.argsort(jepa_scores(enc, ref), kind="stable")[:m])]
    return ref


def _check_against_encoder(cfg: ExperimentConfig, gmm: GaussianMixture, enc: Encoder) -> None:
    if enc.n != gmm.n:
        raise ConfigError("encoder.n", f"encoder input dimension {enc.n} differs from mixture dimension {gmm.n}")
    lim = min(enc.n, enc.d)
    if cfg.guidance.k + cfg.guidance.p > lim:
        raise ConfigError("guidance.k", f"k + p = {cfg.guidance.k + cfg.guidance.p} exceeds min(n, d) = {lim}")


def _points(ctx: _Context, inputs, count: int) -> np.ndarray:
    if inputs is not None:
        pts = read_points(inputs)
        if pts.ndim != 2 or pts.shape[1] != ctx.gmm.n:
            raise ValueError(f"{inputs}: expected {ctx.gmm.n} coordinates per point, got shape {pts.shape}")
        return pts
    return ctx.gmm.sample(count, [ctx.seed, POINTS_STREAM])


def _scatter(ctx: _Context, name: str, points, js, title: str) -> None:
    if not ctx.cfg.run.plot or points.shape[1] != 2:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "jepa-minority"
    fig, ax = plt.subplots(figsize=(5, 4))
    sc = ax.scatter(points[:, 0], points[:, 1], c=js, s=4, cmap="viridis")
    fig.colorbar(sc, ax=ax, label="JEPA-SCORE")
    ax.set_title(title)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    path = ctx.out / name
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    ctx.files.append(path)


def _sample_metrics(ctx: _Context, points, js, reference) -> dict:
    wanted = ctx.cfg.run.metrics
    row = {"samples": len(points)}
    if "js" in wanted:
        row["mean_js"] = float(js.mean())
        row["se_js"] = float(js.std(ddof=1) / math.sqrt(len(js))) if len(js) > 1 else math.nan
    if reference is not None and "density_coverage" in wanted:
        row["density"], row["coverage"] = density_coverage(points, reference, ctx.cfg.run.knn_k)
    if reference is not None and "avg_knn" in wanted:
        row["mean_avg_knn"] = float(avg_knn_distance(points, reference, ctx.cfg.run.knn_k).mean())
    if "occupancy" in wanted:
        for j, v in enumerate(occupancy(ctx.gmm, points)):
            row[f"occupancy_{j + 1}"] = float(v)
    return row


def _metric_columns(ctx: _Context) -> list[str]:
    wanted = ctx.cfg.run.metrics
    keep = {"samples"}
    if "js" in wanted:
        keep |= {"mean_js", "se_js"}
    if "density_coverage" in wanted:
        keep |= {"density", "coverage"}
    if "avg_knn" in wanted:
        keep.add("mean_avg_knn")
    cols = [c for c in SUMMARY_COLUMNS[1:] if c in keep]
    if "occupancy" in wanted:
        cols += [f"occupancy_{j + 1}" for j in range(ctx.gmm.n_components)]
    return cols


def _write_samples(ctx: _Context, name: str, points, js) -> None:
    ctx.table(name, sample_header(ctx.gmm.n, ["js"]), sample_rows(points, js))


def _cmd_sample(ctx: _Context, inputs, trace) -> dict:
    r = ctx.cfg.run
    pts = sample_batch(ctx.gmm, ctx.cfg.schedule.build(), r.samples, r.seed)
    js = jepa_scores(ctx.enc, pts)
    _write_samples(ctx, "samples.csv", pts, js)
    _scatter(ctx, "samples.svg", pts, js, "unguided samples")
    return {"mean_js": float(js.mean())}


def _cmd_guided(ctx: _Context, inputs, trace) -> dict:
    r = ctx.cfg.run
    sched = ctx.cfg.schedule.build()
    gcfg = ctx.cfg.guidance_config()
    pts = sample_batch(ctx.gmm, sched, r.samples, r.seed, enc=ctx.enc, cfg=gcfg)
    js = jepa_scores(ctx.enc, pts)
    _write_samples(ctx, "samples.csv", pts, js)
    if trace:
        tr = guided_sample(ctx.enc, ctx.gmm, sched, gcfg, chain=0)
        ctx.table("trace.csv", trace_header(ctx.gmm.n), trace_rows(tr))
    _scatter(ctx, "samples.svg", pts, js, f"guided samples, eta={gcfg.eta:g}")
    return {"mean_js": float(js.mean())}


def _cmd_score(ctx: _Context, inputs, trace) -> dict:
    pts = _points(ctx, inputs, ctx.cfg.run.samples)
    js = jepa_scores(ctx.enc, pts)
    cfg = ctx.cfg.rsvd_config()
    approx = [jepa_score_approx(ctx.enc, x, cfg, [ctx.seed, CERTIFY_STREAM, i])[0] for i, x in enumerate(pts)]
    ctx.table("scores.csv", sample_header(ctx.gmm.n, ["js_exact", "js_approx"]), sample_rows(pts, js, approx))
    _scatter(ctx, "scores.svg", pts, js, "JEPA-SCORE")
    return {"mean_js": float(js.mean())}


def _cmd_certify(ctx: _Context, inputs, trace) -> dict:
    pts = _points(ctx, inputs, ctx.cfg.run.certify_points)
    reports = certify_sweep(ctx.enc, pts, ctx.cfg.rsvd_config(), [ctx.seed, CERTIFY_STREAM])
    held = sum(r.holds for r in reports)
    med = {
        name: float(np.median([getattr(r, name) for r in reports]))
        for name in ("e_rsvd", "bound_rsvd", "e_trunc", "bound_trunc")
    }
    comments = [f"holds={held}/{len(reports)}"] + [f"median_{k}={v:.17g}" for k, v in med.items()]
    ctx.table("certify.csv", REPORT_COLUMNS, report_rows(reports), comments)
    return {"holds": held, "trials": len(reports), **{f"median_{k}": v for k, v in med.items()}}


def _cmd_spectrum(ctx: _Context, inputs, trace) -> dict:
    pts = _points(ctx, inputs, ctx.cfg.run.samples)
    stats = spectrum_stats(ctx.enc, pts)
    ctx.table("spectrum.csv", SPECTRUM_COLUMNS, spectrum_rows(stats), spectrum_comments(stats))
    return {"k_th": stats.k_th, "offset_value": stats.offset_value, "offset_std": stats.offset_std}


def _cmd_metrics(ctx: _Context, inputs, trace) -> dict:
    r = ctx.cfg.run
    if inputs is not None:
        pts = _points(ctx, inputs, r.samples)
    else:
        pts = sample_batch(ctx.gmm, ctx.cfg.schedule.build(), r.samples, r.seed)
    reference = reference_set(ctx.cfg, ctx.gmm, ctx.enc)
    row = _sample_metrics(ctx, pts, jepa_scores(ctx.enc, pts), reference)
    cols = _metric_columns(ctx)
    ctx.table("metrics.csv", cols, [[row[c] for c in cols]])
    return row


def _cmd_sweep(ctx: _Context, inputs, trace) -> dict:
    r = ctx.cfg.run
    sched = ctx.cfg.schedule.build()
    needs_ref = {"density_coverage", "avg_knn"} & set(r.metrics)
    reference = reference_set(ctx.cfg, ctx.gmm, ctx.enc) if needs_ref else None
    cols = _metric_columns(ctx)
    rows = []
    for eta in ctx.cfg.guidance.etas:
        pts = sample_batch(ctx.gmm, sched, r.samples, r.seed, enc=ctx.enc, cfg=ctx.cfg.guidance_config(eta))
        js = jepa_scores(ctx.enc, pts)
        _write_samples(ctx, f"samples_eta{eta:g}.csv", pts, js)
        _scatter(ctx, f"samples_eta{eta:g}.svg", pts, js, f"guided samples, eta={eta:g}")
        row = _sample_metrics(ctx, pts, js, reference)
        rows.append([eta] + [row[c] for c in cols])
        log.info("eta=%g mean_js=%.4f", eta, js.mean())
    ctx.table("summary.csv", ["eta"] + cols, rows)
    return {"rows": len(rows)}


_PIPELINES = {
    "sample": _cmd_sample,
    "guided-sample": _cmd_guided,
    "score": _cmd_score,
    "certify": _cmd_certify,
    "spectrum": _cmd_spectrum,
    "metrics": _cmd_metrics,
    "sweep": _cmd_sweep,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(ctx: _Context, command: str) -> Path:
    entries = {
        "command": command,
        "config_hash": ctx.digest,
        "seed": ctx.seed,
        "version": __version__,
        "files": {p.name: _sha256(p) for p in ctx.files},
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    path = ctx.out / "manifest.json"
    path.write_text(json.dumps(entries, indent=1) + "\n")
    return path


def run_experiment(cfg: ExperimentConfig, command: str = "sweep", inputs=None, trace: bool = False) -> RunResult:
    """Validate ``cfg``, run one pipeline, and write its artifacts.

    Config problems raise :class:`ConfigError` before any sampling.
    """
    if command not in _PIPELINES:
        raise ValueError(f"unknown command {command!r}; choose from {list(COMMANDS)}")
    cfg.validate()
    gmm = cfg.mixture.build()
    enc = cfg.encoder.build()
    _check_against_encoder(cfg, gmm, enc)
    out = Path(cfg.run.output)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(cfg, out, gmm, enc, cfg.digest())
    cfg_path = out / "config.ini"
    cfg_path.write_text(cfg.to_ini())
    ctx.files.append(cfg_path)
    summary = _PIPELINES[command](ctx, inputs, trace)
    manifest = _write_manifest(ctx, command)
    return RunResult(0, out, ctx.files + [manifest], summary)
