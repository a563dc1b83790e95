"""CSV tables for score reports, spectrum statistics, traces and samples.

Every table starts with ``# config_hash=<hex>`` (and optional further
``#`` lines), then a header row. Floats are written with 17 significant
digits so a table parses back to the same doubles.
"""

from __future__ import annotations

import csv
import io
import math

import numpy as np

from .diffusion import SampleTrace
from .score import ScoreReport, SpectrumStats

REPORT_COLUMNS = (
    "index", "js_exact", "js_approx", "e_rsvd", "e_trunc", "bound_rsvd", "bound_trunc",
    "numerical_rank", "k", "halko_constant", "sigma_next", "projection_residual",
    "approx_residual_fro2", "vacuous_trunc", "holds",
)
SPECTRUM_COLUMNS = ("index", "mean", "variance", "cumulative_ratio")


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else f"{v:.17g}"
    if v is None:
        return ""
    return str(v)


def format_table(header, rows, config_hash: str, comments=()) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_table(path, header, rows, config_hash: str, comments=()) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(format_table(header, rows, config_hash, comments))


def read_table(path) -> tuple[list[str], list[list[str]], list[str]]:
    """Header, string rows, and the comment lines (without ``# ``)."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comments = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    reader = csv.reader(ln for ln in lines if ln and not ln.startswith("#"))
    header = next(reader)
    return header, list(reader), comments


def read_points(path) -> np.ndarray:
    """Points from a samples table (columns ``x1..xn``) or a bare numeric CSV."""
    header, rows, _ = read_table(path)
    cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    try:
        if cols:
            return np.array([[float(r[i]) for i in cols] for r in rows])
        return np.array([[float(v) for v in r] for r in [header] + rows])
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def report_rows(reports: list[ScoreReport]):
    for i, r in enumerate(reports):
        yield (i, r.js_exact, r.js_approx, r.e_rsvd, r.e_trunc, r.bound_rsvd, r.bound_trunc,
               r.numerical_rank, r.k, r.halko_constant, r.sigma_next, r.projection_residual,
               r.approx_residual_fro2, r.vacuous_trunc, r.holds)


def spectrum_rows(stats: SpectrumStats):
    for i, row in enumerate(zip(stats.mean, stats.variance, stats.cumulative_ratio), start=1):
        yield (i, *row)


def spectrum_comments(stats: SpectrumStats) -> list[str]:
    return [f"k_th={stats.k_th}", f"offset_value={stats.offset_value:.17g}",
            f"offset_std={stats.offset_std:.17g}", f"ragged={_cell(stats.ragged)}"]


def sample_header(n: int, extra=()) -> list[str]:
    return ["index"] + [f"x{j + 1}" for j in range(n)] + list(extra)


def sample_rows(points, *columns):
    for i, x in enumerate(np.asarray(points)):
        yield (i, *x, *(c[i] for c in columns))


def trace_header(n: int) -> list[str]:
    return ["t"] + [f"x{j + 1}" for j in range(n)] + [f"x0hat{j + 1}" for j in range(n)] + ["guidance_norm", "js_star"]


def trace_rows(trace: SampleTrace):
    n = trace.x0.size
    for s in trace.steps:
        x0 = s.x0_hat if s.x0_hat is not None else [None] * n
        yield (s.t, *s.x_t, *x0, s.guidance_norm, s.js_star)
