"""Dense real linear algebra used by every other module.

Matrices are plain 2-D ``float64`` numpy arrays. The factorizations
delegate to LAPACK through numpy (divide-and-conquer SVD, Householder QR);
this module adds input validation, sign/shape conventions and the
tolerance table shared by the rest of the package.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import NamedTuple

import numpy as np

TOLERANCES = {
    # u^T u = I, vt vt^T = I, Q^T Q = I (Frobenius)
    "orthonormality": 1e-10,
    # ||u diag(s) vt - a||_F / ||a||_F
    "reconstruction": 1e-8,
    # column is treated as dependent when its Householder pivot falls below
    # this fraction of the largest column norm
    "rank_deficiency": 1e-12,
}

# LAPACK bidiagonal QR gives up after 6 * min(m, n)**2 sweeps
SVD_ITERATION_CAP = "6*min(m,n)^2 implicit QR sweeps"


class LinalgError(ValueError):
    """Raised when a matrix violates a precondition or a factorization fails."""


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate ``a`` as a finite, non-empty 2-D real matrix and return a float64 copy."""
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise LinalgError(f"{name} must have at least one row and column, got {m.shape}")
    if not np.all(np.isfinite(m)):
        i, j = np.argwhere(~np.isfinite(m))[0]
        raise LinalgError(f"{name} has a non-finite entry at ({i}, {j})")
    return m


def svd(a) -> SvdResult:
    """Thin singular value decomposition ``a = u @ diag(s) @ vt``.

    Returns all ``min(rows, cols)`` singular values in descending order.
    Singular vector signs are fixed so that the largest-magnitude entry of
    each left singular vector is positive, which makes the output a pure
    function of the input.
    """
    m = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise LinalgError(
            f"SVD did not converge within the iteration cap ({SVD_ITERATION_CAP}) "
            f"for a {m.shape[0]}x{m.shape[1]} matrix: {exc}"
        ) from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdResult(u * signs, s, vt * signs[:, None])


def singular_values(a) -> np.ndarray:
    """Singular values only, descending. Accepts stacked matrices (..., m, n)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = as_matrix(a)
    return np.linalg.svd(a, compute_uv=False)


def qr_orthonormalize(a) -> np.ndarray:
    """Orthonormal basis for the column span of ``a`` via Householder QR.

    The output has the shape of ``a``. Columns are sign-normalized so that
    ``R`` has a non-negative diagonal, hence an already orthonormal input is
    returned up to rounding with its original column signs.

    Raises
    ------
    LinalgError
        If a column is linearly dependent on the previous ones.
    """
    m = as_matrix(a)
    if m.shape[1] > m.shape[0]:
        raise LinalgError(
            f"cannot orthonormalize {m.shape[1]} columns in dimension {m.shape[0]}"
        )
    q, r = np.linalg.qr(m, mode="reduced")
    diag = np.diag(r)
    scale = max(np.max(np.linalg.norm(m, axis=0)), np.finfo(float).tiny)
    bad = np.flatnonzero(np.abs(diag) <= TOLERANCES["rank_deficiency"] * scale)
    if bad.size:
        raise LinalgError(f"rank-deficient input: column {bad[0]} is linearly dependent")
    return q * np.where(diag < 0, -1.0, 1.0)


def orthonormalize_stack(a: np.ndarray) -> np.ndarray:
    """Householder QR on a stack of matrices (..., m, l); no rank check.

    Used inside power iterations where the sketch is full rank with
    probability one and a failed check would only cost a retry.
    """
    q, r = np.linalg.qr(a, mode="reduced")
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * np.where(d < 0, -1.0, 1.0)[..., None, :]


def gaussian_matrix(rows: int, cols: int, seed) -> np.ndarray:
    """I.i.d. standard normal ``rows x cols`` matrix, deterministic in ``seed``."""
    if rows < 1 or cols < 1:
        raise LinalgError(f"shape must be positive, got ({rows}, {cols})")
    return np.random.default_rng(seed).standard_normal((rows, cols))


def frobenius_norm(a) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64), "fro"))


def spectral_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def format_matrix_csv(a) -> str:
    m = as_matrix(a)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in m:
        writer.writerow([f"{v:.17g}" for v in row])
    return buf.getvalue()


def parse_matrix_csv(text: str) -> np.ndarray:
    rows = [
        [float(v) for v in row]
        for row in csv.reader(io.StringIO(text))
        if row and not row[0].startswith("#")
    ]
    if not rows:
        raise LinalgError("empty matrix CSV")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise LinalgError(f"ragged matrix CSV: row lengths {sorted(widths)}")
    return as_matrix(rows)


def write_matrix_csv(path, a) -> None:
    """Write one row per line with round-trip (17 significant digit) decimals."""
    Path(path).write_text(format_matrix_csv(a))


def read_matrix_csv(path) -> np.ndarray:
    return parse_matrix_csv(Path(path).read_text())
