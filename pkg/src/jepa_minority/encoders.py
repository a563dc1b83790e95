"""Differentiable encoders ``f: R^n -> R^d`` with analytic Jacobians.

All encoders accept a single point of shape ``(n,)`` or a batch
``(..., n)``; ``jacobian`` then returns ``(..., d, n)``. Encoders are
immutable after construction.
"""

from __future__ import annotations

import abc
import re
from pathlib import Path

import numpy as np

from .linalg import LinalgError, format_matrix_csv, parse_matrix_csv


class Encoder(abc.ABC):
    n: int
    d: int

    @abc.abstractmethod
    def forward(self, x) -> np.ndarray: ...

    @abc.abstractmethod
    def jacobian(self, x) -> np.ndarray: ...

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.n,):
            raise ValueError(f"expected trailing dimension {self.n}, got shape {x.shape}")
        return x

    def blocks(self) -> dict[str, np.ndarray]:
        """Named parameter arrays, in serialization order."""
        raise NotImplementedError


class LinearEncoder(Encoder):
    """``f(x) = A x``. The Jacobian is ``A`` everywhere."""

    kind = "linear"

    def __init__(self, a):
        a = np.array(a, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError(f"linear map must be 2-D, got shape {a.shape}")
        a.setflags(write=False)
        self.a = a
        self.d, self.n = a.shape

    def forward(self, x):
        return self._check_input(x) @ self.a.T

    def jacobian(self, x):
        x = self._check_input(x)
        return np.broadcast_to(self.a, x.shape[:-1] + self.a.shape).copy()

    def blocks(self):
        return {"A": self.a}

    @classmethod
    def from_blocks(cls, blocks):
        return cls(blocks["A"])


class TanhMlpEncoder(Encoder):
    """One hidden layer: ``f(x) = W2 tanh(W1 x + b1) + b2``.

    Weights are Gaussian with variance ``2 / fan_in``; biases are Gaussian
    with standard deviation ``bias_scale``.
    """

    kind = "tanh_mlp"

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = (
            np.array(v, dtype=np.float64) for v in (w1, b1, w2, b2)
        )
        h, self.n = self.w1.shape
        self.d = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (self.d, h) or self.b2.shape != (self.d,):
            raise ValueError(
                f"inconsistent MLP shapes: W1 {self.w1.shape}, b1 {self.b1.shape}, "
                f"W2 {self.w2.shape}, b2 {self.b2.shape}"
            )
        for v in (self.w1, self.b1, self.w2, self.b2):
            v.setflags(write=False)

    @classmethod
    def random(cls, n: int, h: int, d: int, seed, bias_scale: float = 0.5) -> "TanhMlpEncoder":
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((h, n)) * np.sqrt(2.0 / n)
        b1 = rng.standard_normal(h) * bias_scale
        w2 = rng.standard_normal((d, h)) * np.sqrt(2.0 / h)
        b2 = rng.standard_normal(d) * bias_scale
        return cls(w1, b1, w2, b2)

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def forward(self, x):
        x = self._check_input(x)
        return np.tanh(x @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def jacobian(self, x):
        x = self._check_input(x)
        slope = 1.0 - np.tanh(x @ self.w1.T + self.b1) ** 2
        return self.w2 @ (slope[..., :, None] * self.w1)

    def blocks(self):
        return {"W1": self.w1, "b1": self.b1, "W2": self.w2, "b2": self.b2}

    @classmethod
    def from_blocks(cls, blocks):
        return cls(blocks["W1"], blocks["b1"], blocks["W2"], blocks["b2"])


class RffEncoder(Encoder):
    """Random Fourier features ``f(x) = [cos(Wx); sin(Wx)]`` with ``W ~ bandwidth * N(0, 1)``.

    Each frequency row contributes ``cos^2 + sin^2 = 1`` to ``||f(x)||^2``,
    so the output norm is exactly ``sqrt(d / 2)``. The same identity makes
    ``J^T J = W^T W`` for every ``x``: the Jacobian singular values do not
    depend on the input, so this encoder yields a constant score.
    """

    kind = "rff"

    def __init__(self, omega):
        omega = np.array(omega, dtype=np.float64)
        if omega.ndim != 2:
            raise ValueError(f"frequency matrix must be 2-D, got shape {omega.shape}")
        omega.setflags(write=False)
        self.omega = omega
        m, self.n = omega.shape
        self.d = 2 * m

    @classmethod
    def random(cls, n: int, d: int, seed, bandwidth: float = 1.0) -> "RffEncoder":
        if d % 2:
            raise ValueError(f"RFF output dimension must be even, got {d}")
        rng = np.random.default_rng(seed)
        return cls(bandwidth * rng.standard_normal((d // 2, n)))

    def forward(self, x):
        z = self._check_input(x) @ self.omega.T
        return np.concatenate([np.cos(z), np.sin(z)], axis=-1)

    def jacobian(self, x):
        z = self._check_input(x) @ self.omega.T
        return np.concatenate(
            [-np.sin(z)[..., :, None] * self.omega, np.cos(z)[..., :, None] * self.omega],
            axis=-2,
        )

    def blocks(self):
        return {"Omega": self.omega}

    @classmethod
    def from_blocks(cls, blocks):
        return cls(blocks["Omega"])


ENCODER_KINDS = {c.kind: c for c in (LinearEncoder, TanhMlpEncoder, RffEncoder)}


def jacobian_fd(enc: Encoder, x, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``enc`` at a single point ``x`` (d x n)."""
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    x = np.asarray(x, dtype=np.float64)
    eye = np.eye(enc.n) * step
    plus = enc.forward(x + eye)
    minus = enc.forward(x - eye)
    for vals in (plus, minus):
        bad = np.argwhere(~np.isfinite(vals))
        if bad.size:
            raise FloatingPointError(f"non-finite encoder output at index {bad[0][1]}")
    return ((plus - minus) / (2.0 * step)).T


def jacobian_row_directional(enc: Encoder, x, direction) -> np.ndarray:
    """Jacobian-vector product ``J_f(x) v`` for a unit vector ``v``."""
    v = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError(f"direction must be a unit vector, got norm {np.linalg.norm(v)!r}")
    return enc.jacobian(x) @ v


_HEADER = re.compile(r"^# encoder=(\w+) n=(\d+) d=(\d+) blocks=(.*)$")


def save_encoder(path, enc: Encoder) -> None:
    """Write encoder parameters as a flat CSV bundle.

    The first line names the encoder kind, its dimensions and the layout of
    every parameter block (``name:rows x cols`` for matrices, ``name:len``
    for vectors, which are stored as a single row). Block rows follow in
    layout order.
    """
    layout, body = [], []
    for name, v in enc.blocks().items():
        layout.append(f"{name}:{v.shape[0]}" if v.ndim == 1 else f"{name}:{v.shape[0]}x{v.shape[1]}")
        body.append(format_matrix_csv(np.atleast_2d(v)))
    header = f"# encoder={enc.kind} n={enc.n} d={enc.d} blocks={','.join(layout)}\n"
    Path(path).write_text(header + "".join(body))


def load_encoder(path) -> Encoder:
    header, _, body = Path(path).read_text().partition("\n")
    m = _HEADER.match(header)
    if not m:
        raise LinalgError(f"{path}: missing encoder header line")
    kind, layout = m.group(1), m.group(4)
    if kind not in ENCODER_KINDS:
        raise LinalgError(f"{path}: unknown encoder kind {kind!r}")
    lines = body.splitlines()
    blocks, start = {}, 0
    for item in layout.split(","):
        name, shape = item.split(":")
        dims = tuple(int(v) for v in shape.split("x"))
        nrows = dims[0] if len(dims) == 2 else 1
        block = parse_matrix_csv("\n".join(lines[start : start + nrows]))
        if block.size != int(np.prod(dims)):
            raise LinalgError(f"{path}: block {name} has {block.size} entries, expected shape {dims}")
        blocks[name] = block.reshape(dims)
        start += nrows
    enc = ENCODER_KINDS[kind].from_blocks(blocks)
    if (enc.n, enc.d) != (int(m.group(2)), int(m.group(3))):
        raise LinalgError(f"{path}: header dims n={m.group(2)} d={m.group(3)} disagree with blocks")
    return enc
