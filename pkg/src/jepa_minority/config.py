"""Experiment configuration and its INI text format.

Grammar: ``configparser`` INI with five sections. Vectors are
comma-separated numbers; the mixture means are ``;``-separated vectors::

    [mixture]
    weights = 0.7, 0.3
    means = -3, 0; 3, 0
    scales = 0.5, 0.5

    [encoder]
    kind = tanh_mlp          # linear | tanh_mlp | rff
    n = 2
    d = 32
    hidden = 16              # tanh_mlp only
    bandwidth = 1.0          # rff only
    seed = 0
    path =                   # optional saved encoder; overrides kind/seed

    [schedule]
    kind = cosine            # cosine | linear
    T = 250
    beta_start = 0.0001      # linear only
    beta_end = 0.02          # linear only

    [guidance]
    eta = 2.0
    etas = 0, 0.5, 1, 2      # sweep grid
    k = 2
    p = 0
    q = 2
    step_schedule = variance-scaled
    tau = 0.8
    n_every = 3

    [run]
    samples = 2000
    seed = 5
    output = runs/default
    metrics = js, occupancy, density_coverage, avg_knn
    knn_k = 5
    reference = iid          # iid | bottom-js
    reference_samples = 2000
    reference_fraction = 0.25
    certify_points = 50
    plot = true

``#`` starts an inline comment. Writing a config and parsing it back gives
an equal object.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, field, fields, replace

from .diffusion import GaussianMixture, GuidanceConfig, VarianceSchedule
from .encoders import ENCODER_KINDS, Encoder, LinearEncoder, RffEncoder, TanhMlpEncoder, load_encoder
from .linalg import gaussian_matrix
from .rsvd import RsvdConfig

METRIC_NAMES = ("js", "occupancy", "density_coverage", "avg_knn")


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the offending ``section.key``."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class MixtureSpec:
    weights: tuple = (0.7, 0.3)
    means: tuple = ((-3.0, 0.0), (3.0, 0.0))
    scales: tuple = (0.5, 0.5)

    def build(self) -> GaussianMixture:
        return GaussianMixture.isotropic(self.weights, self.means, self.scales)


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "tanh_mlp"
    n: int = 2
    d: int = 32
    hidden: int = 16
    bandwidth: float = 1.0
    seed: int = 0
    path: str = ""

    def build(self) -> Encoder:
        if self.path:
            return load_encoder(self.path)
        if self.kind == "linear":
            return LinearEncoder(gaussian_matrix(self.d, self.n, self.seed))
        if self.kind == "tanh_mlp":
            return TanhMlpEncoder.random(self.n, self.hidden, self.d, self.seed)
        return RffEncoder.random(self.n, self.d, self.seed, bandwidth=self.bandwidth)


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cosine"
    T: int = 250
    beta_start: float = 1e-4
    beta_end: float = 2e-2

    def build(self) -> VarianceSchedule:
        if self.kind == "linear":
            return VarianceSchedule.linear(self.T, self.beta_start, self.beta_end)
        return VarianceSchedule.cosine(self.T)


@dataclass(frozen=True)
class GuidanceSpec:
    eta: float = 2.0
    etas: tuple = (0.0, 0.5, 1.0, 2.0)
    k: int = 2
    p: int = 0
    q: int = 2
    step_schedule: str = "variance-scaled"
    tau: float = 0.8
    n_every: int = 3


@dataclass(frozen=True)
class RunSpec:
    samples: int = 2000
    seed: int = 5
    output: str = "runs/default"
    metrics: tuple = METRIC_NAMES
    knn_k: int = 5
    reference: str = "iid"
    reference_samples: int = 2000
    reference_fraction: float = 0.25
    certify_points: int = 50
    plot: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    mixture: MixtureSpec = field(default_factory=MixtureSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    guidance: GuidanceSpec = field(default_factory=GuidanceSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def validate(self) -> "ExperimentConfig":
        _validate(self)
        return self

    def to_ini(self) -> str:
        return dump_ini(self)

    def digest(self) -> str:
        """SHA-256 of the canonical INI text, truncated to 16 hex digits.

        ``run.output`` is blanked first: where results go does not change them.
        """
        text = self.with_values(run={"output": "-"}).to_ini()
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_values(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``with_values(run={"seed": 3})``."""
        return replace(self, **{name: replace(getattr(self, name), **vals) for name, vals in sections.items()})

    def rsvd_config(self) -> RsvdConfig:
        g = self.guidance
        return RsvdConfig(g.k, g.p, g.q)

    def guidance_config(self, eta: float | None = None) -> GuidanceConfig:
        g = self.guidance
        return GuidanceConfig(
            eta=g.eta if eta is None else eta,
            rsvd=self.rsvd_config(),
            seed=self.run.seed,
            schedule_kind=g.step_schedule,
            tau=g.tau,
            n_every=g.n_every,
        )


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_fmt(v) for v in value)
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section in fields(cfg):
        spec = getattr(cfg, section.name)
        parser[section.name] = {f.name: _fmt(getattr(spec, f.name)) for f in fields(spec)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def convert_value(path: str, proto, text: str):
    text = text.strip()
    try:
        if isinstance(proto, bool):
            if text.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"not a boolean: {text!r}")
            return text.lower() in ("true", "yes", "1")
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
        if isinstance(proto, tuple):
            if proto and isinstance(proto[0], tuple):
                return tuple(_floats(row) for row in text.split(";") if row.strip())
            if proto and isinstance(proto[0], str):
                return tuple(v.strip() for v in text.split(",") if v.strip())
            return _floats(text)
        return text
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def parse_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc).replace("\n", " ")) from None
    default = ExperimentConfig()
    known = {f.name for f in fields(default)}
    for name in parser.sections():
        if name not in known:
            raise ConfigError(name, "unknown section")
    sections = {}
    for section in fields(default):
        spec = getattr(default, section.name)
        if not parser.has_section(section.name):
            continue
        names = {f.name for f in fields(spec)}
        values = {}
        for key, raw in parser[section.name].items():
            path = f"{section.name}.{key}"
            if key not in names:
                raise ConfigError(path, "unknown key")
            values[key] = convert_value(path, getattr(spec, key), raw)
        sections[section.name] = values
    return default.with_values(**sections)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_ini(fh.read()).validate()


def save_config(path, cfg: ExperimentConfig) -> None:
    with open(path, "w") as fh:
        fh.write(cfg.to_ini())


def _check(ok: bool, path: str, message: str) -> None:
    if not ok:
        raise ConfigError(path, message)


def _validate(cfg: ExperimentConfig) -> None:
    m, e, s, g, r = cfg.mixture, cfg.encoder, cfg.schedule, cfg.guidance, cfg.run

    _check(len(m.weights) >= 1, "mixture.weights", "need at least one component")
    _check(len(m.means) == len(m.weights), "mixture.means", f"expected {len(m.weights)} means, got {len(m.means)}")
    _check(len(m.scales) == len(m.weights), "mixture.scales", f"expected {len(m.weights)} scales, got {len(m.scales)}")
    _check(all(w > 0 for w in m.weights), "mixture.weights", "weights must be positive")
    _check(abs(sum(m.weights) - 1.0) <= 1e-12, "mixture.weights", f"weights sum to {sum(m.weights)!r}, not 1")
    _check(all(v > 0 for v in m.scales), "mixture.scales", "scales must be positive")
    for j, mu in enumerate(m.means):
        _check(len(mu) == e.n, "mixture.means", f"mean {j} has dimension {len(mu)}, encoder.n is {e.n}")

    _check(e.kind in ENCODER_KINDS, "encoder.kind", f"unknown kind {e.kind!r}; choose from {sorted(ENCODER_KINDS)}")
    _check(e.n >= 1, "encoder.n", "must be >= 1")
    _check(e.d >= 1, "encoder.d", "must be >= 1")
    _check(e.hidden >= 1, "encoder.hidden", "must be >= 1")
    _check(e.bandwidth > 0, "encoder.bandwidth", "must be positive")
    if e.kind == "rff" and not e.path:
        _check(e.d % 2 == 0, "encoder.d", "rff output dimension must be even")

    _check(s.kind in ("cosine", "linear"), "schedule.kind", f"unknown kind {s.kind!r}")
    _check(s.T >= 1, "schedule.T", "must be >= 1")
    if s.kind == "linear":
        _check(0 < s.beta_start < 1, "schedule.beta_start", "must lie in (0, 1)")
        _check(0 < s.beta_end < 1, "schedule.beta_end", "must lie in (0, 1)")

    _check(g.eta >= 0, "guidance.eta", "must be >= 0")
    _check(len(g.etas) >= 1, "guidance.etas", "sweep grid is empty")
    _check(all(v >= 0 for v in g.etas), "guidance.etas", "every eta must be >= 0")
    _check(g.k >= 1, "guidance.k", "must be >= 1")
    _check(g.p >= 0, "guidance.p", "must be >= 0")
    _check(g.q >= 0, "guidance.q", "must be >= 0")
    _check(g.k + g.p <= min(e.n, e.d), "guidance.k",
           f"k + p = {g.k + g.p} exceeds min(encoder.n, encoder.d) = {min(e.n, e.d)}")
    _check(g.step_schedule in ("variance-scaled", "constant"), "guidance.step_schedule",
           f"unknown schedule {g.step_schedule!r}")
    _check(0.0 <= g.tau <= 1.0, "guidance.tau", "must lie in [0, 1]")
    _check(g.n_every >= 1, "guidance.n_every", "must be >= 1")

    _check(r.samples >= 1, "run.samples", "must be >= 1")
    _check(r.seed >= 0, "run.seed", "must be >= 0")
    _check(bool(r.output), "run.output", "must not be empty")
    for name in r.metrics:
        _check(name in METRIC_NAMES, "run.metrics", f"unknown metric {name!r}; choose from {list(METRIC_NAMES)}")
    _check(r.knn_k >= 1, "run.knn_k", "must be >= 1")
    _check(r.reference in ("iid", "bottom-js"), "run.reference", f"unknown reference {r.reference!r}")
    _check(r.reference_samples > r.knn_k, "run.reference_samples", "must exceed run.knn_k")
    _check(0 < r.reference_fraction <= 1, "run.reference_fraction", "must lie in (0, 1]")
    _check(r.certify_points >= 1, "run.certify_points", "must be >= 1")
    if "density_coverage" in r.metrics or "avg_knn" in r.metrics:
        _check(r.samples > r.knn_k, "run.samples", "must exceed run.knn_k for kNN metrics")

