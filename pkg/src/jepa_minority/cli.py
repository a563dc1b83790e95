"""Command-line entry point: ``python -m jepa_minority <command> ...``.

Flags override fields of the loaded (or default) experiment config;
``--set section.key=value`` reaches any field. Failures print one line::

    error kind=<config|input|numeric|usage|internal> field=<section.key|-> message=<text>

to stderr and exit with status 2 (config/usage) or 1 (everything else).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .config import ConfigError, ExperimentConfig, convert_value, load_config
from .experiment import COMMANDS, run_experiment

# commands that never draw random numbers when given --input
_SEED_OPTIONAL_WITH_INPUT = ("spectrum",)

_FLAGS = {
    "samples": ("run", "samples"),
    "out": ("run", "output"),
    "knn_k": ("run", "knn_k"),
    "reference": ("run", "reference"),
    "certify_points": ("run", "certify_points"),
    "eta": ("guidance", "eta"),
    "tau": ("guidance", "tau"),
    "n_every": ("guidance", "n_every"),
    "k": ("guidance", "k"),
    "p": ("guidance", "p"),
    "q": ("guidance", "q"),
    "step_schedule": ("guidance", "step_schedule"),
    "encoder": ("encoder", "kind"),
    "encoder_seed": ("encoder", "seed"),
    "encoder_path": ("encoder", "path"),
    "d": ("encoder", "d"),
    "hidden": ("encoder", "hidden"),
    "schedule": ("schedule", "kind"),
    "T": ("schedule", "T"),
}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config (defaults used when omitted)")
    common.add_argument("--seed", type=int, help="run seed; required for stochastic commands")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config field")
    common.add_argument("--samples", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--knn-k", dest="knn_k", type=int)
    common.add_argument("--reference", choices=("iid", "bottom-js"))
    common.add_argument("--certify-points", dest="certify_points", type=int)
    common.add_argument("--eta", type=float)
    common.add_argument("--etas", help="comma-separated sweep grid")
    common.add_argument("--tau", type=float)
    common.add_argument("--n-every", dest="n_every", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--p", type=int)
    common.add_argument("--q", type=int)
    common.add_argument("--step-schedule", dest="step_schedule", choices=("variance-scaled", "constant"))
    common.add_argument("--encoder", choices=("linear", "tanh_mlp", "rff"))
    common.add_argument("--encoder-seed", dest="encoder_seed", type=int)
    common.add_argument("--encoder-path", dest="encoder_path")
    common.add_argument("--d", type=int)
    common.add_argument("--hidden", type=int)
    common.add_argument("--schedule", choices=("cosine", "linear"))
    common.add_argument("--T", type=int)
    common.add_argument("--no-plot", dest="no_plot", action="store_true")
    common.add_argument("--input", help="CSV of points (score, certify, spectrum, metrics)")
    common.add_argument("--trace", action="store_true", help="guided-sample: also write chain 0's trace")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="jepa-minority", description="JEPA-SCORE guided minority sampling on mixtures")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "unguided DDPM samples",
        "guided-sample": "JEPA-guided samples at one eta",
        "score": "exact and sketched scores of points",
        "certify": "error split and certificate per point",
        "spectrum": "per-index singular value statistics",
        "metrics": "density, coverage, AvgkNN, occupancy of a sample set",
        "sweep": "guided sampling over the eta grid with a summary table",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return p


def build_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides: dict[str, dict] = {}
    for flag, (section, key) in _FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides.setdefault(section, {})[key] = value
    if args.etas is not None:
        overrides.setdefault("guidance", {})["etas"] = convert_value("guidance.etas", (0.0,), args.etas)
    if args.seed is not None:
        overrides.setdefault("run", {})["seed"] = args.seed
    if args.no_plot:
        overrides.setdefault("run", {})["plot"] = False
    for item in args.set:
        path, sep, raw = item.partition("=")
        section, _, key = path.partition(".")
        if not sep or not hasattr(cfg, section) or key not in {f.name for f in fields(getattr(cfg, section))}:
            raise ConfigError(path or item, "unknown field in --set")
        overrides.setdefault(section, {})[key] = convert_value(path, getattr(getattr(cfg, section), key), raw)
    return cfg.with_values(**overrides).validate()


def _error_line(kind: str, field: str, message: str) -> str:
    return f"error kind={kind} field={field} message={' '.join(str(message).split())}"


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None and not (args.command in _SEED_OPTIONAL_WITH_INPUT and args.input):
            raise UsageError(f"--seed is required for '{args.command}'")
        cfg = build_config(args)
        result = run_experiment(cfg, args.command, inputs=args.input, trace=args.trace)
    except UsageError as exc:
        print(_error_line("usage", "-", exc), file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(_error_line("config", exc.path, str(exc).split(": ", 1)[-1]), file=sys.stderr)
        return 2
    except OSError as exc:
        print(_error_line("input", "-", exc), file=sys.stderr)
        return 1
    except (ArithmeticError, ValueError) as exc:
        print(_error_line("numeric" if isinstance(exc, ArithmeticError) else "input", "-", exc), file=sys.stderr)
        return 1
    except Exception as exc:  # still one parsable line for unexpected failures
        print(_error_line("internal", "-", f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        return 1
    for key, value in result.summary.items():
        print(f"{key}={value}")
    print(f"output={result.output}")
    return result.status


if __name__ == "__main__":
    sys.exit(main())
