import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jepa_minority.cli import main
from jepa_minority.config import (
    ConfigError, ExperimentConfig, load_config, parse_ini, save_config,
)
from jepa_minority.experiment import run_experiment
from jepa_minority.tables import read_table

SMALL = ["--samples", "40", "--T", "30", "--no-plot"]


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def summary_rows(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


positive = st.floats(0.01, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 4).flatmap(lambda c: st.tuples(
        st.lists(positive, min_size=c, max_size=c),
        st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5)), min_size=c, max_size=c),
        st.lists(positive, min_size=c, max_size=c))),
    st.sampled_from(["linear", "tanh_mlp", "rff"]), st.integers(0, 1000), positive,
    st.lists(st.floats(0, 5), min_size=1, max_size=5), st.floats(0, 1), st.booleans(),
)
def test_ini_round_trip(mix, kind, seed, eta, etas, tau, plot):
    w, means, scales = mix
    total = sum(w)
    weights = tuple(v / total for v in w)
    cfg = ExperimentConfig().with_values(
        mixture={"weights": weights, "means": tuple(means), "scales": tuple(scales)},
        encoder={"kind": kind, "seed": seed},
        guidance={"eta": eta, "etas": tuple(etas), "tau": tau},
        run={"plot": plot, "output": "out dir/x"},
    )
    assert parse_ini(cfg.to_ini()) == cfg


def test_file_round_trip_and_comments(tmp_path):
    path = tmp_path / "c.ini"
    cfg = ExperimentConfig().with_values(run={"seed": 11})
    save_config(path, cfg)
    assert load_config(path) == cfg
    text = "[guidance]\neta = 0.5   # half step\n[run]\nseed = 3\n"
    parsed = parse_ini(text)
    assert parsed.guidance.eta == 0.5 and parsed.run.seed == 3
    assert parsed.encoder == ExperimentConfig().encoder


def test_digest_ignores_output_only():
    base = ExperimentConfig()
    assert base.digest() == base.with_values(run={"output": "elsewhere"}).digest()
    assert base.digest() != base.with_values(run={"seed": 6}).digest()


@pytest.mark.parametrize("text,path", [
    ("[bogus]\na = 1\n", "bogus"),
    ("[run]\nsamplez = 3\n", "run.samplez"),
    ("[run]\nsamples = many\n", "run.samples"),
    ("[run]\nplot = maybe\n", "run.plot"),
])
def test_parse_errors_name_field(text, path):
    with pytest.raises(ConfigError) as info:
        parse_ini(text)
    assert info.value.path == path


@pytest.mark.parametrize("section,values,path", [
    ("mixture", {"weights": (0.5, 0.6)}, "mixture.weights"),
    ("mixture", {"means": ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))}, "mixture.means"),
    ("encoder", {"kind": "cnn"}, "encoder.kind"),
    ("encoder", {"kind": "rff", "d": 7}, "encoder.d"),
    ("guidance", {"k": 2, "p": 1}, "guidance.k"),
    ("guidance", {"tau": 1.5}, "guidance.tau"),
    ("guidance", {"n_every": 0}, "guidance.n_every"),
    ("run", {"reference": "other"}, "run.reference"),
    ("run", {"metrics": ("js", "fid")}, "run.metrics"),
    ("run", {"samples": 3}, "run.samples"),
])
def test_validation_field_paths(section, values, path):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig().with_values(**{section: values}).validate()
    assert info.value.path == path


def test_k_plus_p_fails_before_sampling(tmp_path, monkeypatch):
    import jepa_minority.experiment as ex

    def forbidden(*a, **k):
        raise AssertionError("sampling started")

    monkeypatch.setattr(ex, "sample_batch", forbidden)
    cfg = ExperimentConfig().with_values(guidance={"p": 1}, run={"output": str(tmp_path / "o")})
    with pytest.raises(ConfigError, match=r"k \+ p = 3 exceeds"):
        run_experiment(cfg, "sweep")
    assert not (tmp_path / "o").exists()


def test_cli_requires_seed(capsys, tmp_path):
    code, _, err = run_cli(capsys, "sample", "--out", tmp_path / "o")
    assert code == 2
    assert err.strip() == "error kind=usage field=- message=--seed is required for 'sample'"


def test_cli_config_error_line(capsys, tmp_path):
    code, _, err = run_cli(capsys, "sweep", "--seed", 1, "--p", 1, "--out", tmp_path / "o")
    assert code == 2
    assert err.startswith("error kind=config field=guidance.k message=k + p = 3 exceeds")
    code, _, err = run_cli(capsys, "sweep", "--seed", 1, "--set", "run.nope=3", "--out", tmp_path / "o")
    assert code == 2 and "field=run.nope" in err
    bad = tmp_path / "bad.ini"
    bad.write_text("[guidance]\ntau = 2\n")
    code, _, err = run_cli(capsys, "sweep", "--seed", 1, "--config", bad)
    assert code == 2 and "field=guidance.tau" in err


def test_cli_input_error_line(capsys, tmp_path):
    code, _, err = run_cli(capsys, "score", "--seed", 1, "--input", tmp_path / "missing.csv", "--out", tmp_path / "o")
    assert code == 1
    assert err.startswith("error kind=input field=- message=")
    assert len(err.strip().splitlines()) == 1


def test_cli_sample_outputs_and_manifest(capsys, tmp_path):
    out = tmp_path / "s"
    code, stdout, _ = run_cli(capsys, "sample", "--seed", 3, "--out", out, "--samples", 30, "--T", 20)
    assert code == 0
    assert f"output={out}" in stdout
    header, rows = read_table(out / "samples.csv")[:2]
    assert header[:4] == ["index", "x1", "x2", "js"] and len(rows) == 30
    assert (out / "samples.svg").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["command"] == "sample"
    assert manifest["config_hash"] == load_config(out / "config.ini").digest()
    assert set(manifest["files"]) >= {"samples.csv", "samples.svg", "config.ini"}


def test_cli_score_certify_spectrum_metrics_on_input(capsys, tmp_path):
    pts = tmp_path / "pts.csv"
    np.savetxt(pts, np.random.default_rng(0).standard_normal((12, 2)), delimiter=",", header="x1,x2", comments="")
    for cmd, name in [("score", "scores.csv"), ("certify", "certify.csv"), ("metrics", "metrics.csv")]:
        code, _, err = run_cli(capsys, cmd, "--seed", 1, "--input", pts, "--out", tmp_path / cmd, "--knn-k", 3,
                               "--set", "run.reference_samples=50")
        assert code == 0, err
        assert (tmp_path / cmd / name).exists()
    code, _, err = run_cli(capsys, "spectrum", "--input", pts, "--out", tmp_path / "sp")
    assert code == 0, err
    header, rows, comments = read_table(tmp_path / "sp" / "spectrum.csv")
    assert len(rows) == 2
    cert_header, cert_rows = read_table(tmp_path / "certify" / "certify.csv")[:2]
    holds = cert_header.index("holds")
    assert all(r[holds] == "true" for r in cert_rows)


def test_guided_sample_trace(capsys, tmp_path):
    out = tmp_path / "g"
    code, _, err = run_cli(capsys, "guided-sample", "--seed", 2, "--out", out, "--trace", *SMALL)
    assert code == 0, err
    header, rows = read_table(out / "trace.csv")[:2]
    assert len(rows) == 30


def test_sweep_reproducible_and_monotone(capsys, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        code, _, err = run_cli(capsys, "sweep", "--seed", 5, "--out", out)
        assert code == 0, err
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    assert "summary.csv" in csvs and len(csvs) == 5
    for name in csvs + sorted(p.name for p in outs[0].glob("*.svg")):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    rows = summary_rows(outs[0] / "summary.csv")
    assert [float(r["eta"]) for r in rows] == [0, 0.5, 1, 2]
    mean_js = [float(r["mean_js"]) for r in rows]
    assert all(b < a for a, b in zip(mean_js, mean_js[1:]))
