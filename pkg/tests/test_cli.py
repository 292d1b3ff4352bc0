"""Command-line behavior: strict configs, exit codes, manifests, rerun identity."""

import hashlib
import json

import numpy as np
import pytest

from chaosprop.cli import _MODEL_BUILDERS, main, parse_config, register_model
from chaosprop.errors import ConfigurationError
from chaosprop.models import ParticleModel, flat_quadratic_metric


def _write_config(tmp_path, doc, name="config.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=1))
    return p


_LINEAR = {"kind": "linear", "theta": 0.5, "tau": 1.0, "sigma": 0.4, "x_ini": 1.0}
_NEURAL = {"kind": "neural", "tau": 1.0, "sigma": 0.3, "half_width": 3.0,
           "kernel": {"kind": "cosine", "amplitude": 0.2}}


# ---------------------------------------------------------------------------
# config parsing


def test_parse_config_minimal(tmp_path):
    p = _write_config(tmp_path, {"model": _LINEAR})
    exp = parse_config(p)
    assert exp.seed == 0
    assert exp.model.name == "linear-mean-reverting"
    assert exp.config_sha256 == hashlib.sha256(p.read_bytes()).hexdigest()


def test_parse_config_rejects_unknown_top_key(tmp_path):
    p = _write_config(tmp_path, {"model": _LINEAR, "dtt": 0.01})
    with pytest.raises(ConfigurationError, match="config.dtt"):
        parse_config(p)


def test_parse_config_rejects_unknown_nested_key(tmp_path):
    p = _write_config(tmp_path, {"model": _LINEAR, "sim": {"dtt": 0.01}})
    with pytest.raises(ConfigurationError, match="sim.dtt"):
        parse_config(p)


def test_parse_config_rejects_unknown_model_kind(tmp_path):
    p = _write_config(tmp_path, {"model": {"kind": "wat"}})
    with pytest.raises(ConfigurationError, match="known kinds"):
        parse_config(p)


def test_parse_config_rejects_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigurationError, match="not valid JSON"):
        parse_config(p)


def test_parse_config_rejects_oversized_seed(tmp_path):
    p = _write_config(tmp_path, {"model": _LINEAR, "seed": 2**64})
    with pytest.raises(ConfigurationError, match="64 bits"):
        parse_config(p)


def test_metric_overrides(tmp_path):
    p = _write_config(tmp_path, {
        "model": _LINEAR, "metric": {"flat": False, "half_width": 2.5, "q": 4}})
    exp = parse_config(p)
    assert exp.metric.half_width == 2.5
    assert exp.metric.q == 4
    p2 = _write_config(tmp_path, {"model": _NEURAL, "metric": {"flat": True}},
                       name="c2.json")
    exp2 = parse_config(p2)
    assert exp2.metric.half_width == float("inf")


def test_register_model_custom_kind(tmp_path):
    def build(params):
        model = ParticleModel(
            b0=lambda t, x: -np.asarray(x, dtype=float),
            b1=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
            b2=lambda x: np.zeros(np.shape(x)),
            x_ini=0.0, lip_b2=0.0, sup_b1=0.0,
            b1_mean=lambda x, s: np.zeros(np.shape(x)), name="probe-decay")
        return model, flat_quadratic_metric()

    register_model("probe-decay", build)
    try:
        p = _write_config(tmp_path, {"model": {"kind": "probe-decay"}})
        exp = parse_config(p)
        assert exp.model.name == "probe-decay"
    finally:
        _MODEL_BUILDERS.pop("probe-decay", None)


# ---------------------------------------------------------------------------
# exit codes and manifest contract


def test_main_unknown_key_exits_2_without_out_dir(tmp_path, capsys):
    p = _write_config(tmp_path, {"model": _LINEAR, "simm": {}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 2
    assert "config.simm" in capsys.readouterr().err
    assert not out.exists()  # rejected before any output is created


def test_main_bad_dt_exits_2_and_names_the_key(tmp_path, capsys):
    p = _write_config(tmp_path, {
        "model": _LINEAR, "sim": {"n_particles": 4, "dt": 0}})
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 2
    assert "sim.dt" in capsys.readouterr().err
    # the run got far enough to own the directory, so the manifest records it
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 2


def test_main_refuses_nonempty_out_dir(tmp_path, capsys):
    p = _write_config(tmp_path, {
        "model": _LINEAR, "sim": {"n_particles": 4, "t_end": 1.0}})
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("precious\n")
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 2
    assert "not empty" in capsys.readouterr().err
    assert (out / "keep.txt").read_text() == "precious\n"
    assert not (out / "manifest.json").exists()


def test_main_requires_some_output_dir(tmp_path, capsys):
    p = _write_config(tmp_path, {"model": _LINEAR, "sim": {"n_particles": 4}})
    assert main(["simulate", "--config", str(p)]) == 2
    assert "output directory" in capsys.readouterr().err


def test_simulate_end_to_end_with_manifest(tmp_path):
    doc = {
        "seed": 3,
        "output_dir": str(tmp_path / "run"),
        "model": _LINEAR,
        "sim": {"n_particles": 16, "dt": 0.05, "t_end": 1.0,
                "record_times": [0.5, 1.0], "surrogate": "exact-mean"},
    }
    p = _write_config(tmp_path, doc)
    assert main(["simulate", "--config", str(p)]) == 0

    csv_path = tmp_path / "run" / "h_series.csv"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "t,h_mean,f_mean,sq_mean,x_mean,x_m2"
    assert len(lines) == 1 + 2  # one row per record time
    assert [float(l.split(",")[0]) for l in lines[1:]] == [0.5, 1.0]

    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["exit_status"] == 0
    assert manifest["seed"] == 3
    assert manifest["seed_overridden"] is False
    assert manifest["config_sha256"] == hashlib.sha256(p.read_bytes()).hexdigest()
    entry = manifest["files"]["h_series.csv"]
    assert entry["sha256"] == hashlib.sha256(csv_path.read_bytes()).hexdigest()
    assert entry["bytes"] == len(csv_path.read_bytes())
    assert "plot_series.py" in manifest["files"]


def test_simulate_noise_substeps_key(tmp_path, capsys):
    doc = {
        "output_dir": str(tmp_path / "run"),
        "model": _LINEAR,
        "sim": {"n_particles": 4, "dt": 0.05, "t_end": 0.1,
                "noise_substeps": 2, "surrogate": "exact-mean"},
    }
    p = _write_config(tmp_path, doc)
    assert main(["simulate", "--config", str(p)]) == 0

    doc["sim"]["noise_substeps"] = 0
    doc["output_dir"] = str(tmp_path / "run2")
    p2 = _write_config(tmp_path, doc, name="bad.json")
    assert main(["simulate", "--config", str(p2)]) == 2
    assert "sim.noise_substeps" in capsys.readouterr().err


def test_seed_and_threads_flags_override(tmp_path):
    doc = {"seed": 3, "model": _LINEAR,
           "sim": {"n_particles": 4, "dt": 0.1, "t_end": 0.5,
                   "surrogate": "exact-mean"}}
    p = _write_config(tmp_path, doc)
    out = tmp_path / "o1"
    assert main(["simulate", "--config", str(p), "--out", str(out),
                 "--seed", "42", "--threads", "3"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 42
    assert manifest["seed_overridden"] is True
    assert manifest["threads"] == 3


def test_simulate_divergence_exits_3(tmp_path, capsys):
    doc = {"model": {"kind": "anti-decay", "x_ini": 1.0},
           "sim": {"n_particles": 4, "dt": 0.1, "t_end": 30.0,
                   "state_clip": 1e3}}
    p = _write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(p), "--out", str(out)]) == 3
    assert "numeric failure" in capsys.readouterr().err
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 3


def test_sweep_t_eval_beyond_horizon_exits_2(tmp_path, capsys):
    doc = {"model": _LINEAR,
           "sim": {"dt": 0.1, "t_end": 1.0},
           "sweep": {"N_list": [4, 6, 8, 12], "replicas": 2,
                     "t_eval_list": [0.5, 5.0]}}
    p = _write_config(tmp_path, doc)
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "t_end" in capsys.readouterr().err


def test_sweep_reruns_byte_identical(tmp_path):
    doc = {"seed": 11,
           "model": _LINEAR,
           "sim": {"dt": 0.05, "t_end": 1.0},
           "sweep": {"N_list": [4, 6, 8, 12], "replicas": 24,
                     "t_eval_list": [0.5, 1.0], "reference_multiplier": 2,
                     "budget_replicas": 2}}
    p = _write_config(tmp_path, doc)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["sweep", "--config", str(p), "--out", str(out)]) == 0
        outs.append(out)
    for fname in ("sweep.csv", "fit.json"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    fit = json.loads((outs[0] / "fit.json").read_text())
    assert fit["n_points"] == 4
    assert fit["slope"] < 0.0  # coupling error shrinks with N


def test_verify_passes_on_contracting_model(tmp_path):
    doc = {"model": _NEURAL,
           "verifier": {"n_points": 51, "levels": 2, "n_triples": 20000,
                        "moments": False}}
    p = _write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["verify", "--config", str(p), "--out", str(out)]) == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["passed"] is True
    assert len(cert["levels"]) == 2
    assert cert["levels"][0]["grid"]["n_points"] == 26
    assert cert["levels"][1]["grid"]["n_points"] == 51
    assert (out / "report.txt").exists()


def test_verify_fails_on_repelling_model(tmp_path):
    doc = {"model": {"kind": "anti-decay"},
           "verifier": {"n_points": 41, "levels": 1, "n_triples": 1000,
                        "moments": False}}
    p = _write_config(tmp_path, doc)
    out = tmp_path / "out"
    assert main(["verify", "--config", str(p), "--out", str(out)]) == 4
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["passed"] is False
    statuses = {c["name"]: c["status"] for c in cert["levels"][0]["checks"]}
    assert statuses["convexity-positivity"] == "fail"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 4


def test_verify_levels_must_nest(tmp_path, capsys):
    doc = {"model": _NEURAL,
           "verifier": {"n_points": 52, "levels": 2, "moments": False}}
    p = _write_config(tmp_path, doc)
    assert main(["verify", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "n_points" in capsys.readouterr().err


def test_lemmas_pass_and_negative_control_fails(tmp_path):
    doc = {"model": _LINEAR,
           "lemmas": {"n_cases": 20, "moment_n_list": [100, 1000],
                      "moment_replicas": 2000, "brute_n_max": 10}}
    p = _write_config(tmp_path, doc)

    out_ok = tmp_path / "ok"
    assert main(["lemmas", "--config", str(p), "--out", str(out_ok)]) == 0
    doc_ok = json.loads((out_ok / "lemmas.json").read_text())
    assert doc_ok["passed"] is True
    assert doc_ok["negative_control"] is False
    assert all(c["passed"] for c in doc_ok["checks"])

    out_bad = tmp_path / "bad"
    assert main(["lemmas", "--config", str(p), "--out", str(out_bad),
                 "--negative-control"]) == 4
    doc_bad = json.loads((out_bad / "lemmas.json").read_text())
    assert doc_bad["passed"] is False
    assert doc_bad["negative_control"] is True
    failed = {c["name"] for c in doc_bad["checks"] if not c["passed"]}
    # the wrong normalization exponent shifts every ratio off its predicted
    # 3/n level; that comparison is the check that must catch it
    assert "gaussian-sum-ratio" in failed
    assert "sign-sum-fourth-moment" not in failed
