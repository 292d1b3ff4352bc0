"""Command-line front end: configured simulation, certification, sweeps.

Four subcommands share one JSON config file:

    simulate   one coupled run, time-series summaries to CSV
    verify     assumption certificate at increasing grid refinement
    sweep      system-size sweep with rate fit, uniformity verdicts,
               and a classical-vs-uniform contrast series
    lemmas     self-checks of the combinatorial and ODE lemmas

Every run writes into a fresh output directory (never appends to or
mutates an old one) and finishes with manifest.json recording the config
hash, tool version, timestamps, exit status, and a checksum for every
file produced.  Exit codes: 0 success, 2 configuration error, 3 numeric
failure, 4 certification or lemma failure.

Flags override top-level config scalars only: --seed replaces "seed",
--threads replaces "threads", --out replaces "output_dir".  Unknown or
ill-typed config keys abort with the offending key path named.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__, analysis, engine, verifier
from .errors import (AnalysisError, ChaospropError, ConfigurationError,
                     DivergenceError, NumericError)
from .models import (MetricSpec, ParticleModel, NeuralFieldParams,
                     build_linear_model, build_neural_model, constant_kernel,
                     cosine_kernel, flat_quadratic_metric,
                     sigmoid_weighted_metric, zero_kernel)

__all__ = ["main", "parse_config", "register_model", "ExperimentConfig"]


# --------------------------------------------------------------------------
# strict config parsing


def _expect(block: dict, key: str, path: str, kinds, *, default=None,
            required: bool = False):
    if key not in block:
        if required:
            raise ConfigurationError(f"missing required config key '{path}.{key}'")
        return default
    v = block[key]
    if isinstance(v, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise ConfigurationError(f"config key '{path}.{key}' must not be a boolean")
    if not isinstance(v, kinds):
        raise ConfigurationError(
            f"config key '{path}.{key}' has type {type(v).__name__}, "
            f"expected {kinds if not isinstance(kinds, tuple) else '/'.join(k.__name__ for k in kinds)}")
    return v


def _check_keys(block: dict, allowed, path: str):
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigurationError(
            f"unknown config key '{path}.{unknown[0]}'"
            + (f" (and {len(unknown) - 1} more)" if len(unknown) > 1 else ""))


def _num(block, key, path, *, default=None, required=False, positive=False,
         nonneg=False):
    v = _expect(block, key, path, (int, float), default=default, required=required)
    if v is None:
        return None
    v = float(v)
    if positive and not v > 0.0:
        raise ConfigurationError(f"config key '{path}.{key}' must be > 0, got {v}")
    if nonneg and v < 0.0:
        raise ConfigurationError(f"config key '{path}.{key}' must be >= 0, got {v}")
    return v


def _int(block, key, path, *, default=None, required=False, minimum=None):
    v = _expect(block, key, path, int, default=default, required=required)
    if v is None:
        return None
    if minimum is not None and v < minimum:
        raise ConfigurationError(f"config key '{path}.{key}' must be >= {minimum}, got {v}")
    return int(v)


def _num_list(block, key, path, *, required=False, default=None, integer=False):
    v = _expect(block, key, path, list, default=default, required=required)
    if v is None:
        return None
    out = []
    for i, item in enumerate(v):
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ConfigurationError(f"config key '{path}.{key}[{i}]' must be a number")
        if integer and not isinstance(item, int):
            raise ConfigurationError(f"config key '{path}.{key}[{i}]' must be an integer")
        out.append(int(item) if integer else float(item))
    if not out:
        raise ConfigurationError(f"config key '{path}.{key}' must not be empty")
    return out


# --------------------------------------------------------------------------
# model registry

_MODEL_BUILDERS: dict = {}


def register_model(kind: str,
                   builder: Callable[[dict], "tuple[ParticleModel, MetricSpec]"]):
    """Register a custom model kind usable as config model.kind."""
    if not isinstance(kind, str) or not kind:
        raise ConfigurationError("model kind must be a non-empty string")
    _MODEL_BUILDERS[kind] = builder


def _build_input(block: Optional[dict], path: str):
    if block is None:
        return None
    _check_keys(block, {"kind", "value", "amplitude", "period"}, path)
    kind = _expect(block, "kind", path, str, required=True)
    if kind == "constant":
        value = _num(block, "value", path, required=True)
        return lambda t: value
    if kind == "sine":
        amp = _num(block, "amplitude", path, required=True)
        period = _num(block, "period", path, required=True, positive=True)
        w = 2.0 * math.pi / period
        return lambda t: amp * math.sin(w * t)
    raise ConfigurationError(f"config key '{path}.kind' must be 'constant' or 'sine', got {kind!r}")


def _build_kernel(block: dict, path: str) -> dict:
    _check_keys(block, {"kind", "amplitude", "value"}, path)
    kind = _expect(block, "kind", path, str, required=True)
    if kind == "cosine":
        return cosine_kernel(_num(block, "amplitude", path, required=True))
    if kind == "constant":
        return constant_kernel(_num(block, "value", path, required=True))
    if kind == "zero":
        return zero_kernel()
    raise ConfigurationError(
        f"config key '{path}.kind' must be 'cosine', 'constant' or 'zero', got {kind!r}")


def _build_neural(params: dict):
    path = "model"
    _check_keys(params, {"kind", "tau", "sigma", "half_width", "x_ini",
                         "kernel", "input"}, path)
    kernel = _build_kernel(_expect(params, "kernel", path, dict, required=True),
                           path + ".kernel")
    p = NeuralFieldParams(
        tau=_num(params, "tau", path, required=True, positive=True),
        sigma=_num(params, "sigma", path, required=True, nonneg=True),
        A=_num(params, "half_width", path, required=True, positive=True),
        x_ini=_num(params, "x_ini", path, default=0.0),
        input=_build_input(_expect(params, "input", path, dict), path + ".input"),
        **kernel)
    return build_neural_model(p)


def _build_linear(params: dict):
    path = "model"
    _check_keys(params, {"kind", "theta", "tau", "sigma", "x_ini"}, path)
    model = build_linear_model(
        theta=_num(params, "theta", path, required=True, nonneg=True),
        tau=_num(params, "tau", path, required=True, positive=True),
        sigma=_num(params, "sigma", path, required=True, nonneg=True),
        x_ini=_num(params, "x_ini", path, default=1.0))
    return model, flat_quadratic_metric()


def _build_anti_decay(params: dict):
    """Negative control: repelling drift b0 = +x, no interaction.

    Exists so certification failure paths can be exercised end to end."""
    path = "model"
    _check_keys(params, {"kind", "sigma", "half_width", "x_ini"}, path)
    sigma = _num(params, "sigma", path, default=0.0, nonneg=True)
    half_width = _num(params, "half_width", path, default=3.0, positive=True)
    x_ini = _num(params, "x_ini", path, default=0.0)

    model = ParticleModel(
        b0=lambda t, x: np.asarray(x, dtype=float),
        b1=lambda x, y: np.zeros(np.broadcast_shapes(np.shape(x), np.shape(y))),
        b2=lambda x: np.full(np.shape(x), sigma, dtype=float),
        x_ini=x_ini, lip_b2=0.0, sup_b1=0.0,
        b1_mean=lambda x, support: np.zeros(np.shape(x), dtype=float),
        name="anti-decay")
    return model, sigmoid_weighted_metric(half_width)


register_model("neural", _build_neural)
register_model("linear", _build_linear)
register_model("anti-decay", _build_anti_decay)


def _apply_metric_overrides(metric: MetricSpec, block: Optional[dict]) -> MetricSpec:
    if block is None:
        return metric
    path = "metric"
    _check_keys(block, {"a", "q", "flat", "half_width"}, path)
    a = _int(block, "a", path, default=metric.a, minimum=2)
    q = _int(block, "q", path, default=metric.q, minimum=3)
    flat = _expect(block, "flat", path, bool,
                   default=not math.isfinite(metric.half_width))
    if flat:
        return flat_quadratic_metric(a=a, q=q)
    hw = _num(block, "half_width", path, positive=True,
              default=metric.half_width if math.isfinite(metric.half_width) else None)
    if hw is None:
        raise ConfigurationError(
            "config key 'metric.half_width' is required for a weighted metric "
            "on a model without its own core width")
    return sigmoid_weighted_metric(hw, a=a, q=q)


# --------------------------------------------------------------------------
# experiment config

_TOP_KEYS = {"seed", "threads", "output_dir", "model", "metric", "sim",
             "sweep", "verifier", "lemmas"}


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description."""

    seed: int
    threads: Optional[int]
    output_dir: Optional[str]
    model: ParticleModel
    metric: MetricSpec
    sim: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    verifier: dict = field(default_factory=dict)
    lemmas: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)
    config_sha256: str = ""
    config_path: str = ""


def parse_config(path) -> ExperimentConfig:
    """Read, validate, and resolve a JSON experiment config."""
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {p}: {e}")
    try:
        raw = json.loads(blob)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {p} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "config")

    seed = _int(raw, "seed", "config", default=0, minimum=0)
    if seed >= 2 ** 64:
        raise ConfigurationError("config key 'config.seed' must fit in 64 bits")
    threads = raw.get("threads")
    if threads is not None:
        threads = _int(raw, "threads", "config", minimum=1)
    output_dir = _expect(raw, "output_dir", "config", str)

    model_block = _expect(raw, "model", "config", dict, required=True)
    kind = _expect(model_block, "kind", "model", str, required=True)
    if kind not in _MODEL_BUILDERS:
        raise ConfigurationError(
            f"config key 'model.kind' names unknown model {kind!r}; "
            f"known kinds: {sorted(_MODEL_BUILDERS)}")
    model, metric = _MODEL_BUILDERS[kind](model_block)
    metric = _apply_metric_overrides(metric, _expect(raw, "metric", "config", dict))

    for name in ("sim", "sweep", "verifier", "lemmas"):
        block = _expect(raw, name, "config", dict, default={})
        if name == "sim":
            _check_keys(block, {"n_particles", "n_reference", "dt", "t_end",
                                "record_times", "state_clip", "surrogate",
                                "snapshots", "noise_substeps"}, "sim")
        elif name == "sweep":
            _check_keys(block, {"N_list", "replicas", "t_eval_list", "fit_time",
                                "reference_multiplier", "budget_replicas",
                                "uniformity", "contrast"}, "sweep")
        elif name == "verifier":
            _check_keys(block, {"radius", "n_points", "levels", "diag_epsilon",
                                "n_triples", "tail_threshold", "sample_times",
                                "moments", "moment_replicas"}, "verifier")
        else:
            _check_keys(block, {"n_cases", "ut_seed", "moment_n_list",
                                "moment_replicas", "moment_seed", "brute_n_max"},
                        "lemmas")

    return ExperimentConfig(
        seed=seed, threads=threads, output_dir=output_dir,
        model=model, metric=metric,
        sim=raw.get("sim", {}), sweep=raw.get("sweep", {}),
        verifier=raw.get("verifier", {}), lemmas=raw.get("lemmas", {}),
        raw=raw, config_sha256=hashlib.sha256(blob).hexdigest(),
        config_path=str(p))


def _sim_config(exp: ExperimentConfig, *, record_override=None,
                n_override=None) -> engine.SimConfig:
    b = exp.sim
    n = n_override if n_override is not None else _int(
        b, "n_particles", "sim", required=True, minimum=1)
    record = record_override
    if record is None:
        record = _num_list(b, "record_times", "sim", default=None)
    t_end = _num(b, "t_end", "sim", default=10.0, nonneg=True)
    if record is None:
        record = [t_end]
    cfg = engine.SimConfig(
        n_particles=n,
        n_reference=_int(b, "n_reference", "sim", default=None, minimum=0),
        dt=_num(b, "dt", "sim", default=0.01, positive=True),
        t_end=t_end,
        seed=exp.seed,
        record_times=tuple(record),
        state_clip=_num(b, "state_clip", "sim", default=1e6, positive=True),
        surrogate=_expect(b, "surrogate", "sim", str, default="ensemble"),
        noise_substeps=_int(b, "noise_substeps", "sim", default=1, minimum=1))
    cfg.validate()
    return cfg


# --------------------------------------------------------------------------
# output directory and manifest


class RunOutput:
    """Fresh output directory plus the checksummed file registry."""

    def __init__(self, out_dir: Path):
        out_dir = Path(out_dir)
        if out_dir.exists():
            if not out_dir.is_dir():
                raise ConfigurationError(f"output path {out_dir} exists and is not a directory")
            if any(out_dir.iterdir()):
                raise ConfigurationError(
                    f"output directory {out_dir} is not empty; runs never "
                    "mutate earlier outputs, pick a fresh directory")
        out_dir.mkdir(parents=True, exist_ok=True)
        self.dir = out_dir
        self.files: dict = {}

    def _register(self, name: str):
        data = (self.dir / name).read_bytes()
        self.files[name] = {"sha256": hashlib.sha256(data).hexdigest(),
                            "bytes": len(data)}

    def write_text(self, name: str, text: str):
        (self.dir / name).write_text(text, encoding="utf-8", newline="\n")
        self._register(name)

    def write_json(self, name: str, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True,
                                         default=_json_default) + "\n")

    def write_npz(self, name: str, **arrays):
        np.savez(self.dir / name, **arrays)
        self._register(name)

    def write_manifest(self, command: str, exp: ExperimentConfig, started: str,
                       exit_status: int, threads, seed_override):
        manifest = {
            "command": command,
            "tool": {"name": "chaosprop", "version": __version__},
            "config_path": exp.config_path,
            "config_sha256": exp.config_sha256,
            "seed": exp.seed,
            "seed_overridden": seed_override is not None,
            "threads": threads,
            "started_utc": started,
            "finished_utc": _utc_now(),
            "exit_status": exit_status,
            "files": self.files,
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8", newline="\n")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(exp: ExperimentConfig, out: RunOutput, threads) -> int:
    cfg = _sim_config(exp)
    snapshots = _expect(exp.sim, "snapshots", "sim", bool, default=False)
    res = engine.run(exp.model, cfg, metric=exp.metric, n_replicas=1,
                     keep_snapshots=snapshots)
    lines = ["t,h_mean,f_mean,sq_mean,x_mean,x_m2"]
    for i, t in enumerate(res.times):
        lines.append(",".join(repr(float(v)) for v in
                              (t, res.h[i, 0], res.f_mean[i, 0], res.sq_mean[i, 0],
                               res.x_mean[i, 0], res.x_m2[i, 0])))
    out.write_text("h_series.csv", "\n".join(lines) + "\n")
    if snapshots:
        out.write_npz("snapshots.npz", times=res.times,
                      x=np.asarray(res.x_snap), x_bar=np.asarray(res.x_bar_snap))
    out.write_text("plot_series.py", _PLOT_SERIES)
    print(f"simulate: {len(res.times)} rows -> {out.dir / 'h_series.csv'}")
    return 0


def cmd_verify(exp: ExperimentConfig, out: RunOutput, threads) -> int:
    vb = exp.verifier
    n_points = _int(vb, "n_points", "verifier", default=401, minimum=3)
    levels = _int(vb, "levels", "verifier", default=3, minimum=1)
    radius = _num(vb, "radius", "verifier", positive=True)
    diag_eps = _num(vb, "diag_epsilon", "verifier", positive=True)
    n_triples = _int(vb, "n_triples", "verifier", default=2_000_000, minimum=1)
    tail_threshold = _num(vb, "tail_threshold", "verifier")
    sample_times = _num_list(vb, "sample_times", "verifier", default=[0.0])
    want_moments = _expect(vb, "moments", "verifier", bool, default=True)
    moment_replicas = _int(vb, "moment_replicas", "verifier", default=8, minimum=2)

    if (n_points - 1) % (2 ** (levels - 1)):
        raise ConfigurationError(
            f"config key 'verifier.n_points' minus 1 must be divisible by "
            f"2^(levels-1) = {2 ** (levels - 1)} so refinement grids nest")

    finest = verifier.default_grid(exp.metric, radius=radius,
                                   n_points=n_points, diag_epsilon=diag_eps)
    moments = None
    if want_moments:
        mcfg = engine.SimConfig(
            n_particles=32, n_reference=512, dt=0.01, t_end=20.0, seed=exp.seed,
            record_times=tuple(float(t) for t in range(0, 21, 2)))
        moments = verifier.estimate_moment_bounds(exp.model, exp.metric, mcfg,
                                                  replicas=moment_replicas)

    level_reports = []
    cert = None
    for i in range(levels):
        shrink = 2 ** (levels - 1 - i)
        grid = finest if shrink == 1 else finest.coarsened(shrink)
        k = max(1, n_triples // shrink)
        t0 = time.monotonic()
        cert = verifier.build_certificate(
            exp.model, exp.metric, grid, sample_times=sample_times,
            n_triples=k, triple_seed=exp.seed, tail_threshold=tail_threshold,
            moments=moments)
        elapsed = time.monotonic() - t0
        d = cert.to_dict()
        d["level"] = i + 1
        d["elapsed_s"] = round(elapsed, 3)
        level_reports.append(d)
        print(f"verify: level {i + 1}/{levels} ({grid.n_points} pts, {k} triples) "
              f"in {elapsed:.1f} s: {'PASS' if cert.passed else 'FAIL'}")

    out.write_json("certificate.json", {"levels": level_reports,
                                        "passed": cert.passed})
    lines = [f"assumption certificate: {cert.model_name} / {cert.metric_name}", ""]
    for d in level_reports:
        g = d["grid"]
        lines.append(f"level {d['level']}: {g['n_points']} grid points on "
                     f"[{g['lo']:g}, {g['hi']:g}], {d['n_triples']} triples, "
                     f"{d['elapsed_s']} s")
        for c in d["checks"]:
            lines.append(f"  {c['name']:<24} {c['status']:<18} worst {c['worst']:.9g}")
            if c["witness"]:
                lines.append(f"    witness: {c['witness']}")
        cc = d["constants"]
        lines.append("  constants: " + ", ".join(f"{k}={v:.9g}" for k, v in cc.items()))
        lines.append("")
    lines.append(f"verdict: {'PASS' if cert.passed else 'FAIL'} "
                 f"(margin {cert.margin:.9g})")
    out.write_text("report.txt", "\n".join(lines) + "\n")
    return 0 if cert.passed else 4


def cmd_sweep(exp: ExperimentConfig, out: RunOutput, threads) -> int:
    sb = exp.sweep
    n_list = _num_list(sb, "N_list", "sweep", required=True, integer=True)
    replicas = _int(sb, "replicas", "sweep", default=100, minimum=2)
    t_eval = sorted(_num_list(sb, "t_eval_list", "sweep", required=True))
    fit_time = _num(sb, "fit_time", "sweep", default=t_eval[-1])
    ref_mult = _int(sb, "reference_multiplier", "sweep", default=16, minimum=1)
    budget_replicas = _int(sb, "budget_replicas", "sweep", default=16, minimum=2)

    base = _sim_config(exp, record_override=t_eval, n_override=int(n_list[0]))
    if t_eval[-1] > base.t_end + 1e-9:
        raise ConfigurationError(
            "config key 'sweep.t_eval_list' reaches beyond 'sim.t_end'")

    outcome = analysis.run_sweep(
        exp.model, exp.metric, base, [int(n) for n in n_list], replicas,
        reference_multiplier=ref_mult, budget_replicas=budget_replicas,
        threads=threads,
        progress=lambda msg: print(f"sweep: {msg}", file=sys.stderr))
    result = outcome.result
    out.write_text("sweep.csv", result.to_csv())

    fit = analysis.fit_rate(result, fit_time)
    fit_doc = {"t_eval": fit.t_eval, "slope": fit.slope, "intercept": fit.intercept,
               "r_squared": fit.r_squared, "prefactor": fit.prefactor,
               "n_points": fit.n_points}
    out.write_json("fit.json", fit_doc)

    uni_doc = None
    ub = _expect(sb, "uniformity", "sweep", dict)
    if ub is not None:
        _check_keys(ub, {"t_min", "t_max", "trend_window", "growth_factor"},
                    "sweep.uniformity")
        window = _num_list(ub, "trend_window", "sweep.uniformity", default=None)
        if window is not None and len(window) != 2:
            raise ConfigurationError(
                "config key 'sweep.uniformity.trend_window' must be [t_lo, t_hi]")
        rep = analysis.uniformity_test(
            result,
            t_min=_num(ub, "t_min", "sweep.uniformity", required=True),
            t_max=_num(ub, "t_max", "sweep.uniformity", required=True),
            trend_window=tuple(window) if window else None,
            growth_factor=_num(ub, "growth_factor", "sweep.uniformity",
                               default=2.0, positive=True))
        uni_doc = {"passed": rep.passed,
                   "rows": [{"n_particles": r.n_particles, "base": r.base,
                             "sup": r.sup, "ratio": r.ratio,
                             "trend_slope": r.trend_slope,
                             "trend_ci_low": r.trend_ci_low,
                             "passed": r.passed} for r in rep.rows]}
        out.write_json("uniformity.json", uni_doc)

    contrast_doc = None
    cb = _expect(sb, "contrast", "sweep", dict)
    if cb is not None:
        _check_keys(cb, {"lip", "moment_root"}, "sweep.contrast")
        lip = _num(cb, "lip", "sweep.contrast", required=True, nonneg=True)
        root = _num(cb, "moment_root", "sweep.contrast", required=True, positive=True)
        n_big = max(result.n_values())
        rows = [r for r in result.for_n(n_big) if r.t > 0.0 and r.h_mean > 0.0]
        lines = ["t,h_mean,log10_h,log10_classical_bound,log10_ratio"]
        ln10 = math.log(10.0)
        worst_ratio = math.inf
        for r in rows:
            lb = analysis.log_classical_gronwall_bound(r.t, lip, root)
            l10h = math.log(r.h_mean) / ln10
            l10b = lb / ln10
            worst_ratio = min(worst_ratio, l10b - l10h)
            lines.append(",".join(repr(float(v))
                                  for v in (r.t, r.h_mean, l10h, l10b, l10b - l10h)))
        out.write_text("contrast.csv", "\n".join(lines) + "\n")
        contrast_doc = {"n_particles": n_big, "lip": lip, "moment_root": root,
                        "min_log10_ratio": worst_ratio}

    report = [f"sweep over N = {result.n_values()} with {replicas} replicas",
              f"fit at t = {fit.t_eval}: slope {fit.slope:.4f}, "
              f"r^2 {fit.r_squared:.4f}, prefactor {fit.prefactor:.4g}"]
    for n in result.n_values():
        b = outcome.budgets.get(n)
        if b is None:
            continue
        report.append(f"surrogate budget N={n}: drift gap {b.drift_gap:.3g}, "
                      f"h contribution {b.h_contribution:.3g} "
                      f"({'dominated' if b.budget_dominated else 'subdominant'} "
                      f"at fraction {b.fraction})")
    if uni_doc is not None:
        report.append(f"uniformity: {'PASS' if uni_doc['passed'] else 'FAIL'}")
        for r in uni_doc["rows"]:
            report.append(f"  N={r['n_particles']}: sup/base {r['ratio']:.3f}, "
                          f"late trend slope {r['trend_slope']:.3g} "
                          f"(ci low {r['trend_ci_low']:.3g})")
    if contrast_doc is not None:
        report.append(f"contrast vs classical bound (N={contrast_doc['n_particles']}): "
                      f"min log10 ratio {contrast_doc['min_log10_ratio']:.2f}")
    out.write_text("report.txt", "\n".join(report) + "\n")
    out.write_text("plot_sweep.py", _PLOT_SWEEP)
    print("\n".join(report))
    return 0


def cmd_lemmas(exp: ExperimentConfig, out: RunOutput, threads,
               negative_control: bool = False) -> int:
    lb = exp.lemmas
    n_cases = _int(lb, "n_cases", "lemmas", default=100, minimum=1)
    ut_seed = _int(lb, "ut_seed", "lemmas", default=20260819, minimum=0)
    n_list = _num_list(lb, "moment_n_list", "lemmas", default=[100, 1000, 10000],
                       integer=True)
    replicas = _int(lb, "moment_replicas", "lemmas", default=4000, minimum=100)
    mseed = _int(lb, "moment_seed", "lemmas", default=7, minimum=0)
    brute_max = _int(lb, "brute_n_max", "lemmas", default=16, minimum=2)
    q = 4

    checks = []

    # exact fourth-moment identity on sign sums, by enumeration
    brute_ok = True
    for n in range(1, brute_max + 1):
        if analysis.rademacher_moment_brute(n, q) != analysis.rademacher_exact_fourth(n):
            brute_ok = False
            break
    val10 = analysis.rademacher_moment_brute(10, q) if brute_max >= 10 else None
    checks.append({"name": "sign-sum-fourth-moment", "passed": brute_ok,
                   "detail": f"enumerated n <= {brute_max}; n=10 value "
                             f"{val10} (closed form {analysis.rademacher_exact_fourth(10)})"})

    # Gaussian growth: estimates near 3 n^2, normalized ratios near 3/n
    expo = q if negative_control else q - 1
    rows = analysis.moment_sum_check(analysis.gaussian_sampler, q,
                                     [int(n) for n in n_list], replicas=replicas,
                                     seed=mseed, scaling_exponent=expo)
    level_ok = all(abs(r.estimate - 3.0 * r.n ** 2) <= 4.0 * r.ci for r in rows)
    ratio_ok = all(abs(r.ratio - 3.0 / r.n) <= 4.0 * r.ci / r.n ** (q - 1)
                   for r in rows)
    decay_ok = rows[-1].ratio <= 0.15 * rows[0].ratio
    checks.append({"name": "gaussian-sum-level", "passed": bool(level_ok),
                   "detail": "estimates vs 3 n^2: " +
                             ", ".join(f"n={r.n}: {r.estimate:.4g}" for r in rows)})
    checks.append({"name": "gaussian-sum-ratio", "passed": bool(ratio_ok),
                   "detail": f"normalization exponent {expo}; ratios " +
                             ", ".join(f"{r.ratio:.4g}" for r in rows) +
                             " vs predicted " +
                             ", ".join(f"{3.0 / r.n:.4g}" for r in rows)})
    checks.append({"name": "gaussian-sum-decay", "passed": bool(decay_ok),
                   "detail": f"ratio({rows[-1].n}) / ratio({rows[0].n}) = "
                             f"{rows[-1].ratio / rows[0].ratio:.4g} (need <= 0.15)"})

    # self-bounding ODE: random suite never exceeds the fixed-point level
    suite = analysis.ut_random_suite(n_cases=n_cases, seed=ut_seed)
    checks.append({"name": "ode-fixed-point-cap", "passed": suite.passed,
                   "detail": f"{n_cases} random (c, forcing, a, u0) cases, "
                             f"max overshoot tolerance {suite.sup_tol}"})

    passed = all(c["passed"] for c in checks)
    doc = {"passed": passed, "negative_control": negative_control,
           "normalization_exponent": expo, "checks": checks,
           "moment_rows": [{"n": r.n, "estimate": r.estimate, "ci": r.ci,
                            "ratio": r.ratio, "exponent": r.exponent}
                           for r in rows]}
    out.write_json("lemmas.json", doc)
    lines = ["lemma self-checks" +
             (" [negative control: faulty normalization exponent q-0, "
              "failure expected]" if negative_control else "")]
    for c in checks:
        lines.append(f"  {c['name']:<26} {'PASS' if c['passed'] else 'FAIL'}  {c['detail']}")
    lines.append(f"overall: {'PASS' if passed else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    out.write_text("report.txt", text)
    print(text, end="")
    return 0 if passed else 4


# --------------------------------------------------------------------------
# emitted plot scripts

_PLOT_SERIES = '''#!/usr/bin/env python3
"""Plot the h time series written next to this script."""
import csv
from pathlib import Path

import matplotlib.pyplot as plt

rows = list(csv.DictReader((Path(__file__).parent / "h_series.csv").open()))
t = [float(r["t"]) for r in rows]
for key in ("h_mean", "sq_mean"):
    plt.plot(t, [float(r[key]) for r in rows], label=key)
plt.xlabel("t")
plt.yscale("log")
plt.legend()
plt.tight_layout()
plt.savefig(Path(__file__).parent / "series.png", dpi=150)
print("wrote series.png")
'''

_PLOT_SWEEP = '''#!/usr/bin/env python3
"""Plot sweep outputs written next to this script."""
import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib.pyplot as plt

here = Path(__file__).parent
rows = list(csv.DictReader((here / "sweep.csv").open()))
fit = json.loads((here / "fit.json").read_text())

by_t = defaultdict(list)
by_n = defaultdict(list)
for r in rows:
    by_t[float(r["t"])].append((int(r["N"]), float(r["h_mean"])))
    by_n[int(r["N"])].append((float(r["t"]), float(r["h_mean"])))

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
pts = sorted(by_t[fit["t_eval"]])
ax1.loglog([n for n, _ in pts], [h for _, h in pts], "o", label="measured")
ax1.loglog([n for n, _ in pts],
           [fit["prefactor"] * n ** fit["slope"] for n, _ in pts],
           "--", label=f"fit slope {fit['slope']:.3f}")
ax1.set_xlabel("N")
ax1.set_ylabel("mean weighted distance")
ax1.legend()
for n, series in sorted(by_n.items()):
    series.sort()
    ax2.semilogy([t for t, _ in series], [h for _, h in series], label=f"N={n}")
ax2.set_xlabel("t")
ax2.legend(fontsize=7)
fig.tight_layout()
fig.savefig(here / "sweep.png", dpi=150)
print("wrote sweep.png")
'''


# --------------------------------------------------------------------------
# entry point

_COMMANDS = {"simulate": cmd_simulate, "verify": cmd_verify,
             "sweep": cmd_sweep, "lemmas": cmd_lemmas}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="chaosprop",
        description="coupling experiments for interacting particle diffusions")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default=None, help="output directory (fresh)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for sweeps")
    parser.add_argument("--negative-control", action="store_true",
                        help="lemmas only: inject the faulty normalization "
                             "exponent q-0 and expect failure")
    args = parser.parse_args(argv)

    try:
        exp = parse_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            exp.seed = args.seed
        threads = args.threads if args.threads is not None else exp.threads
        out_path = args.out or exp.output_dir
        if out_path is None:
            raise ConfigurationError("no output directory: set config "
                                     "'output_dir' or pass --out")
        out = RunOutput(Path(out_path))
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2

    started = _utc_now()
    try:
        if args.command == "lemmas":
            status = cmd_lemmas(exp, out, threads,
                                negative_control=args.negative_control)
        else:
            status = _COMMANDS[args.command](exp, out, threads)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        status = 2
    except (DivergenceError, NumericError, AnalysisError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        status = 3
    except ChaospropError as e:
        print(f"error: {e}", file=sys.stderr)
        status = 1
    out.write_manifest(args.command, exp, started, status, threads, args.seed)
    return status


if __name__ == "__main__":
    sys.exit(main())
