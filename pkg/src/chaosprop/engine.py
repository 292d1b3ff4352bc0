"""Euler simulation of coupled particle systems with replayable noise.

Coupling layout.  Each replica carries three populations sharing one
noise-stream family:

* particles        x      (N,)  lanes [0, N)
* limit twins      x_bar  (N,)  lanes [0, N)   (same lanes: synchronous coupling)
* reference        s      (M,)  lanes [N, N + M)
* budget twin ref  s'     (M,)  lanes [N + M, N + 2M)   (optional)

The particle and its limit twin integrate against the same Brownian
increments, so their distance is driven by drift differences alone.

Determinism contract.  The Gaussian increment for (seed, step, lane) is
a pure function of those three integers: lane i at step s is word
(i mod 4) of the Philox block with counter (i // 4, 0, s, 0) under key
(seed, 0), mapped through the inverse normal CDF on the top 53 bits.
Replica r of a batch uses seed + r.  Consequences: any replica can be
reproduced in isolation, batch composition and chunking do not affect
values, and a thread pool distributing replicas can only change wall
time, never output.  Reductions over particles use numpy's pairwise
summation in fixed index order.

With noise_substeps = s the draw slot index is s*step + j for
j = 0..s-1 and the step applies the substep sum scaled by 1/sqrt(s);
runs at (dt, s) and (dt/s, 1) then share one driving path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, DivergenceError
from .meanfield import make_surrogate
from .models import MetricSpec, ParticleModel

__all__ = [
    "NoiseStreams",
    "SimConfig",
    "CoupledEnsemble",
    "RunResult",
    "new_ensemble",
    "step",
    "run",
]

_U64 = np.uint64
_TWO64 = 1 << 64


class NoiseStreams:
    """Counter-based standard-normal lanes for one replica.

    standard_normals(step, n) returns lanes 0..n-1 for the given time
    step.  Values never depend on n or on call history, only on
    (seed, step, lane).
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < _TWO64:
            raise ConfigurationError(f"seed must fit in 64 bits, got {seed!r}")
        self.seed = seed

    def standard_normals(self, step: int, n_lanes: int) -> np.ndarray:
        if n_lanes == 0:
            return np.empty(0)
        bg = np.random.Philox(key=np.array([self.seed, 0], dtype=_U64),
                              counter=np.array([0, 0, step, 0], dtype=_U64))
        raw = bg.random_raw(n_lanes)
        # top 53 bits -> open (0, 1) uniform -> inverse CDF; exact and
        # position-independent, one word per lane
        u = ((raw >> _U64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        return ndtri(u)


@dataclass
class SimConfig:
    """Discretization and coupling parameters for one simulation cell.

    n_reference = None resolves to 16 * n_particles for the ensemble
    backend (and 0 for exact-mean, which holds no reference particles).
    The ensemble backend requires n_reference >= n_particles, otherwise
    the reference-measure error would swamp the coupling signal being
    measured.  record_times are snapped to the nearest step of the dt
    grid; t_end must be a whole number of steps.

    noise_substeps = s makes step k consume draw slots [s*k, s*(k+1))
    and apply their scaled sum.  The sum is again a unit normal, so the
    law of the run is unchanged, but a run at (dt, s) integrates the
    same Brownian path as a run at (dt/s, 1): step-size comparisons can
    be pinned to common noise instead of fresh Monte Carlo draws.
    """

    n_particles: int
    n_reference: Optional[int] = None
    dt: float = 0.01
    t_end: float = 10.0
    seed: int = 0
    record_times: tuple = ()
    state_clip: float = 1e6
    surrogate: str = "ensemble"
    noise_substeps: int = 1

    def validate(self) -> "SimConfig":
        if not (isinstance(self.n_particles, (int, np.integer)) and self.n_particles >= 1):
            raise ConfigurationError(f"n_particles must be a positive integer, got {self.n_particles!r}")
        if not (isinstance(self.dt, (int, float)) and 0.0 < self.dt < math.inf):
            raise ConfigurationError(f"dt must be a positive real, got {self.dt!r}")
        if not (isinstance(self.t_end, (int, float)) and 0.0 <= self.t_end < math.inf):
            raise ConfigurationError(f"t_end must be a nonnegative real, got {self.t_end!r}")
        n_steps = int(round(self.t_end / self.dt))
        if abs(n_steps * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ConfigurationError(
                f"t_end = {self.t_end!r} is not a whole number of steps of dt = {self.dt!r}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= int(self.seed) < _TWO64):
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not (isinstance(self.state_clip, (int, float)) and self.state_clip > 0.0):
            raise ConfigurationError(f"state_clip must be positive, got {self.state_clip!r}")
        if self.surrogate not in ("ensemble", "exact-mean"):
            raise ConfigurationError(
                f"surrogate must be 'ensemble' or 'exact-mean', got {self.surrogate!r}")
        if not (isinstance(self.noise_substeps, (int, np.integer))
                and not isinstance(self.noise_substeps, bool)
                and self.noise_substeps >= 1):
            raise ConfigurationError(
                f"noise_substeps must be a positive integer, got {self.noise_substeps!r}")

        if self.surrogate == "exact-mean":
            if self.n_reference not in (None, 0):
                raise ConfigurationError(
                    "n_reference has no meaning with surrogate='exact-mean'; "
                    f"got n_reference = {self.n_reference!r}")
            self.n_reference = 0
        else:
            if self.n_reference is None:
                self.n_reference = 16 * self.n_particles
            if not (isinstance(self.n_reference, (int, np.integer)) and self.n_reference >= self.n_particles):
                raise ConfigurationError(
                    f"ensemble backend needs n_reference >= n_particles, got "
                    f"n_reference = {self.n_reference!r} with n_particles = {self.n_particles!r}")

        times = tuple(float(t) for t in self.record_times)
        tol = 0.5 * self.dt + 1e-12
        for t in times:
            if not (-tol <= t <= self.t_end + tol):
                raise ConfigurationError(
                    f"record time {t!r} lies outside [0, t_end = {self.t_end!r}]")
        if list(times) != sorted(times):
            raise ConfigurationError("record_times must be sorted ascending")
        self.record_times = times
        return self

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def record_steps(self) -> list:
        """Record times snapped to step indices, deduplicated, ascending."""
        steps = sorted({min(max(int(round(t / self.dt)), 0), self.n_steps)
                        for t in self.record_times})
        return steps


@dataclass
class CoupledEnsemble:
    """Mutable state of a batched coupled simulation (single writer).

    x and x_bar are (R, N); the surrogate feeds x_bar's mean-field drift.
    x_bar_twin, when present, is a second limit system on the same
    Brownian lanes fed from an independent reference (budget probe).
    lane_map optionally relabels which noise lane each coupled pair
    reads, for exchangeability checks; the default is the identity.
    """

    model: ParticleModel
    x: np.ndarray
    x_bar: np.ndarray
    surrogate: object
    streams: list
    seeds: np.ndarray
    state_clip: float
    t: float = 0.0
    step_index: int = 0
    x_bar_twin: Optional[np.ndarray] = None
    surrogate_twin: object = None
    lane_map: Optional[np.ndarray] = None
    noise_substeps: int = 1

    @property
    def n_replicas(self) -> int:
        return self.x.shape[0]

    @property
    def n_particles(self) -> int:
        return self.x.shape[1]

    @property
    def lanes_total(self) -> int:
        n = self.n_particles + self.surrogate.lanes
        if self.surrogate_twin is not None:
            n += self.surrogate_twin.lanes
        return n


def new_ensemble(model: ParticleModel, config: SimConfig, seeds=None,
                 budget_twin: bool = False, lane_map=None) -> CoupledEnsemble:
    config.validate()
    if seeds is None:
        seeds = np.array([config.seed], dtype=object)
    seeds = [int(s) % _TWO64 for s in np.atleast_1d(seeds)]
    n_rep = len(seeds)
    shape = (n_rep, config.n_particles)
    x = np.full(shape, model.x_ini, dtype=float)
    x_bar = x.copy()
    surrogate = make_surrogate(model, config.surrogate, n_rep, config.n_reference)
    twin_state = None
    twin = None
    if budget_twin:
        if config.surrogate != "ensemble":
            raise ConfigurationError("budget twin requires the ensemble surrogate")
        twin = make_surrogate(model, config.surrogate, n_rep, config.n_reference)
        twin_state = x.copy()
    if lane_map is not None:
        lane_map = np.asarray(lane_map, dtype=int)
        if sorted(lane_map.tolist()) != list(range(config.n_particles)):
            raise ConfigurationError("lane_map must be a permutation of range(n_particles)")
    return CoupledEnsemble(model=model, x=x, x_bar=x_bar, surrogate=surrogate,
                           streams=[NoiseStreams(s) for s in seeds],
                           seeds=np.array(seeds, dtype=np.uint64),
                           state_clip=config.state_clip,
                           x_bar_twin=twin_state, surrogate_twin=twin,
                           lane_map=lane_map,
                           noise_substeps=config.noise_substeps)


def step(model: ParticleModel, ens: CoupledEnsemble, dt: float) -> CoupledEnsemble:
    """Advance every population one Euler step with shared coupled noise.

    All drifts are evaluated at the pre-step state.  Raises
    DivergenceError as soon as any state goes non-finite or beyond the
    clip radius, identifying the first offender.
    """
    t = ens.t
    n = ens.n_particles
    sqdt = math.sqrt(dt)
    sub = ens.noise_substeps
    if sub == 1:
        z = np.stack([s.standard_normals(ens.step_index, ens.lanes_total)
                      for s in ens.streams])
    else:
        base = ens.step_index * sub
        z = np.stack([sum(s.standard_normals(base + j, ens.lanes_total)
                          for j in range(sub))
                      for s in ens.streams]) / math.sqrt(sub)
    zc = z[:, :n] if ens.lane_map is None else z[:, ens.lane_map]
    dwc = sqdt * zc

    x, xb = ens.x, ens.x_bar
    drift_x = model.b0(t, x) + model.mean_interaction(x, x)
    drift_xb = model.b0(t, xb) + ens.surrogate.bar_drift(xb)
    x_new = x + dt * drift_x + model.b2(x) * dwc
    xb_new = xb + dt * drift_xb + model.b2(xb) * dwc

    lo = n
    hi = n + ens.surrogate.lanes
    ens.surrogate.advance(t, dt, sqdt * z[:, lo:hi])

    if ens.x_bar_twin is not None:
        xt = ens.x_bar_twin
        drift_xt = model.b0(t, xt) + ens.surrogate_twin.bar_drift(xt)
        ens.x_bar_twin = xt + dt * drift_xt + model.b2(xt) * dwc
        ens.surrogate_twin.advance(t, dt, sqdt * z[:, hi:hi + ens.surrogate_twin.lanes])

    ens.x = x_new
    ens.x_bar = xb_new
    ens.step_index += 1
    ens.t = ens.step_index * dt
    _check_states(ens)
    return ens


def _check_states(ens: CoupledEnsemble):
    pops = [("particles", ens.x), ("limit twins", ens.x_bar),
            ("reference", ens.surrogate.state())]
    if ens.x_bar_twin is not None:
        pops += [("twin limit", ens.x_bar_twin), ("twin reference", ens.surrogate_twin.state())]
    clip = ens.state_clip
    for name, arr in pops:
        if arr.size == 0:
            continue
        worst = np.abs(arr).max()
        if not worst <= clip:  # False for NaN as well
            bad = ~(np.abs(arr) <= clip)
            idx = tuple(int(v) for v in np.argwhere(bad)[0])
            replica = idx[0] if arr.ndim > 1 else None
            raise DivergenceError(
                f"{name} state diverged at t = {ens.t:.6g} (step {ens.step_index}): "
                f"value {float(arr[tuple(idx)])!r} at index {idx}",
                t=ens.t, step=ens.step_index, replica=replica,
                index=idx[-1], population=name)


@dataclass
class RunResult:
    """Recorded summaries of a batched run.

    Arrays indexed (record time, replica); snapshot arrays, when kept,
    are (record time, replica, particle).  times holds the actual grid
    times recorded (record_times snapped to the dt grid).
    """

    times: np.ndarray
    sq_mean: np.ndarray
    x_mean: np.ndarray
    x_m2: np.ndarray
    seeds: np.ndarray
    config: SimConfig
    h: Optional[np.ndarray] = None
    f_mean: Optional[np.ndarray] = None
    drift_gap: Optional[np.ndarray] = None
    h_twin: Optional[np.ndarray] = None
    x_snap: Optional[np.ndarray] = None
    x_bar_snap: Optional[np.ndarray] = None
    ref_snap: Optional[np.ndarray] = None
    final: Optional[CoupledEnsemble] = None


class _Recorder:
    def __init__(self, model, metric, budget, snapshots, keep_reference):
        self.model = model
        self.metric = metric
        self.budget = budget
        self.snapshots = snapshots
        self.keep_reference = keep_reference
        self.rows = {k: [] for k in
                     ("t", "sq", "xm", "xm2", "h", "fm", "gap", "htw", "xs", "xbs", "rs")}

    def record(self, ens: CoupledEnsemble):
        r = self.rows
        d = ens.x - ens.x_bar
        r["t"].append(ens.t)
        r["sq"].append(np.mean(d * d, axis=1))
        r["xm"].append(np.mean(ens.x, axis=1))
        r["xm2"].append(np.mean(ens.x * ens.x, axis=1))
        if self.metric is not None:
            m = self.metric
            r["h"].append(np.mean(m.g(ens.x) * m.g(ens.x_bar) * m.f(d), axis=1))
            r["fm"].append(np.mean(m.f(d), axis=1))
        if self.budget:
            gap = ens.surrogate.bar_drift(ens.x_bar) - ens.surrogate_twin.bar_drift(ens.x_bar)
            r["gap"].append(np.mean(np.abs(gap), axis=1))
            dtw = ens.x_bar - ens.x_bar_twin
            if self.metric is not None:
                m = self.metric
                r["htw"].append(np.mean(m.g(ens.x_bar) * m.g(ens.x_bar_twin) * m.f(dtw), axis=1))
            else:
                r["htw"].append(np.mean(dtw * dtw, axis=1))
        if self.snapshots:
            r["xs"].append(ens.x.copy())
            r["xbs"].append(ens.x_bar.copy())
            if self.keep_reference:
                r["rs"].append(np.array(ens.surrogate.state(), dtype=float, copy=True))

    def result(self, ens: CoupledEnsemble, config: SimConfig) -> RunResult:
        r = self.rows

        def stack(key):
            return np.stack(r[key]) if r[key] else None

        return RunResult(
            times=np.asarray(r["t"], dtype=float),
            sq_mean=np.stack(r["sq"]) if r["sq"] else np.empty((0, ens.n_replicas)),
            x_mean=stack("xm") if r["xm"] else np.empty((0, ens.n_replicas)),
            x_m2=stack("xm2") if r["xm2"] else np.empty((0, ens.n_replicas)),
            seeds=ens.seeds.copy(),
            config=config,
            h=stack("h"),
            f_mean=stack("fm"),
            drift_gap=stack("gap"),
            h_twin=stack("htw"),
            x_snap=stack("xs"),
            x_bar_snap=stack("xbs"),
            ref_snap=stack("rs"),
            final=ens,
        )


def run(model: ParticleModel, config: SimConfig, *, metric: Optional[MetricSpec] = None,
        n_replicas: int = 1, seeds=None, budget_twin: bool = False,
        keep_snapshots: bool = False, keep_reference: bool = False,
        lane_map=None) -> RunResult:
    """Run a batch of coupled simulations and collect recorded summaries.

    Replica r uses seed ``config.seed + r`` unless explicit seeds are
    given.  Every recorded statistic is a per-replica scalar; confidence
    intervals belong one level up, over replicas.
    """
    config.validate()
    if seeds is None:
        seeds = [(int(config.seed) + r) % _TWO64 for r in range(n_replicas)]
    ens = new_ensemble(model, config, seeds=seeds, budget_twin=budget_twin,
                       lane_map=lane_map)
    rec = _Recorder(model, metric, budget_twin, keep_snapshots, keep_reference)
    todo = config.record_steps()
    pos = 0
    if pos < len(todo) and todo[pos] == 0:
        rec.record(ens)
        pos += 1
    for k in range(1, config.n_steps + 1):
        step(model, ens, config.dt)
        if pos < len(todo) and todo[pos] == k:
            rec.record(ens)
            pos += 1
    return rec.result(ens, config)
