"""Empirical measures and surrogates for the mean-field drift.

The limit dynamics replace the ensemble average (1/N) sum_k b1(x, X^k)
with an integral of b1(x, .) against the limit law, which is not
available in closed form for general models.  Two computable stand-ins
are provided:

* ``EnsembleSurrogate`` evolves an auxiliary reference ensemble of M
  independent particles with its own noise and reads the drift off its
  empirical measure.  The substitution error decays like M**-0.5 in
  drift units, so M should be a comfortable multiple of N if the
  coupling experiment is not to be dominated by it.

* ``ExactMeanSurrogate`` advances the Euler-discretized mean of the
  limit law by a deterministic recursion supplied by the model.  For
  models whose interaction is linear in the second argument this is not
  an approximation at all, which makes it the right backend for oracle
  comparisons.

``surrogate_error_budget`` quantifies the substitution error of the
ensemble backend empirically, in both drift units and units of the
coupling functional h, by running twin limit systems fed from
independent reference ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .errors import ConfigurationError, NumericError
from .models import MetricSpec, ParticleModel

__all__ = [
    "EmpiricalMeasure",
    "bar_b1",
    "EnsembleSurrogate",
    "ExactMeanSurrogate",
    "make_surrogate",
    "SurrogateBudget",
    "surrogate_error_budget",
]


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform probability measure on a finite support of scalar states."""

    support: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim != 1 or support.size == 0:
            raise ConfigurationError("EmpiricalMeasure needs a nonempty 1-D support")
        if not np.all(np.isfinite(support)):
            raise ConfigurationError("EmpiricalMeasure support must be finite")
        object.__setattr__(self, "support", support)

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def mean(self) -> float:
        return float(np.mean(self.support))

    def moment(self, p: float) -> float:
        """Raw absolute moment (1/M) sum |s_k|^p."""
        return float(np.mean(np.abs(self.support) ** p))


def bar_b1(model: ParticleModel, x, measure: EmpiricalMeasure):
    """Mean-field drift against an empirical measure.

    Returns (1/M) sum_k b1(x, s_k), elementwise in x.  The result is
    checked against the model's uniform interaction bound; exceeding it
    means the model metadata is wrong and downstream verification would
    be unsound.
    """
    out = model.mean_interaction(x, measure.support)
    if math.isfinite(model.sup_b1):
        worst = float(np.max(np.abs(out))) if np.size(out) else 0.0
        if worst > model.sup_b1 * (1.0 + 1e-12) + 1e-300:
            raise NumericError(
                f"mean interaction reached {worst:.6g}, above the declared "
                f"uniform bound sup_b1 = {model.sup_b1:.6g}")
    return out


class EnsembleSurrogate:
    """Reference ensemble backend for the limit drift.

    Holds an (R, M) array of reference particles, one independent
    M-particle system per replica, all started from the model's common
    initial condition.  ``bar_drift`` reads the mean-field drift off the
    current empirical measure row by row; ``advance`` moves the reference
    system itself one Euler step using noise lanes reserved for it by the
    engine.
    """

    backend = "ensemble"

    def __init__(self, model: ParticleModel, n_replicas: int, size: int):
        if size < 1:
            raise ConfigurationError("ensemble surrogate needs at least one reference particle")
        self.model = model
        self.support = np.full((n_replicas, size), model.x_ini, dtype=float)

    @property
    def lanes(self) -> int:
        return self.support.shape[1]

    def bar_drift(self, x):
        return self.model.mean_interaction(x, self.support)

    def advance(self, t: float, dt: float, dw):
        s = self.support
        drift = self.model.b0(t, s) + self.model.mean_interaction(s, s)
        self.support = s + dt * drift + self.model.b2(s) * dw

    def state(self):
        return self.support

    def measures(self):
        """Snapshot the per-replica empirical measures (copies)."""
        return [EmpiricalMeasure(row.copy()) for row in self.support]


class ExactMeanSurrogate:
    """Deterministic mean-recursion backend (no reference particles).

    Requires the model to supply ``exact_mean_step``.  The surrogate
    drift at x is b1(x, m) with m the recursively advanced limit mean;
    for interactions linear in the second argument this equals the true
    mean-field drift of the Euler-discretized limit system exactly.
    """

    backend = "exact-mean"
    lanes = 0

    def __init__(self, model: ParticleModel, n_replicas: int):
        if model.exact_mean_step is None:
            raise ConfigurationError(
                f"model {model.name!r} provides no exact_mean_step; "
                "the exact-mean surrogate only applies to models that do")
        self.model = model
        self.mean = np.full(n_replicas, model.x_ini, dtype=float)

    def bar_drift(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2:
            raise ConfigurationError("exact-mean surrogate expects an (R, N) state array")
        return self.model.b1(x, self.mean[:, None])

    def advance(self, t: float, dt: float, dw):
        self.mean = self.model.exact_mean_step(self.mean, dt)

    def state(self):
        return self.mean

    def measures(self):
        return [EmpiricalMeasure(np.array([m])) for m in self.mean]


def make_surrogate(model: ParticleModel, backend: str, n_replicas: int, size: int):
    if backend == "ensemble":
        return EnsembleSurrogate(model, n_replicas, size)
    if backend == "exact-mean":
        return ExactMeanSurrogate(model, n_replicas)
    raise ConfigurationError(
        f"unknown surrogate backend {backend!r}; expected 'ensemble' or 'exact-mean'")


@dataclass(frozen=True)
class SurrogateBudget:
    """Empirical size of the reference-measure substitution error.

    drift_gap is the mean absolute difference between the mean-field
    drifts read from two independent reference ensembles, evaluated
    along the coupled limit trajectory (drift units, decays like
    M**-0.5).  h_contribution converts the same substitution error into
    units of the coupling functional: twin limit systems driven by the
    shared Brownian lanes but fed from independent references differ
    only through two independent copies of the surrogate error, so half
    their mean h-distance estimates the one-sided contribution to any
    measured E[h].  budget_dominated flags h_contribution exceeding the
    given fraction of the measured E[h] at the same times.
    """

    drift_gap: float
    drift_gap_ci: float
    h_contribution: float
    h_contribution_ci: float
    h_reference: float
    budget_dominated: bool
    fraction: float
    times: np.ndarray
    drift_gap_t: np.ndarray
    h_contribution_t: np.ndarray
    n_replicas: int


def surrogate_error_budget(model: ParticleModel, metric: MetricSpec, config,
                           n_replicas: int = 16, fraction: float = 0.1,
                           seed_offset: int = 10_000_000) -> SurrogateBudget:
    """Measure the reference-ensemble substitution error for a config.

    Runs ``n_replicas`` coupled simulations with a budget twin attached
    and averages over the recorded times after the initial transient
    (t > 0).  Budget replicas are seeded away from the config's base
    seed so the budget run never reuses the estimate's noise.
    """
    from . import engine  # late import; the engine drives surrogates

    if config.surrogate != "ensemble":
        raise ConfigurationError("surrogate_error_budget applies to the ensemble backend only")
    if n_replicas < 2:
        raise ConfigurationError("budget estimation needs at least 2 replicas")
    cfg = dc_replace(config)  # keep the caller's instance unchanged by validation
    seeds = [(int(config.seed) + seed_offset + r) % (1 << 64) for r in range(n_replicas)]
    res = engine.run(model, cfg, metric=metric, n_replicas=n_replicas,
                     seeds=seeds, budget_twin=True)

    keep = res.times > 0.0
    if not np.any(keep):
        raise ConfigurationError("budget estimation needs at least one record time > 0")

    def stat(series):
        # series (T, R): average kept times per replica, then CI over replicas
        per_rep = series[keep].mean(axis=0)
        mean = float(per_rep.mean())
        ci = 1.96 * float(per_rep.std(ddof=1)) / math.sqrt(n_replicas)
        return mean, ci

    gap_mean, gap_ci = stat(res.drift_gap)
    half_twin = 0.5 * res.h_twin
    h_contrib, h_contrib_ci = stat(half_twin)
    h_ref, _ = stat(res.h)

    return SurrogateBudget(
        drift_gap=gap_mean,
        drift_gap_ci=gap_ci,
        h_contribution=h_contrib,
        h_contribution_ci=h_contrib_ci,
        h_reference=h_ref,
        budget_dominated=bool(h_contrib > fraction * h_ref),
        fraction=fraction,
        times=res.times.copy(),
        drift_gap_t=res.drift_gap[:, :].mean(axis=1),
        h_contribution_t=half_twin.mean(axis=1),
        n_replicas=n_replicas,
    )
