"""Reference-measure surrogates and the substitution error budget."""

import math

import numpy as np
import pytest

from chaosprop.engine import SimConfig
from chaosprop.errors import ConfigurationError, NumericError
from chaosprop.meanfield import (EmpiricalMeasure, EnsembleSurrogate,
                                 ExactMeanSurrogate, bar_b1, make_surrogate,
                                 surrogate_error_budget)
from chaosprop.models import (NeuralFieldParams, ParticleModel,
                              build_linear_model, build_neural_model,
                              cosine_kernel)


def _neural(sigma=0.3):
    p = NeuralFieldParams(tau=1.0, sigma=sigma, A=3.0, **cosine_kernel(0.2))
    return build_neural_model(p)


def test_empirical_measure_basics():
    m = EmpiricalMeasure(np.array([1.0, 2.0, 3.0]))
    assert m.size == 3
    assert m.mean() == 2.0
    assert m.moment(2) == pytest.approx((1 + 4 + 9) / 3)
    with pytest.raises(ConfigurationError):
        EmpiricalMeasure(np.array([]))
    with pytest.raises(ConfigurationError):
        EmpiricalMeasure(np.array([1.0, np.nan]))
    with pytest.raises(ConfigurationError):
        EmpiricalMeasure(np.ones((2, 2)))


def test_bar_b1_matches_direct_average():
    model, _ = _neural()
    rng = np.random.default_rng(4)
    support = rng.uniform(-2, 2, size=500)
    mu = EmpiricalMeasure(support)
    x = np.array([-1.0, 0.0, 2.5])
    want = model.mean_interaction(x, support)
    np.testing.assert_allclose(bar_b1(model, x, mu), want, rtol=1e-14)


def test_bar_b1_enforces_declared_bound():
    # a model lying about sup_b1 is caught at evaluation time
    model = ParticleModel(b0=lambda t, x: -x,
                          b1=lambda x, y: 5.0 * np.ones(np.broadcast_shapes(
                              np.shape(x), np.shape(y))),
                          b2=lambda x: np.zeros(np.shape(x)),
                          x_ini=0.0, lip_b2=0.0, sup_b1=1.0)
    mu = EmpiricalMeasure(np.zeros(4))
    with pytest.raises(NumericError):
        bar_b1(model, np.array([0.0]), mu)


def test_make_surrogate_dispatch():
    model, _ = _neural()
    s = make_surrogate(model, "ensemble", n_replicas=2, size=8)
    assert isinstance(s, EnsembleSurrogate)
    assert s.support.shape == (2, 8)
    assert s.lanes == 8
    lin = build_linear_model(theta=0.5, tau=1.0, sigma=0.5)
    e = make_surrogate(lin, "exact-mean", n_replicas=3, size=0)
    assert isinstance(e, ExactMeanSurrogate)
    assert e.lanes == 0
    with pytest.raises(ConfigurationError):
        make_surrogate(model, "exact-mean", n_replicas=2, size=0)  # no closed mean
    with pytest.raises(ConfigurationError):
        make_surrogate(model, "other", n_replicas=2, size=8)


def test_exact_mean_surrogate_tracks_recursion():
    lin = build_linear_model(theta=0.5, tau=2.0, sigma=0.5)
    s = make_surrogate(lin, "exact-mean", n_replicas=2, size=0)
    dt = 0.01
    m = float(lin.x_ini)
    for k in range(100):
        s.advance(k * dt, dt, None)
        m *= 1.0 - dt / 2.0
    np.testing.assert_allclose(s.mean, np.full(2, m), rtol=1e-14)
    # bar drift evaluates the kernel at the tracked mean
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(s.bar_drift(x), 0.5 * (m - x), rtol=1e-13)


def test_ensemble_surrogate_approaches_exact_mean():
    lin = build_linear_model(theta=0.5, tau=1.0, sigma=0.5)
    cfg_kwargs = dict(n_particles=8, dt=0.01, t_end=2.0, seed=6,
                      record_times=(2.0,))
    from chaosprop.engine import run
    res_a = run(lin, SimConfig(n_reference=4096, **cfg_kwargs), n_replicas=4,
                keep_snapshots=True, keep_reference=True)
    res_b = run(lin, SimConfig(surrogate="exact-mean", **cfg_kwargs), n_replicas=4)
    ref_mean = np.asarray(res_a.ref_snap)[0].mean(axis=1)
    # the big ensemble's mean should sit close to the deterministic mean
    m = lin.x_ini * (1.0 - 0.01) ** 200
    np.testing.assert_allclose(ref_mean, np.full(4, m), atol=4 * 0.5 / math.sqrt(4096))
    np.testing.assert_allclose(res_b.x_mean[0], res_a.x_mean[0], atol=0.05)


def test_budget_scales_with_reference_size():
    model, metric = _neural()
    base = dict(n_particles=8, dt=0.01, t_end=1.0, seed=12,
                record_times=(0.5, 1.0))
    small = surrogate_error_budget(model, metric,
                                   SimConfig(n_reference=64, **base),
                                   n_replicas=24)
    large = surrogate_error_budget(model, metric,
                                   SimConfig(n_reference=1024, **base),
                                   n_replicas=24)
    assert small.drift_gap > 0.0 and large.drift_gap > 0.0
    # drift gap shrinks like M^(-1/2); quadrupling M twice gives 1/4
    ratio = large.drift_gap / small.drift_gap
    assert 0.12 < ratio < 0.5
    assert large.h_contribution <= small.h_contribution * 1.5


def test_budget_flags_small_reference():
    model, metric = _neural()
    cfg = SimConfig(n_particles=16, n_reference=16, dt=0.01, t_end=1.0,
                    seed=1, record_times=(0.5, 1.0))
    bud = surrogate_error_budget(model, metric, cfg, n_replicas=16)
    # reference as small as the system leaves a comparable twin gap
    assert bud.budget_dominated
    assert bud.fraction == 0.1
    assert bud.h_contribution > 0.1 * bud.h_reference
    np.testing.assert_allclose(bud.times, [0.5, 1.0])


def test_budget_requires_ensemble_backend():
    lin = build_linear_model(theta=0.5, tau=1.0, sigma=0.5)
    cfg = SimConfig(n_particles=8, dt=0.01, t_end=1.0, seed=0,
                    record_times=(1.0,), surrogate="exact-mean")
    _, metric = _neural()
    with pytest.raises(ConfigurationError):
        surrogate_error_budget(lin, metric, cfg, n_replicas=4)
