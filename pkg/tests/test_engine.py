"""Noise purity, stepper exactness, determinism, and guard rails."""

import math

import numpy as np
import pytest

from chaosprop.engine import NoiseStreams, SimConfig, new_ensemble, run, step
from chaosprop.errors import ConfigurationError, DivergenceError
from chaosprop.models import (NeuralFieldParams, ParticleModel,
                              build_linear_model, build_neural_model,
                              cosine_kernel)


def _linear(theta=0.5, tau=1.0, sigma=0.5):
    return build_linear_model(theta=theta, tau=tau, sigma=sigma)


# ---------------------------------------------------------------------------
# noise streams


def test_noise_is_pure_in_seed_step_lane():
    ns = NoiseStreams(42)
    a = ns.standard_normals(7, 64)
    b = ns.standard_normals(7, 64)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, ns.standard_normals(8, 64))
    assert not np.array_equal(a, NoiseStreams(43).standard_normals(7, 64))


def test_noise_lane_prefix_invariance():
    # lane i's value must not depend on how many lanes are generated
    ns = NoiseStreams(9)
    wide = ns.standard_normals(3, 1000)
    for n in (1, 5, 64, 999):
        np.testing.assert_array_equal(ns.standard_normals(3, n), wide[:n])


def test_noise_statistics():
    z = NoiseStreams(123).standard_normals(0, 1_000_000)
    assert abs(z.mean()) < 5e-3
    assert abs(z.var() - 1.0) < 6e-3
    # standard normal tail mass beyond 1.96 is 5%
    assert abs(np.mean(np.abs(z) > 1.96) - 0.05) < 2e-3
    # neighbouring lanes are uncorrelated
    assert abs(np.corrcoef(z[:-1], z[1:])[0, 1]) < 4e-3


def test_noise_seed_validation():
    with pytest.raises(ConfigurationError):
        NoiseStreams(-1)
    with pytest.raises(ConfigurationError):
        NoiseStreams(1 << 64)
    NoiseStreams((1 << 64) - 1)  # top of the range is fine


# ---------------------------------------------------------------------------
# config validation


def test_config_validation_errors():
    ok = dict(n_particles=4, dt=0.01, t_end=1.0, seed=0, record_times=(1.0,))
    SimConfig(**ok).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "n_particles": 0}).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "dt": 0.0}).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "t_end": 0.015}).validate()  # not a step multiple
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "record_times": (2.0,)}).validate()  # beyond t_end
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "state_clip": 0.0}).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "surrogate": "other"}).validate()
    with pytest.raises(ConfigurationError):
        SimConfig(**{**ok, "seed": -1}).validate()


def test_config_reference_rules():
    cfg = SimConfig(n_particles=8, dt=0.01, t_end=0.5, record_times=(0.5,))
    cfg.validate()
    assert cfg.n_reference == 16 * 8  # default multiplier
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=8, n_reference=4, dt=0.01, t_end=0.5,
                  record_times=(0.5,)).validate()  # fewer refs than particles
    # the deterministic-mean surrogate carries no reference lanes
    c2 = SimConfig(n_particles=8, dt=0.01, t_end=0.5, record_times=(0.5,),
                   surrogate="exact-mean")
    c2.validate()
    assert c2.n_reference == 0
    with pytest.raises(ConfigurationError):
        SimConfig(n_particles=8, n_reference=64, dt=0.01, t_end=0.5,
                  record_times=(0.5,), surrogate="exact-mean").validate()


def test_zero_horizon_run():
    model = _linear()
    cfg = SimConfig(n_particles=4, dt=0.01, t_end=0.0, seed=1,
                    record_times=(0.0,), surrogate="exact-mean")
    res = run(model, cfg, metric=None, n_replicas=2)
    assert res.times.tolist() == [0.0]
    assert np.all(res.sq_mean == 0.0)


def test_exact_mean_needs_model_support():
    p = NeuralFieldParams(tau=1.0, sigma=0.3, A=3.0, **cosine_kernel(0.2))
    model, _ = build_neural_model(p)
    cfg = SimConfig(n_particles=4, dt=0.01, t_end=0.1, record_times=(0.1,),
                    surrogate="exact-mean")
    with pytest.raises(ConfigurationError):
        run(model, cfg, n_replicas=1)


# ---------------------------------------------------------------------------
# stepper exactness and purity


def test_first_step_matches_hand_computation():
    model = _linear(theta=0.5, tau=2.0, sigma=0.3)
    n, m = 6, 12
    cfg = SimConfig(n_particles=n, n_reference=m, dt=0.01, t_end=0.1, seed=77,
                    record_times=(0.1,))
    cfg.validate()
    ens = new_ensemble(model, cfg, seeds=[77])
    step(model, ens, cfg.dt)
    z = NoiseStreams(77).standard_normals(0, n + m)
    # everyone starts at x_ini, so every interaction mean is zero
    want = model.x_ini * (1.0 - cfg.dt / 2.0) + 0.3 * z[:n] * math.sqrt(cfg.dt)
    np.testing.assert_array_equal(ens.x[0], want)
    np.testing.assert_array_equal(ens.x_bar[0], want)  # same lanes, same drift
    want_ref = model.x_ini * (1.0 - cfg.dt / 2.0) + 0.3 * z[n:] * math.sqrt(cfg.dt)
    np.testing.assert_array_equal(ens.surrogate.support[0], want_ref)


def test_replica_rows_match_standalone_runs():
    p = NeuralFieldParams(tau=1.0, sigma=0.3, A=3.0, **cosine_kernel(0.2))
    model, metric = build_neural_model(p)
    cfg = SimConfig(n_particles=8, n_reference=16, dt=0.01, t_end=0.5, seed=5,
                    record_times=(0.25, 0.5))
    batch = run(model, cfg, metric=metric, n_replicas=3, keep_snapshots=True)
    for r in range(3):
        solo = run(model, cfg, metric=metric, seeds=[5 + r], n_replicas=1,
                   keep_snapshots=True)
        np.testing.assert_array_equal(batch.h[:, r], solo.h[:, 0])
        np.testing.assert_array_equal(np.asarray(batch.x_snap)[:, r],
                                      np.asarray(solo.x_snap)[:, 0])


def test_rerun_is_bitwise_identical():
    model = _linear()
    cfg = SimConfig(n_particles=16, n_reference=32, dt=0.01, t_end=1.0, seed=3,
                    record_times=(0.5, 1.0))
    a = run(model, cfg, n_replicas=2)
    b = run(model, cfg, n_replicas=2)
    np.testing.assert_array_equal(a.sq_mean, b.sq_mean)
    np.testing.assert_array_equal(a.x_mean, b.x_mean)


def test_row_count_equals_record_times():
    model = _linear()
    times = (0.0, 0.35, 0.7)
    cfg = SimConfig(n_particles=4, n_reference=8, dt=0.01, t_end=0.7, seed=0,
                    record_times=times)
    res = run(model, cfg, metric=None, n_replicas=1)
    assert res.sq_mean.shape == (3, 1)
    np.testing.assert_allclose(res.times, times)


def test_noise_permutation_permutes_trajectories():
    # reassigning noise lanes permutes particle paths (up to summation
    # order in the empirical mean), because the coupled field is symmetric
    p = NeuralFieldParams(tau=1.0, sigma=0.3, A=3.0, **cosine_kernel(0.2))
    model, metric = build_neural_model(p)
    n = 8
    cfg = SimConfig(n_particles=n, n_reference=16, dt=0.01, t_end=1.0, seed=11,
                    record_times=(1.0,))
    perm = np.array([3, 1, 4, 0, 7, 6, 2, 5])
    a = run(model, cfg, metric=metric, n_replicas=1, keep_snapshots=True)
    b = run(model, cfg, metric=metric, n_replicas=1, keep_snapshots=True,
            lane_map=perm)
    xa = np.asarray(a.x_snap)[0, 0]
    xb = np.asarray(b.x_snap)[0, 0]
    np.testing.assert_allclose(xb, xa[perm], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(b.h[0, 0], a.h[0, 0], rtol=1e-10)


def test_lane_map_must_be_permutation():
    model = _linear()
    cfg = SimConfig(n_particles=4, n_reference=8, dt=0.01, t_end=0.1, seed=0,
                    record_times=(0.1,))
    with pytest.raises(ConfigurationError):
        run(model, cfg, n_replicas=1, lane_map=np.array([0, 1, 2, 2]))


def test_noise_substeps_validation():
    ok = dict(n_particles=4, dt=0.01, t_end=1.0, seed=0, record_times=(1.0,))
    SimConfig(**{**ok, "noise_substeps": 3}).validate()
    for bad in (0, -1, 1.5, True):
        with pytest.raises(ConfigurationError):
            SimConfig(**{**ok, "noise_substeps": bad}).validate()


def test_noise_substeps_share_brownian_path():
    # without drift both discretizations apply the same increments, so
    # the (dt, 2) and (dt/2, 1) runs land on the same states
    model = ParticleModel(b0=lambda t, x: np.zeros(np.shape(x)),
                          b1=lambda x, y: np.zeros(np.broadcast_shapes(
                              np.shape(x), np.shape(y))),
                          b2=lambda x: np.ones(np.shape(x)),
                          x_ini=0.0, lip_b2=0.0, sup_b1=0.0,
                          b1_mean=lambda x, s: np.zeros(np.shape(x)))
    coarse = SimConfig(n_particles=8, n_reference=8, dt=0.2, t_end=1.0,
                       seed=13, record_times=(1.0,), noise_substeps=2)
    fine = SimConfig(n_particles=8, n_reference=8, dt=0.1, t_end=1.0,
                     seed=13, record_times=(1.0,))
    a = run(model, coarse, n_replicas=2, keep_snapshots=True)
    b = run(model, fine, n_replicas=2, keep_snapshots=True)
    np.testing.assert_allclose(np.asarray(a.x_snap), np.asarray(b.x_snap),
                               rtol=0.0, atol=1e-12)


def test_noise_substeps_pin_refinement_to_common_noise():
    # with drift the coupled runs differ only through the Euler bias,
    # far below the replica-to-replica spread of h itself
    p = NeuralFieldParams(tau=1.0, sigma=0.3, A=3.0, **cosine_kernel(0.2))
    model, metric = build_neural_model(p)
    coarse_cfg = SimConfig(n_particles=8, n_reference=32, dt=0.02, t_end=2.0,
                           seed=4, record_times=(2.0,), noise_substeps=2)
    fine_cfg = SimConfig(n_particles=8, n_reference=32, dt=0.01, t_end=2.0,
                         seed=4, record_times=(2.0,))
    hc = run(model, coarse_cfg, metric=metric, n_replicas=16).h[0]
    hf = run(model, fine_cfg, metric=metric, n_replicas=16).h[0]
    spread = hf.std(ddof=1)
    assert np.abs(hc - hf).max() < 0.2 * spread
    assert np.corrcoef(hc, hf)[0, 1] > 0.99


# ---------------------------------------------------------------------------
# model-level dynamics oracles


def test_independent_particles_match_discrete_variance_recursion():
    # theta = 0 decouples everyone into scalar AR(1) chains whose second
    # moment obeys m2_{k+1} = gamma^2 m2_k + sigma^2 dt exactly
    tau, sigma, dt = 2.0, 0.4, 0.01
    model = _linear(theta=0.0, tau=tau, sigma=sigma)
    cfg = SimConfig(n_particles=256, dt=dt, t_end=2.0, seed=21,
                    record_times=(0.5, 1.0, 2.0), surrogate="exact-mean")
    res = run(model, cfg, n_replicas=64)
    gamma = 1.0 - dt / tau
    for i, t in enumerate(res.times):
        k = int(round(t / dt))
        m2 = model.x_ini**2 * gamma ** (2 * k) + sigma**2 * dt * (
            (1.0 - gamma ** (2 * k)) / (1.0 - gamma**2))
        est = res.x_m2[i].mean()
        assert est == pytest.approx(m2, rel=0.05)


def test_divergence_raises_with_witness():
    model = ParticleModel(b0=lambda t, x: np.asarray(x, dtype=float),
                          b1=lambda x, y: np.zeros(np.broadcast_shapes(
                              np.shape(x), np.shape(y))),
                          b2=lambda x: np.zeros(np.shape(x)),
                          x_ini=1.0, lip_b2=0.0, sup_b1=0.0,
                          b1_mean=lambda x, s: np.zeros(np.shape(x)))
    cfg = SimConfig(n_particles=4, n_reference=4, dt=0.01, t_end=10.0, seed=0,
                    record_times=(10.0,), state_clip=100.0)
    with pytest.raises(DivergenceError) as err:
        run(model, cfg, n_replicas=1)
    e = err.value
    # x grows like (1 + dt)^k, passing 100 just before t = 4.62
    assert 4.0 < e.t < 5.0
    assert e.step == int(round(e.t / 0.01))
    assert e.population in ("particles", "twin", "reference")
    assert isinstance(e.index, int)


def test_budget_twin_outputs():
    p = NeuralFieldParams(tau=1.0, sigma=0.3, A=3.0, **cosine_kernel(0.2))
    model, metric = build_neural_model(p)
    cfg = SimConfig(n_particles=8, n_reference=16, dt=0.01, t_end=0.5, seed=2,
                    record_times=(0.25, 0.5))
    res = run(model, cfg, metric=metric, n_replicas=2, budget_twin=True)
    assert res.drift_gap.shape == (2, 2)
    assert res.h_twin.shape == (2, 2)
    assert np.all(res.drift_gap >= 0.0)
    assert np.all(res.h_twin >= 0.0)
