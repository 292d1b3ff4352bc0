"""Drift, diffusion, and coupling-metric definitions for particle systems.

A :class:`ParticleModel` describes scalar interacting diffusions

    dX_t^j = [ b0(t, X_t^j) + (1/N) sum_k b1(X_t^j, X_t^k) ] dt
             + b2(X_t^j) dW_t^j,      j = 1..N,

together with the mean-field limit obtained by replacing the empirical
average with an integral against the limiting law.  Distance between a
particle and its limit twin is measured with a weighted premetric

    h(x, y) = g(x) g(y) f(x - y),

where f is an even convex profile and g a weight equal to one on a core
interval and rising smoothly into bounded tails.  The flat core makes h
behave like a squared distance where the drift is contracting; the tails
hand control to the restoring drift where it is not.

All drift and diffusion callables must accept numpy arrays elementwise
(b1 under broadcasting of both arguments).  Constructors probe this once
with small arrays so shape bugs surface at build time, not mid-run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, DomainError

__all__ = [
    "MetricSpec",
    "ParticleModel",
    "NeuralFieldParams",
    "h_metric",
    "rate_exponent",
    "sigmoid",
    "sigmoid_prime",
    "sigmoid_second",
    "sigmoid_weighted_metric",
    "flat_quadratic_metric",
    "cosine_kernel",
    "constant_kernel",
    "zero_kernel",
    "build_neural_model",
    "build_linear_model",
]


def sigmoid(x):
    """Logistic function 1 / (1 + exp(-x)), vectorized."""
    return expit(x)


def sigmoid_prime(x):
    s = expit(x)
    return s * (1.0 - s)


def sigmoid_second(x):
    s = expit(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _maybe_scalar(arr):
    arr = np.asarray(arr)
    return arr[()] if arr.ndim == 0 else arr


# ---------------------------------------------------------------------------
# metric


@dataclass(frozen=True)
class MetricSpec:
    """Weighted premetric h(x, y) = g(x) g(y) f(x - y) plus its exponents.

    f must be even, nonnegative, and vanish only at zero; g must satisfy
    1 <= g <= some finite bound and be flat (g = 1, g' = g'' = 0) on the
    core interval [-half_width, half_width].  ``half_width = inf`` means a
    globally flat weight.

    ``a`` controls the drift-domination inequality f'(z)^a <= f(z) and
    ``q`` the moment order used when summing coupling errors; the
    time-uniform coupling rate for an N-particle system is then
    N ** (-a / (q (a - 1))).  q must exceed 2 so that squared coupling
    errors remain integrable under the q-th moment budget.
    """

    f: Callable
    f_prime: Callable
    f_second: Callable
    g: Callable
    g_prime: Callable
    g_second: Callable
    half_width: float
    a: int = 2
    q: int = 3
    name: str = "custom"

    def __post_init__(self):
        if not (isinstance(self.a, (int, np.integer)) and self.a > 1):
            raise ConfigurationError(f"metric exponent a must be an integer > 1, got {self.a!r}")
        if not (isinstance(self.q, (int, np.integer)) and self.q > 2):
            raise ConfigurationError(f"moment order q must be an integer > 2, got {self.q!r}")
        if not (self.half_width > 0.0):
            raise ConfigurationError(
                f"half_width must be positive (inf for a flat weight), got {self.half_width!r}")

    @property
    def rate_exponent(self) -> float:
        return rate_exponent(self.a, self.q)

    @property
    def weight_moment_exponent(self) -> float:
        """Moment order of the weight needed to absorb coupling errors.

        Equals 2 (a-1) q / (a q - a - q); 6 for the default (a, q) = (2, 3).
        """
        return 2.0 * (self.a - 1) * self.q / (self.a * self.q - self.a - self.q)

    def h(self, x, y):
        return h_metric(self, x, y)


def h_metric(spec: MetricSpec, x, y):
    """Evaluate h(x, y) = g(x) g(y) f(x - y) elementwise.

    Raises DomainError when any input is non-finite; h of a diverged state
    is meaningless and silently propagating NaN hides the failure site.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError("h_metric requires finite inputs")
    return _maybe_scalar(spec.g(x) * spec.g(y) * spec.f(x - y))


def rate_exponent(a, q) -> float:
    """Decay exponent of the time-uniform coupling bound, a / (q (a - 1)).

    An N-particle system couples to its limit at rate N ** (-rate_exponent).
    Any a > 1 and q >= 1 are accepted here; MetricSpec itself insists on
    q > 2, which the moment side of the argument needs.
    """
    if not a > 1:
        raise ConfigurationError(f"rate exponent needs a > 1, got {a!r}")
    if not q >= 1:
        raise ConfigurationError(f"rate exponent needs q >= 1, got {q!r}")
    return a / (q * (a - 1.0))


def sigmoid_weighted_metric(half_width: float, a: int = 2, q: int = 3) -> MetricSpec:
    """Quadratic profile with a sigmoid-tailed weight.

    f(z) = z^2 / 4, and

        g(x) = 1                                   |x| <= half_width,
        g(x) = sigmoid(|x| - half_width) + 1/2     |x| >  half_width,

    so 1 <= g <= 3/2.  g is continuous but has a derivative jump at the
    seam; the core-side value g' = 0 is used at |x| = half_width exactly,
    and the outer one-sided slope sigmoid'(0) = 1/4 is approached from
    outside.  Tail extractions should therefore sample strictly outside
    the core.
    """
    A = float(half_width)
    if not (A > 0.0 and math.isfinite(A)):
        raise ConfigurationError(f"half_width must be positive and finite, got {half_width!r}")

    def f(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(0.25 * z * z)

    def f_prime(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(0.5 * z)

    def f_second(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(np.full(z.shape, 0.5))

    def g(x):
        x = np.asarray(x, dtype=float)
        t = np.abs(x) - A
        return _maybe_scalar(np.where(t > 0.0, expit(t) + 0.5, 1.0))

    def g_prime(x):
        x = np.asarray(x, dtype=float)
        t = np.abs(x) - A
        return _maybe_scalar(np.where(t > 0.0, np.sign(x) * sigmoid_prime(t), 0.0))

    def g_second(x):
        x = np.asarray(x, dtype=float)
        t = np.abs(x) - A
        return _maybe_scalar(np.where(t > 0.0, sigmoid_second(t), 0.0))

    return MetricSpec(f=f, f_prime=f_prime, f_second=f_second,
                      g=g, g_prime=g_prime, g_second=g_second,
                      half_width=A, a=a, q=q, name="sigmoid-weighted")


def flat_quadratic_metric(a: int = 2, q: int = 3) -> MetricSpec:
    """h(x, y) = (x - y)^2 / 4 with a globally flat weight g = 1."""

    def f(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(0.25 * z * z)

    def f_prime(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(0.5 * z)

    def f_second(z):
        z = np.asarray(z, dtype=float)
        return _maybe_scalar(np.full(z.shape, 0.5))

    def ones(x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(np.ones(x.shape))

    def zeros(x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(np.zeros(x.shape))

    return MetricSpec(f=f, f_prime=f_prime, f_second=f_second,
                      g=ones, g_prime=zeros, g_second=zeros,
                      half_width=math.inf, a=a, q=q, name="flat-quadratic")


# ---------------------------------------------------------------------------
# particle model


@dataclass(frozen=True)
class ParticleModel:
    """Coefficients of the interacting system and its mean-field limit.

    b0(t, x) is the individual drift, b1(x, y) the pairwise interaction
    averaged over the ensemble, b2(x) the diffusion coefficient.  x_ini is
    the deterministic common initial condition.

    lip_b2 is a Lipschitz constant for b2 and sup_b1 a uniform bound on
    |b1| (math.inf when none exists; weighted-tail checks then have
    nothing to discharge and only flat-weight metrics make sense).

    b1_mean, when supplied, must return the exact empirical mean
    (1/M) sum_k b1(x_i, s_k) for a support array s; separable kernels
    admit O(N + M) closed forms and large ensembles are impractical
    without one.  The generic path evaluates the same pairwise mean by
    blocked broadcasting and is used to cross-check fast paths in tests.

    exact_mean_step, when supplied, advances the Euler-discretized mean
    of the limit law by one step (used by the noise-free surrogate that
    is exact for linear models).
    """

    b0: Callable
    b1: Callable
    b2: Callable
    x_ini: float
    lip_b2: float
    sup_b1: float
    b1_mean: Optional[Callable] = None
    exact_mean_step: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if not math.isfinite(self.x_ini):
            raise ConfigurationError(f"x_ini must be finite, got {self.x_ini!r}")
        if not (self.lip_b2 >= 0.0 and math.isfinite(self.lip_b2)):
            raise ConfigurationError(f"lip_b2 must be a finite nonnegative real, got {self.lip_b2!r}")
        if not self.sup_b1 >= 0.0:
            raise ConfigurationError(f"sup_b1 must be nonnegative, got {self.sup_b1!r}")
        self._probe_vectorization()

    def _probe_vectorization(self):
        # cheap shape probes; a scalar-only lambda fails here, not mid-run
        x = np.full(3, self.x_ini, dtype=float)
        y = x + 0.5
        for label, out, want in (
            ("b0", np.asarray(self.b0(0.0, x)), (3,)),
            ("b1", np.asarray(self.b1(x, y)), (3,)),
            ("b2", np.asarray(self.b2(x)), (3,)),
        ):
            try:
                ok = np.broadcast_shapes(out.shape, want) == want
            except ValueError:
                ok = False
            if not ok:
                raise ConfigurationError(
                    f"{label} must vectorize over arrays: shape {out.shape} "
                    f"does not broadcast to {want}")

    def mean_interaction(self, x, support, max_block: int = 1 << 22):
        """Empirical interaction mean (1/M) sum_k b1(x_i, s_k).

        x and support may be 1-D, or 2-D with aligned leading (replica)
        axes; a 1-D support is shared across 2-D rows of x.  Uses the
        model's closed-form b1_mean when present, otherwise blocked
        broadcasting with at most max_block pairwise evaluations held at
        once.  Reduction over the support axis uses numpy's pairwise
        summation, so the result is independent of blocking.
        """
        if self.b1_mean is not None:
            return self.b1_mean(x, support)
        x = np.asarray(x, dtype=float)
        support = np.asarray(support, dtype=float)
        if x.ndim == 0:
            return float(self._mean_interaction_1d(x.reshape(1), support, max_block)[0])
        if x.ndim == 1 and support.ndim == 1:
            return self._mean_interaction_1d(x, support, max_block)
        if x.ndim == 2:
            rows = []
            for r in range(x.shape[0]):
                s = support[r] if support.ndim == 2 else support
                rows.append(self._mean_interaction_1d(x[r], s, max_block))
            return np.stack(rows, axis=0)
        raise ConfigurationError(
            f"unsupported shapes for mean_interaction: {x.shape} vs {support.shape}")

    def _mean_interaction_1d(self, x, support, max_block):
        m = support.shape[0]
        if m == 0:
            raise ConfigurationError("interaction mean needs a nonempty support")
        out = np.empty(x.shape[0])
        block = max(1, max_block // m)
        for i in range(0, x.shape[0], block):
            sl = slice(i, min(i + block, x.shape[0]))
            out[sl] = np.mean(self.b1(x[sl, None], support[None, :]), axis=1)
        return out


# ---------------------------------------------------------------------------
# built-in models


@dataclass(frozen=True)
class NeuralFieldParams:
    """Parameters of the stochastic neural-field model.

    Membrane potentials relax with time constant tau, receive external
    input I(t), couple through a synaptic kernel J applied to the firing
    rate sigmoid(y) of the presynaptic particle, and feel additive noise
    of strength sigma:

        b0(t, x) = -x / tau + I(t)
        b1(x, y) = J(x, y) * sigmoid(y)
        b2(x)    = sigma.

    A is the half-width of the flat core of the matching metric weight.
    sup_J and lip_J bound |J| and its Lipschitz constant in each argument.
    J_mean, when given, must return the empirical mean of
    J(x, s_k) sigmoid(s_k) over a support array (see kernel helpers).
    input = None means no external drive.
    """

    tau: float
    sigma: float
    A: float
    J: Callable
    sup_J: float
    lip_J: float
    input: Optional[Callable] = None
    J_mean: Optional[Callable] = None
    x_ini: float = 0.0

    def __post_init__(self):
        if not (self.tau > 0.0 and math.isfinite(self.tau)):
            raise ConfigurationError(f"tau must be a positive real, got {self.tau!r}")
        if not (self.sigma >= 0.0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be a finite nonnegative real, got {self.sigma!r}")
        if not (self.A > 0.0 and math.isfinite(self.A)):
            raise ConfigurationError(f"A must be a positive real, got {self.A!r}")
        if not (self.sup_J >= 0.0 and math.isfinite(self.sup_J)):
            raise ConfigurationError(f"sup_J must be a finite nonnegative real, got {self.sup_J!r}")
        if not (self.lip_J >= 0.0 and math.isfinite(self.lip_J)):
            raise ConfigurationError(f"lip_J must be a finite nonnegative real, got {self.lip_J!r}")
        if not math.isfinite(self.x_ini):
            raise ConfigurationError(f"x_ini must be finite, got {self.x_ini!r}")


def cosine_kernel(amplitude: float) -> dict:
    """Translation-invariant coupling J(x, y) = amplitude * cos(x - y).

    cos(x - y) = cos x cos y + sin x sin y, so the empirical interaction
    mean separates into two support-side averages and evaluates in
    O(N + M) instead of O(N M).  Returns keyword arguments for
    NeuralFieldParams.
    """
    amp = float(amplitude)

    def J(x, y):
        return amp * np.cos(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))

    def J_mean(x, support):
        x = np.asarray(x, dtype=float)
        support = np.asarray(support, dtype=float)
        w = expit(support)
        mc = np.mean(np.cos(support) * w, axis=-1)
        ms = np.mean(np.sin(support) * w, axis=-1)
        if x.ndim == 2 and support.ndim == 2:
            mc = mc[:, None]
            ms = ms[:, None]
        return amp * (np.cos(x) * mc + np.sin(x) * ms)

    return dict(J=J, sup_J=abs(amp), lip_J=abs(amp), J_mean=J_mean)


def constant_kernel(value: float) -> dict:
    """State-independent coupling J(x, y) = value."""
    val = float(value)

    def J(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return _maybe_scalar(np.full(np.broadcast_shapes(x.shape, y.shape), val))

    def J_mean(x, support):
        x = np.asarray(x, dtype=float)
        support = np.asarray(support, dtype=float)
        m = np.mean(expit(support), axis=-1)
        if x.ndim == 2 and support.ndim == 2:
            m = m[:, None]
        return val * m + 0.0 * x

    return dict(J=J, sup_J=abs(val), lip_J=0.0, J_mean=J_mean)


def zero_kernel() -> dict:
    """No coupling; particles evolve independently."""
    return constant_kernel(0.0)


def build_neural_model(params: NeuralFieldParams):
    """Assemble the neural-field ParticleModel and its matching metric.

    Returns (model, metric) with a sigmoid-weighted metric whose flat core
    is [-params.A, params.A].  |b1| <= sup_J because firing rates lie in
    (0, 1), and b2 is constant so lip_b2 = 0.
    """
    tau = params.tau
    drive = params.input if params.input is not None else (lambda t: 0.0)
    J = params.J

    def b0(t, x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(-x / tau + drive(t))

    def b1(x, y):
        y = np.asarray(y, dtype=float)
        return J(x, y) * expit(y)

    sigma = params.sigma

    def b2(x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(np.full(x.shape, sigma))

    b1_mean = params.J_mean  # same contract: mean of J(x, s) sigmoid(s)

    model = ParticleModel(b0=b0, b1=b1, b2=b2, x_ini=params.x_ini,
                          lip_b2=0.0, sup_b1=params.sup_J,
                          b1_mean=b1_mean, name="neural-field")
    metric = sigmoid_weighted_metric(params.A)
    return model, metric


def build_linear_model(theta: float, tau: float, sigma: float,
                       x_ini: float = 1.0) -> ParticleModel:
    """Linear mean-reverting model with attraction to the ensemble mean.

        b0(t, x) = -x / tau,   b1(x, y) = theta (y - x),   b2(x) = sigma.

    b1 is linear in y, so the interaction mean is theta (mean(s) - x)
    exactly, and the Euler-discretized limit mean obeys the noise-free
    recursion m -> m (1 - dt / tau) exactly.  |b1| has no uniform bound
    (sup_b1 = inf); use flat-weight metrics with this model.
    """
    theta = float(theta)
    tau = float(tau)
    sigma = float(sigma)
    if not (tau > 0.0 and math.isfinite(tau)):
        raise ConfigurationError(f"tau must be a positive real, got {tau!r}")
    if not (sigma >= 0.0 and math.isfinite(sigma)):
        raise ConfigurationError(f"sigma must be a finite nonnegative real, got {sigma!r}")
    if not math.isfinite(theta):
        raise ConfigurationError(f"theta must be finite, got {theta!r}")

    def b0(t, x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(-x / tau)

    def b1(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return _maybe_scalar(theta * (y - x))

    def b2(x):
        x = np.asarray(x, dtype=float)
        return _maybe_scalar(np.full(x.shape, sigma))

    def b1_mean(x, support):
        x = np.asarray(x, dtype=float)
        support = np.asarray(support, dtype=float)
        m = np.mean(support, axis=-1)
        if x.ndim == 2 and support.ndim == 2:
            m = m[:, None]
        return _maybe_scalar(theta * (m - x))

    def exact_mean_step(m, dt):
        return m * (1.0 - dt / tau)

    return ParticleModel(b0=b0, b1=b1, b2=b2, x_ini=float(x_ini),
                         lip_b2=0.0, sup_b1=math.inf,
                         b1_mean=b1_mean, exact_mean_step=exact_mean_step,
                         name="linear-mean-reverting")
