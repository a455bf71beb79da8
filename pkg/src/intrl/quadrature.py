"""Quadrature rules for interval utility integrals.

Two families are provided: the composite trapezoid rule and Bayesian
quadrature (BQ) under a Gaussian-process prior. BQ weights solve
``K_TT w = z`` where ``z_i`` is the kernel mean ``int_a^b K(s, t_i) ds``; the
posterior variance ``int int K - z^T w`` is the squared worst-case error of
the rule over the unit ball of the kernel's RKHS.

Kernels
-------
``WienerKernel``
    Brownian covariance ``min(s, s') - origin``. Its BQ rule is the
    trapezoid rule whenever both interval endpoints are nodes.
``MaternKernel``
    Stationary half-integer Matérn, ``k(r) = sigma2 exp(-a) poly(a)`` with
    ``a = sqrt(2 nu) r / rho``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from .errors import AccuracyError, DimensionError, DomainError, IllConditionedKernelError

MATERN_NUS = (0.5, 1.5, 2.5, 3.5)
JITTER_LEVELS = (0.0, 1e-12, 1e-10, 1e-8)
MAX_CONDITION = 1e14


@dataclass(frozen=True)
class WienerKernel:
    """``K(s, s') = min(s, s') - origin``, defined for ``s, s' > origin``."""

    origin: float = -1.0

    @property
    def name(self) -> str:
        return "wiener"


def _matern_coeffs(nu: float) -> np.ndarray:
    p = int(round(nu - 0.5))
    f = math.factorial
    return np.array([f(p) / f(2 * p) * f(2 * p - j) / (f(p - j) * f(j)) * 2.0 ** j
                     for j in range(p + 1)])


@dataclass(frozen=True)
class MaternKernel:
    """Half-integer Matérn kernel with smoothness ``nu`` and length scale ``rho``."""

    nu: float = 3.5
    rho: float = 1.0
    sigma2: float = 1.0
    coeffs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not any(abs(self.nu - v) < 1e-12 for v in MATERN_NUS):
            raise DomainError(f"nu must be one of {MATERN_NUS}, got {self.nu}")
        if not (self.rho > 0 and self.sigma2 > 0):
            raise DomainError("rho and sigma2 must be positive")
        object.__setattr__(self, "nu", float(round(self.nu * 2) / 2))
        object.__setattr__(self, "coeffs", _matern_coeffs(self.nu))

    @property
    def name(self) -> str:
        return f"matern-{int(2 * self.nu)}/2"

    @property
    def rate(self) -> float:
        """``c`` in ``a = c r``."""
        return math.sqrt(2.0 * self.nu) / self.rho

    def radial(self, r):
        a = self.rate * np.abs(np.asarray(r, dtype=float))
        return self.sigma2 * np.exp(-a) * np.polynomial.polynomial.polyval(a, self.coeffs)

    def radial_integral(self, d):
        """``int_0^d k(r) dr`` for ``d >= 0`` via the regularized lower incomplete gamma."""
        c = self.rate
        d = np.asarray(d, dtype=float)
        out = np.zeros_like(d)
        for j, cj in enumerate(self.coeffs):
            out = out + cj * math.factorial(j) / c * special.gammainc(j + 1, c * d)
        return self.sigma2 * out

    def radial_moment(self, L):
        """``int_0^L r k(r) dr``."""
        c = self.rate
        out = 0.0
        for j, cj in enumerate(self.coeffs):
            out += cj * math.factorial(j + 1) / c ** 2 * special.gammainc(j + 2, c * L)
        return self.sigma2 * out


Kernel = WienerKernel | MaternKernel


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights; BQ rules also carry their posterior variance."""

    instants: np.ndarray
    weights: np.ndarray
    posterior_variance: float | None = None
    provenance: str = "trapezoid"

    def __post_init__(self):
        t = np.array(self.instants, dtype=float).reshape(-1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if t.size < 2:
            raise DimensionError("a quadrature rule needs at least 2 instants")
        if w.shape != t.shape:
            raise DimensionError("weights and instants differ in length")
        if np.any(np.diff(t) <= 0):
            raise DomainError("instants must be strictly increasing")
        if self.posterior_variance is not None and self.posterior_variance < 0:
            raise ValueError("posterior_variance must be nonnegative")
        t.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "instants", t)
        object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.instants.size

    @property
    def span(self) -> float:
        return float(self.instants[-1] - self.instants[0])

    @property
    def posterior_std(self) -> float | None:
        v = self.posterior_variance
        return None if v is None else math.sqrt(v)


def _instants(instants) -> np.ndarray:
    t = np.asarray(instants, dtype=float).reshape(-1)
    if t.size < 2:
        raise DimensionError("at least 2 instants are required")
    if np.any(np.diff(t) <= 0):
        raise DomainError("instants must be strictly increasing")
    return t


def even_instants(t0: float, t1: float, n: int) -> np.ndarray:
    """``n`` evenly spaced instants including both endpoints."""
    if n < 2:
        raise DimensionError("at least 2 instants are required")
    return np.linspace(t0, t1, n)


def trapezoid_rule(instants) -> QuadratureRule:
    """Composite trapezoid rule; variance is the Wiener-model ``sum(d^3) / 12``."""
    t = _instants(instants)
    d = np.diff(t)
    w = np.zeros_like(t)
    w[:-1] += d / 2
    w[1:] += d / 2
    return QuadratureRule(t, w, float(np.sum(d ** 3) / 12.0), "trapezoid")


def kernel_eval(k: Kernel, s, s2):
    """Kernel value, broadcasting over ``s`` and ``s2``."""
    s = np.asarray(s, dtype=float)
    s2 = np.asarray(s2, dtype=float)
    if isinstance(k, WienerKernel):
        if np.any(s <= k.origin) or np.any(s2 <= k.origin):
            raise DomainError(f"Wiener kernel requires arguments > origin {k.origin}")
        out = np.minimum(s, s2) - k.origin
    else:
        out = k.radial(s - s2)
    return float(out) if out.ndim == 0 else out


def _check_interval(k, interval):
    a, b = map(float, interval)
    if not b > a:
        raise DomainError("interval must satisfy b > a")
    if isinstance(k, WienerKernel) and a < k.origin:
        raise DomainError("Wiener origin must not lie inside the interval")
    return a, b


def _kernel_mean_numeric(k, a, b, t):
    out = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        for lo, hi in ((a, t), (t, b)):
            if hi <= lo:
                continue
            try:
                # 47000 panels x 21 nodes stays under 10^6 evaluations.
                val, _ = integrate.quad(lambda s: kernel_eval(k, s, t), lo, hi,
                                        epsabs=1e-12, epsrel=0.0, limit=47_000)
            except integrate.IntegrationWarning as exc:
                raise AccuracyError(f"kernel mean at t={t:.6g} did not converge: {exc}") from exc
            out += val
    return out


def kernel_mean(k: Kernel, interval, t, method: str = "analytic"):
    """Kernel mean ``z(t) = int_a^b K(s, t) ds``.

    ``method="analytic"`` uses closed forms (the Matérn one through the
    incomplete gamma function); ``method="numeric"`` runs adaptive quadrature
    split at ``t`` with absolute tolerance 1e-12.
    """
    a, b = _check_interval(k, interval)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < a) or np.any(t_arr > b):
        raise DomainError("t must lie in the interval")
    if method == "numeric":
        out = np.array([_kernel_mean_numeric(k, a, b, float(ti)) for ti in t_arr.reshape(-1)])
        out = out.reshape(t_arr.shape)
    elif method == "analytic":
        if isinstance(k, WienerKernel):
            o = k.origin
            out = ((t_arr - o) ** 2 - (a - o) ** 2) / 2 + (b - t_arr) * (t_arr - o)
        else:
            out = k.radial_integral(t_arr - a) + k.radial_integral(b - t_arr)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out) if np.ndim(out) == 0 else out


def kernel_double_mean(k: Kernel, interval) -> float:
    """``int_a^b int_a^b K(s, s') ds ds'``."""
    a, b = _check_interval(k, interval)
    if isinstance(k, WienerKernel):
        A, B = a - k.origin, b - k.origin
        return (B ** 3 - A ** 3) / 3 - A ** 2 * (B - A)
    L = b - a
    return float(2.0 * (L * k.radial_integral(L) - k.radial_moment(L)))


def gram(k: Kernel, instants) -> np.ndarray:
    t = np.asarray(instants, dtype=float)
    return kernel_eval(k, t[:, None], t[None, :])


def _solve_gram(K, z):
    scale = float(np.mean(np.diag(K)))
    for jitter in JITTER_LEVELS:
        Kj = K + jitter * scale * np.eye(len(K)) if jitter else K
        try:
            cf = linalg.cho_factor(Kj, lower=True)
        except linalg.LinAlgError:
            continue
        if np.linalg.cond(Kj) > MAX_CONDITION:
            continue
        return linalg.cho_solve(cf, z), jitter
    raise IllConditionedKernelError(
        f"Gram matrix of size {len(K)} has condition {np.linalg.cond(K):.3g} "
        f"even with jitter {JITTER_LEVELS[-1]:g}")


def bq_rule(k: Kernel, instants, interval=None, method: str = "analytic") -> QuadratureRule:
    """Bayesian quadrature rule with weights ``K_TT^{-1} z``.

    ``interval`` defaults to the span of ``instants``.
    """
    t = _instants(instants)
    interval = (t[0], t[-1]) if interval is None else interval
    a, b = _check_interval(k, interval)
    if t[0] < a or t[-1] > b:
        raise DomainError("instants must lie in the interval")
    z = np.asarray(kernel_mean(k, (a, b), t, method=method))
    w, _ = _solve_gram(gram(k, t), z)
    var = kernel_double_mean(k, (a, b)) - float(z @ w)
    return QuadratureRule(t, w, max(var, 0.0), f"bq({k.name})")


def apply_rule(rule: QuadratureRule, values) -> np.ndarray | float:
    """``sum_i w_i values_i``; extra trailing axes of ``values`` are kept."""
    v = np.asarray(values, dtype=float)
    if v.shape[:1] != (rule.n,):
        raise DimensionError(f"expected {rule.n} values, got leading shape {v.shape[:1]}")
    out = np.tensordot(rule.weights, v, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def worst_case_error(rule: QuadratureRule, k: Kernel, interval=None) -> float:
    """RKHS worst-case error ``sqrt(iint K - 2 w^T z + w^T K_TT w)``."""
    t = rule.instants
    interval = (t[0], t[-1]) if interval is None else interval
    z = np.asarray(kernel_mean(k, interval, t))
    w = rule.weights
    e2 = kernel_double_mean(k, interval) - 2.0 * float(w @ z) + float(w @ gram(k, t) @ w)
    return math.sqrt(max(e2, 0.0))
