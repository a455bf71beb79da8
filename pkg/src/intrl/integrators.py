"""Explicit ODE integrators with dense output.

Three methods share one :class:`Trajectory` type: forward Euler and classic
RK4 on a fixed grid, and the Dormand-Prince 5(4) pair with step-size control.
Every trajectory stores the vector field at its nodes, so any of them can be
queried between nodes through cubic Hermite interpolation.

Vector fields are autonomous, ``rhs(y) -> dy/dt``, and ``y`` may have any
shape; a batch of independent systems is integrated as one stacked state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import _affine, closed_loop_rhs, eval_utility
from .errors import BlowUpError, DivergenceError, DomainError

METHODS = ("euler", "rk4", "rk45")

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class SolverSpec:
    """Integrator choice and its accuracy knobs.

    ``h`` is used by the fixed-step methods, ``rtol``/``atol`` by ``rk45``.
    ``blowup_norm`` bounds ``max |y|`` before a :class:`BlowUpError`.
    """

    method: str = "rk45"
    h: float = 0.01
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 1_000_000
    blowup_norm: float = math.inf

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not (0 < self.rtol < 1 and 0 < self.atol < 1):
            raise ValueError("rtol and atol must lie in (0, 1)")


PLANT_SPEC = SolverSpec(method="rk45", rtol=1e-12, atol=1e-12, blowup_norm=1e6)


@dataclass(frozen=True)
class SolverMeta:
    method: str
    n_steps: int
    n_rejected: int
    n_evals: int
    terminated_early: bool = False


@dataclass(frozen=True)
class Trajectory:
    """Solver nodes plus the vector field at each node."""

    instants: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray = field(repr=False)
    solver_meta: SolverMeta

    def __post_init__(self):
        if self.instants.ndim != 1 or len(self.instants) != len(self.states):
            raise ValueError("instants and states must align")
        if np.any(np.diff(self.instants) <= 0):
            raise ValueError("instants must be strictly increasing")
        if not np.all(np.isfinite(self.states)):
            raise BlowUpError("trajectory contains non-finite states")
        for a in (self.instants, self.states, self.derivatives):
            a.setflags(write=False)

    @property
    def t0(self) -> float:
        return float(self.instants[0])

    @property
    def t1(self) -> float:
        return float(self.instants[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def __call__(self, t):
        return sample_at(self, t)


def _check_state(y, t, blowup_norm):
    if not np.all(np.isfinite(y)):
        raise BlowUpError(f"non-finite state at t={t:.6g}")
    if np.max(np.abs(y), initial=0.0) > blowup_norm:
        raise BlowUpError(f"state norm exceeded {blowup_norm:g} at t={t:.6g}")


def _initial_step(rhs, y0, f0, rtol, atol, span):
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4.
    scale = atol + rtol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale, initial=0.0)
    d1 = np.max(np.abs(f0) / scale, initial=0.0)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale, initial=0.0) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def _integrate_rk45(rhs, y0, t0, t1, spec, stops, terminate):
    span = t1 - t0
    h_min = 1e-14 * span
    t, y = t0, y0
    f = rhs(y)
    ts, ys, fs = [t], [y], [f]
    h = _initial_step(rhs, y, f, spec.rtol, spec.atol, span)
    n_evals, n_steps, n_rej = 2, 0, 0
    stop_iter = iter(stops)
    next_stop = next(stop_iter, t1)
    k = [None] * 7
    terminated = False
    while t < t1:
        if n_steps + n_rej >= spec.max_steps:
            raise DivergenceError(f"max_steps={spec.max_steps} exceeded at t={t:.6g}")
        if h < h_min:
            raise DivergenceError(f"step size underflow (h={h:.3g}) at t={t:.6g}")
        clipped = t + h >= next_stop
        h_try = next_stop - t if clipped else h
        k[0] = f
        for i in range(1, 7):
            dy = sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
            k[i] = rhs(y + h_try * dy)
        n_evals += 6
        y_new = y + h_try * sum(b * k[j] for j, b in enumerate(_B5) if b != 0.0)
        err_vec = h_try * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
        scale = spec.atol + spec.rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.max(np.abs(err_vec) / scale, initial=0.0)
        if not np.isfinite(err) or err > 1.0:
            n_rej += 1
            fac = 0.2 if not np.isfinite(err) else max(0.2, 0.9 * err ** -0.2)
            h = h_try * fac
            continue
        t = next_stop if clipped else t + h_try
        y, f = y_new, k[6]
        _check_state(y, t, spec.blowup_norm)
        ts.append(t)
        ys.append(y)
        fs.append(f)
        n_steps += 1
        fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        # A step shortened to land on a stop says nothing about the natural size.
        h = max(h, h_try * fac) if clipped else h_try * fac
        if clipped and t < t1:
            next_stop = next(stop_iter, t1)
        if terminate is not None and terminate(y):
            terminated = True
            break
    meta = SolverMeta("rk45", n_steps, n_rej, n_evals, terminated)
    return np.array(ts), np.array(ys), np.array(fs), meta


def _integrate_fixed(rhs, y0, t0, t1, spec, terminate):
    n = max(1, math.ceil((t1 - t0) / spec.h - 1e-9))
    grid = t0 + spec.h * np.arange(n + 1)
    grid[-1] = t1
    y = y0
    f = rhs(y)
    ys, fs = [y], [f]
    n_evals = 1
    terminated = False
    for i in range(n):
        h = grid[i + 1] - grid[i]
        if spec.method == "euler":
            y = y + h * f
        else:
            k2 = rhs(y + 0.5 * h * f)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + h / 6.0 * (f + 2 * k2 + 2 * k3 + k4)
            n_evals += 3
        _check_state(y, grid[i + 1], spec.blowup_norm)
        f = rhs(y)
        n_evals += 1
        ys.append(y)
        fs.append(f)
        if terminate is not None and terminate(y):
            terminated = True
            grid = grid[: i + 2]
            break
    meta = SolverMeta(spec.method, len(ys) - 1, 0, n_evals, terminated)
    return grid, np.array(ys), np.array(fs), meta


def integrate(rhs: Callable[[np.ndarray], np.ndarray], x0, t0: float, t1: float,
              spec: SolverSpec = SolverSpec(), stops=None,
              terminate: Callable[[np.ndarray], bool] | None = None) -> Trajectory:
    """Integrate ``dy/dt = rhs(y)`` from ``t0`` to ``t1``.

    Parameters
    ----------
    rhs : callable
        Autonomous vector field.
    x0 : array_like
        Initial state, any shape.
    t0, t1 : float
        Integration span, ``t1 > t0``.
    spec : SolverSpec
        Method and tolerances.
    stops : array_like, optional
        Instants the adaptive solver must land on exactly (they become nodes).
        Ignored by the fixed-step methods.
    terminate : callable, optional
        Predicate on the state checked after every accepted step; integration
        ends early once it returns true.

    Returns
    -------
    Trajectory
    """
    t0, t1 = float(t0), float(t1)
    if not t1 > t0:
        raise DomainError("integration requires t1 > t0")
    y0 = np.array(x0, dtype=float)
    _check_state(y0, t0, spec.blowup_norm)
    if spec.method == "rk45":
        st = np.unique(np.asarray([] if stops is None else stops, dtype=float))
        st = st[(st > t0) & (st < t1)]
        ts, ys, fs, meta = _integrate_rk45(rhs, y0, t0, t1, spec, st, terminate)
    else:
        ts, ys, fs, meta = _integrate_fixed(rhs, y0, t0, t1, spec, terminate)
    return Trajectory(ts, ys, fs, meta)


def sample_at(traj: Trajectory, instants) -> np.ndarray:
    """Evaluate the dense output at ``instants`` (row per instant).

    Exact at solver nodes; cubic Hermite between them.
    """
    t = np.asarray(instants, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    nodes = traj.instants
    if np.any(t < nodes[0]) or np.any(t > nodes[-1]):
        raise DomainError(f"instants must lie in [{nodes[0]:.6g}, {nodes[-1]:.6g}]")
    i = np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(nodes) - 2)
    h = nodes[i + 1] - nodes[i]
    s = (t - nodes[i]) / h
    extra = (1,) * (traj.states.ndim - 1)
    s = s.reshape(-1, *extra)
    h = h.reshape(-1, *extra)
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    # Difference form (h00 = 1 - h01) keeps constant solutions exact.
    y0 = traj.states[i]
    out = (y0 + h01 * (traj.states[i + 1] - y0) + h10 * h * traj.derivatives[i]
           + h11 * h * traj.derivatives[i + 1])
    # Exact node hits return the stored state bit for bit.
    hit = t == nodes[i]
    out[hit] = traj.states[i[hit]]
    return out[0] if scalar else out


def augmented_rhs(model, policy):
    """Vector field of ``[x, V]`` with ``dV/dt = l(x, policy(x))``.

    Works on stacked states of shape ``(..., n + 1)``.
    """
    model = _affine(model)
    n = model.state_dim
    closed_loop_rhs(model, policy)  # validates input dimensions

    def rhs(y):
        x = y[..., :n]
        u = policy(x)
        dx = model.drift(x) + np.einsum("...ij,...j->...i", model.input_map(x), u)
        dv = eval_utility(model, x, u)
        return np.concatenate([dx, np.reshape(dv, np.shape(dx)[:-1] + (1,))], axis=-1)

    return rhs


def augmented_trajectory(model, policy, x0, horizon: float, spec: SolverSpec = SolverSpec(),
                         stop_norm: float | None = None) -> Trajectory:
    """Trajectory of the augmented state ``[x, V]`` starting from ``V = 0``."""
    model = _affine(model)
    x0 = model.check_state(x0)
    y0 = np.concatenate([x0, [0.0]])
    n = model.state_dim
    terminate = None if stop_norm is None else (lambda y: np.linalg.norm(y[:n]) < stop_norm)
    return integrate(augmented_rhs(model, policy), y0, 0.0, horizon, spec, terminate=terminate)


def integrate_augmented(model, policy, x0, horizon: float, spec: SolverSpec = SolverSpec(),
                        stop_norm: float | None = None):
    """Accumulated utility along the closed loop.

    Returns
    -------
    final_state : ndarray
        State at the end of integration.
    value : float
        ``int_0^T l(x(s), u(x(s))) ds`` carried as an extra ODE coordinate.
    """
    traj = augmented_trajectory(model, policy, x0, horizon, spec, stop_norm)
    n = _affine(model).state_dim
    return traj.final_state[:n].copy(), float(traj.final_state[n])


def infinite_horizon_value(model, policy, x0, spec: SolverSpec = SolverSpec(),
                           stop_norm: float = 1e-8, t_max: float = 100.0) -> float:
    """Truncated infinite-horizon cost: stop once ``|x| < stop_norm`` or at ``t_max``."""
    return integrate_augmented(model, policy, x0, t_max, spec, stop_norm)[1]
