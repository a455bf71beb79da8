"""Control-affine plants, utilities and static feedback policies.

All callables in this module work on a single state of shape ``(n,)`` or on
a batch of shape ``(..., n)``; batching is what lets the plant simulator
advance many segments in one integrator call.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import BasisExpansion, ValueParams, eval_basis_gradient
from .errors import DimensionError, ModelError

VectorField = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ControlAffineModel:
    """Plant ``dx/dt = f(x) + g(x) u`` with utility ``q(x) + u^T R u``.

    Parameters
    ----------
    state_dim, input_dim : int
        Dimensions ``n_x`` and ``n_u``.
    drift : callable
        ``f``, maps ``(..., n_x) -> (..., n_x)``.
    input_map : callable
        ``g``, maps ``(..., n_x) -> (..., n_x, n_u)``.
    state_cost : callable
        ``q``, maps ``(..., n_x) -> (...)``; nonnegative with ``q(0) = 0``.
    input_weight : array_like
        Constant symmetric positive definite ``R``.
    name : str
        Label used in reports.
    """

    state_dim: int
    input_dim: int
    drift: VectorField
    input_map: Callable[[np.ndarray], np.ndarray]
    state_cost: Callable[[np.ndarray], np.ndarray]
    input_weight: np.ndarray
    name: str = "model"

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ModelError("state_dim and input_dim must be positive")
        R = np.atleast_2d(np.asarray(self.input_weight, dtype=float))
        if R.shape != (self.input_dim, self.input_dim):
            raise DimensionError(f"R has shape {R.shape}, expected {(self.input_dim,) * 2}")
        if np.max(np.abs(R - R.T)) > 1e-12:
            raise ModelError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0.0:
            raise ModelError("R must be positive definite")
        R.setflags(write=False)
        object.__setattr__(self, "input_weight", R)
        object.__setattr__(self, "_R_inv", np.linalg.inv(R))

        origin = np.zeros(self.state_dim)
        f0 = np.asarray(self.drift(origin), dtype=float)
        if f0.shape != (self.state_dim,):
            raise DimensionError(f"drift returned shape {f0.shape} at the origin")
        if np.max(np.abs(f0)) > 1e-12:
            raise ModelError("drift must vanish at the origin")
        g0 = np.asarray(self.input_map(origin), dtype=float)
        if g0.shape != (self.state_dim, self.input_dim):
            raise DimensionError(f"input_map returned shape {g0.shape}")
        if abs(float(self.state_cost(origin))) > 1e-12:
            raise ModelError("state cost must vanish at the origin")
        probe = np.random.default_rng(12345).uniform(-1.0, 1.0, size=(32, self.state_dim))
        if np.min(self.state_cost(probe)) < 0.0:
            raise ModelError("state cost must be nonnegative")

    @property
    def R_inv(self) -> np.ndarray:
        return self._R_inv

    def check_state(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.state_dim,):
            raise DimensionError(f"state has trailing dimension {x.shape[-1:]}, expected {self.state_dim}")
        return x

    def check_input(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u.reshape(1)
        if u.shape[-1:] != (self.input_dim,):
            raise DimensionError(f"input has trailing dimension {u.shape[-1:]}, expected {self.input_dim}")
        return u


@dataclass(frozen=True)
class LinearQuadraticModel:
    """``dx/dt = A x + B u`` with utility ``x^T Q x + u^T R u``."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    name: str = "lqr"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = B.shape
        if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
            raise DimensionError("inconsistent A, B, Q, R shapes")
        if np.max(np.abs(Q - Q.T)) > 1e-12 or np.max(np.abs(R - R.T)) > 1e-12:
            raise ModelError("Q and R must be symmetric")
        if np.min(np.linalg.eigvalsh(Q)) < -1e-12:
            raise ModelError("Q must be positive semidefinite")
        for name, M in zip("ABQR", (A, B, Q, R)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        object.__setattr__(self, "_affine", ControlAffineModel(
            state_dim=n,
            input_dim=m,
            drift=lambda x: np.asarray(x) @ A.T,
            input_map=lambda x: np.broadcast_to(B, np.shape(x)[:-1] + B.shape),
            state_cost=lambda x: np.einsum("...i,ij,...j->...", x, Q, x),
            input_weight=R,
            name=self.name,
        ))

    @property
    def state_dim(self) -> int:
        return self.B.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def as_control_affine(self) -> ControlAffineModel:
        return self._affine


def _affine(model) -> ControlAffineModel:
    return model.as_control_affine() if isinstance(model, LinearQuadraticModel) else model


class ExplicitPolicy:
    """Static feedback given by a closure ``x -> u``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], input_dim: int, name: str = "explicit"):
        self.fn = fn
        self.input_dim = input_dim
        self.name = name

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u = np.asarray(self.fn(x), dtype=float)
        if self.input_dim == 1 and u.shape == x.shape[:-1]:
            u = u[..., None]
        if u.shape != x.shape[:-1] + (self.input_dim,):
            raise DimensionError(f"policy returned shape {u.shape} for state shape {x.shape}")
        return u

    def __repr__(self):
        return f"ExplicitPolicy({self.name!r})"


class FeatureGradientPolicy:
    """Greedy policy ``u = -1/2 R^{-1} g(x)^T grad(phi)(x)^T omega``."""

    def __init__(self, params: ValueParams, model):
        model = _affine(model)
        if params.basis.state_dim != model.state_dim:
            raise DimensionError("basis and model disagree on the state dimension")
        self.params = params
        self.model = model
        self.input_dim = model.input_dim

    def __call__(self, x) -> np.ndarray:
        return policy_action(self.params.omega, self.params.basis, self.model, x)

    def __repr__(self):
        return f"FeatureGradientPolicy(omega={np.array2string(self.params.omega, precision=6)})"


Policy = ExplicitPolicy | FeatureGradientPolicy


def closed_loop_rhs(model, policy) -> VectorField:
    """Return the autonomous vector field ``x -> f(x) + g(x) policy(x)``."""
    model = _affine(model)
    if policy.input_dim != model.input_dim:
        raise DimensionError(f"policy has {policy.input_dim} inputs, model has {model.input_dim}")

    def rhs(x):
        x = model.check_state(x)
        u = policy(x)
        return model.drift(x) + np.einsum("...ij,...j->...i", model.input_map(x), u)

    return rhs


def eval_utility(model, x, u) -> np.ndarray | float:
    """``l(x, u) = q(x) + u^T R u``."""
    model = _affine(model)
    x = model.check_state(x)
    u = model.check_input(u)
    val = model.state_cost(x) + np.einsum("...i,ij,...j->...", u, model.input_weight, u)
    return float(val) if np.ndim(val) == 0 else val


def policy_action(omega, basis: BasisExpansion, model, x) -> np.ndarray:
    """Greedy input ``-1/2 R^{-1} g(x)^T grad(phi)(x)^T omega`` at ``x``."""
    model = _affine(model)
    omega = np.asarray(omega, dtype=float).reshape(-1)
    if omega.size != basis.dim:
        raise DimensionError(f"omega has length {omega.size}, basis has {basis.dim} terms")
    x = model.check_state(x)
    grad_v = np.einsum("...kn,k->...n", eval_basis_gradient(basis, x), omega)
    gtv = np.einsum("...nm,...n->...m", model.input_map(x), grad_v)
    return -0.5 * gtv @ model.R_inv.T
