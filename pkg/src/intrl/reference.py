"""Ground-truth solvers: Lyapunov, Newton-Kleinman Riccati, closed-form optima."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import _affine
from .errors import DimensionError, StabilityError


def _sym_index(n):
    return [(j, k) for j in range(n) for k in range(j, n)]


def solve_lyapunov(A_cl, Q_cl) -> np.ndarray:
    """Solve ``A^T P + P A + Q = 0`` for symmetric ``P``.

    Unknowns are the ``n (n + 1) / 2`` upper-triangular entries of ``P``; each
    upper-triangular equation of the matrix identity gives one row.
    """
    A = np.atleast_2d(np.asarray(A_cl, dtype=float))
    Q = np.atleast_2d(np.asarray(Q_cl, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise DimensionError("A_cl and Q_cl must be square of equal size")
    if np.max(np.abs(Q - Q.T)) > 1e-12 * max(1.0, np.max(np.abs(Q))):
        raise ValueError("Q_cl must be symmetric")
    if np.max(np.linalg.eigvals(A).real) >= 0.0:
        raise StabilityError("A_cl is not Hurwitz; the Lyapunov equation has no PD solution")
    idx = _sym_index(n)
    col = {p: c for c, p in enumerate(idx)}
    col.update({(k, j): c for (j, k), c in list(col.items())})
    M = np.zeros((len(idx), len(idx)))
    rhs = np.empty(len(idx))
    # Entry (r, s) of A^T P + P A is sum_l A[l, r] P[l, s] + P[r, l] A[l, s].
    for row, (r, s) in enumerate(idx):
        for l in range(n):
            M[row, col[(l, s)]] += A[l, r]
            M[row, col[(r, l)]] += A[l, s]
        rhs[row] = -Q[r, s]
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise StabilityError("Lyapunov operator is singular") from exc
    P = np.zeros((n, n))
    for c, (j, k) in enumerate(idx):
        P[j, k] = P[k, j] = sol[c]
    return P


def riccati_residual(A, B, Q, R, P) -> float:
    Rinv = np.linalg.inv(R)
    res = A.T @ P + P @ A + Q - P @ B @ Rinv @ B.T @ P
    return float(np.linalg.norm(res, "fro"))


@dataclass(frozen=True)
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    history: tuple[np.ndarray, ...]
    gains: tuple[np.ndarray, ...]
    residual: float

    @property
    def errors(self) -> np.ndarray:
        """``|P_i - P*|_F`` along the recorded history."""
        return np.array([np.linalg.norm(Pi - self.P, "fro") for Pi in self.history])


def solve_riccati_kleinman(A, B, Q, R, K0=None, tol: float = 1e-12,
                           max_iter: int = 100) -> RiccatiSolution:
    """Newton-Kleinman iteration for the continuous algebraic Riccati equation.

    ``P_i`` solves the Lyapunov equation of ``A - B K_i`` with weight
    ``Q + K_i^T R K_i`` and ``K_{i+1} = R^{-1} B^T P_i``; ``history[i]`` is
    ``P_i`` and ``gains[i]`` is ``K_i``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    B = B.reshape(-1, 1) if B.ndim == 1 else B
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    K = np.zeros((B.shape[1], A.shape[0])) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    if np.max(np.linalg.eigvals(A - B @ K).real) >= 0.0:
        raise StabilityError("initial gain K0 does not stabilize (A, B)")
    Rinv = np.linalg.inv(R)
    history, gains = [], []
    P_prev = None
    for _ in range(max_iter):
        gains.append(K)
        P = solve_lyapunov(A - B @ K, Q + K.T @ R @ K)
        history.append(P)
        K = Rinv @ B.T @ P
        if P_prev is not None and np.linalg.norm(P - P_prev, "fro") <= tol:
            break
        P_prev = P
    else:
        raise StabilityError(f"Newton-Kleinman did not converge in {max_iter} iterations")
    P = history[-1]
    return RiccatiSolution(P, Rinv @ B.T @ P, tuple(history), tuple(gains),
                           riccati_residual(A, B, Q, R, P))


def example2_optimal(x):
    """``V*(x) = x1^2 / 2 + x2^2`` and ``u*(x) = -sin(x1) x2`` for the nonlinear benchmark."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (2,):
        raise DimensionError("nonlinear2 has a 2-dimensional state")
    x1, x2 = x[..., 0], x[..., 1]
    V = 0.5 * x1 ** 2 + x2 ** 2
    u = -np.sin(x1) * x2
    if x.ndim == 1:
        return float(V), float(u)
    return V, u


def hjb_residual(model, grad_value, x):
    """``G(V)(x) = dV f + q - 1/4 dV g R^{-1} g^T dV^T``; zero at the optimum."""
    model = _affine(model)
    x = model.check_state(x)
    dv = np.asarray(grad_value(x), dtype=float)
    f = model.drift(x)
    gtv = np.einsum("...nm,...n->...m", model.input_map(x), dv)
    quad = np.einsum("...i,ij,...j->...", gtv, model.R_inv, gtv)
    return np.sum(dv * f, axis=-1) + model.state_cost(x) - 0.25 * quad


def expected_quadratic_cost(P, sigma: float) -> float:
    """``E[x^T P x]`` for ``x ~ N(0, sigma^2 I)``, i.e. ``sigma^2 tr(P)``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if np.max(np.abs(P - P.T)) > 1e-9 * max(1.0, np.max(np.abs(P))):
        raise ValueError("P must be symmetric")
    return float(sigma ** 2 * np.trace(P))
