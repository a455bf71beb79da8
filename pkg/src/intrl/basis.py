"""Quadratic monomial basis and the value parameters defined over it.

The basis is the symmetric reduction of ``x ⊗ x``: one monomial ``x_j x_k``
per unordered pair ``j <= k``, in lexicographic order. The full Kronecker
product would duplicate every cross term and make the regression matrix
structurally rank deficient.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class BasisExpansion:
    """Quadratic monomials ``phi(x) = (x_j x_k)_{j<=k}``."""

    state_dim: int
    monomials: tuple[tuple[int, int], ...] = field(init=False)

    def __post_init__(self):
        if self.state_dim < 1:
            raise DimensionError("state_dim must be positive")
        pairs = tuple((j, k) for j in range(self.state_dim) for k in range(j, self.state_dim))
        object.__setattr__(self, "monomials", pairs)
        object.__setattr__(self, "_j", np.array([p[0] for p in pairs]))
        object.__setattr__(self, "_k", np.array([p[1] for p in pairs]))

    @property
    def dim(self) -> int:
        """Number of basis functions, ``n (n + 1) / 2``."""
        return len(self.monomials)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.state_dim,):
            raise DimensionError(
                f"state has trailing dimension {x.shape[-1:]} but basis expects {self.state_dim}")
        return x

    def __call__(self, x) -> np.ndarray:
        return eval_basis(self, x)


def eval_basis(basis: BasisExpansion, x) -> np.ndarray:
    """Evaluate ``phi(x)``; ``x`` may carry leading batch axes."""
    x = basis._check(x)
    return x[..., basis._j] * x[..., basis._k]


def eval_basis_gradient(basis: BasisExpansion, x) -> np.ndarray:
    """Jacobian of ``phi`` with shape ``(..., n_phi, n)``.

    Row ``(j, k)`` holds ``d(x_j x_k)/dx``: ``x_k`` in column ``j`` plus
    ``x_j`` in column ``k`` (which gives ``2 x_j`` on the diagonal terms).
    """
    x = basis._check(x)
    jac = np.zeros(x.shape[:-1] + (basis.dim, basis.state_dim))
    rows = np.arange(basis.dim)
    jac[..., rows, basis._j] += x[..., basis._k]
    jac[..., rows, basis._k] += x[..., basis._j]
    return jac


@dataclass(frozen=True)
class ValueParams:
    """Coefficients ``omega`` of the value surrogate ``V(x) = omega . phi(x)``."""

    omega: np.ndarray
    basis: BasisExpansion

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(-1)
        if omega.shape != (self.basis.dim,):
            raise DimensionError(f"omega has length {omega.size}, basis has {self.basis.dim} terms")
        if not np.all(np.isfinite(omega)):
            raise ValueError("omega must be finite")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)

    def value(self, x) -> np.ndarray:
        return eval_basis(self.basis, x) @ self.omega

    def gradient(self, x) -> np.ndarray:
        """``grad V(x)`` with shape ``(..., n)``."""
        return np.einsum("...kn,k->...n", eval_basis_gradient(self.basis, x), self.omega)

    def to_matrix(self) -> np.ndarray:
        """Symmetric ``P`` with ``x^T P x == omega . phi(x)``."""
        n = self.basis.state_dim
        P = np.zeros((n, n))
        for c, (j, k) in zip(self.omega, self.basis.monomials):
            if j == k:
                P[j, j] = c
            else:
                P[j, k] = P[k, j] = c / 2.0
        return P

    @classmethod
    def from_matrix(cls, P, basis: BasisExpansion | None = None) -> "ValueParams":
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionError("P must be square")
        basis = basis or BasisExpansion(P.shape[0])
        if basis.state_dim != P.shape[0]:
            raise DimensionError("basis and P disagree on the state dimension")
        Ps = 0.5 * (P + P.T)
        omega = [Ps[j, k] if j == k else 2.0 * Ps[j, k] for j, k in basis.monomials]
        return cls(np.array(omega), basis)
