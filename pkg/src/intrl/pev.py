"""Policy evaluation by least squares on interval Bellman equations.

For a segment ``[T_k, T_k + dT]`` of a closed-loop trajectory the value of
the current policy satisfies

    omega . (phi(x(T_k)) - phi(x(T_k + dT))) = int l(x(s), u(x(s))) ds,

so stacking ``m`` segments gives ``Theta omega = Xi``. The right-hand side
is estimated from ``N`` evenly spaced state samples with a quadrature rule;
the plant simulation also carries the exact integral as an extra ODE
coordinate, which serves as the oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .basis import BasisExpansion, ValueParams, eval_basis, eval_basis_gradient  # noqa: F401
from .dynamics import _affine, eval_utility
from .errors import BlowUpError, DivergenceError, InadmissiblePolicyError, SingularRegressionError
from .integrators import PLANT_SPEC, SolverSpec, augmented_rhs, integrate, sample_at
from .quadrature import (MaternKernel, QuadratureRule, WienerKernel, apply_rule, bq_rule,
                         even_instants, trapezoid_rule)

QUADRATURE_KINDS = ("trapezoid", "bq-matern", "bq-wiener", "oracle")


@dataclass(frozen=True)
class QuadratureSpec:
    """Which rule turns segment samples into an interval integral.

    ``rho=None`` means the Matérn length scale equals the segment length.
    """

    kind: str = "trapezoid"
    nu: float = 3.5
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in QUADRATURE_KINDS:
            raise ValueError(f"unknown quadrature {self.kind!r}; expected one of {QUADRATURE_KINDS}")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")

    @property
    def label(self) -> str:
        return self.kind

    def rule(self, n_samples: int, interval: float) -> QuadratureRule | None:
        """Rule on the local frame ``[0, interval]``; ``None`` for the oracle."""
        t = even_instants(0.0, interval, n_samples)
        if self.kind == "oracle":
            return None
        if self.kind == "trapezoid":
            return trapezoid_rule(t)
        if self.kind == "bq-wiener":
            return bq_rule(WienerKernel(origin=-interval), t, (0.0, interval))
        rho = interval if self.rho is None else self.rho
        return bq_rule(MaternKernel(self.nu, rho), t, (0.0, interval))


@dataclass(frozen=True)
class SegmentPlan:
    """How trajectory segments are laid out.

    ``n_segments=None`` resolves to ``4 n_phi``. Initial states are uniform
    in ``[-box, box]^n``. A rollout of ``segments_per_rollout`` consecutive
    segments is cut as soon as a segment would start with
    ``|x| < reset_threshold``; a fresh pool state then takes its place.
    """

    n_segments: int | None = None
    interval: float = 0.1
    n_samples: int = 5
    segments_per_rollout: int = 1
    reset_threshold: float = 1e-2
    box: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_segments is not None and self.n_segments < 1:
            raise ValueError("n_segments must be positive")
        if not self.interval > 0:
            raise ValueError("interval must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.segments_per_rollout < 1:
            raise ValueError("segments_per_rollout must be positive")
        if not (self.reset_threshold >= 0 and self.box > 0):
            raise ValueError("reset_threshold must be >= 0 and box > 0")

    def resolved_segments(self, basis_dim: int) -> int:
        return 4 * basis_dim if self.n_segments is None else self.n_segments


@dataclass(frozen=True)
class SegmentBatch:
    """``m`` segments sharing the local sample grid ``offsets``."""

    starts: np.ndarray          # (m, n) x(T_k)
    ends: np.ndarray            # (m, n) x(T_k + dT)
    samples: np.ndarray         # (m, N, n)
    t_start: np.ndarray         # (m,) T_k within its rollout
    offsets: np.ndarray         # (N,) sample instants minus T_k
    xi_oracle: np.ndarray       # (m,) exact interval integrals
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.starts)

    @property
    def interval(self) -> float:
        return float(self.offsets[-1])

    @property
    def n_samples(self) -> int:
        return len(self.offsets)

    def __iter__(self):
        for k in range(len(self)):
            yield (self.starts[k], self.ends[k]), self.samples[k]


def draw_pool(state_dim: int, count: int, box: float, rng, min_norm: float = 0.0) -> np.ndarray:
    """Uniform states in ``[-box, box]^n`` with norm at least ``min_norm``."""
    out = np.empty((0, state_dim))
    while len(out) < count:
        x = rng.uniform(-box, box, size=(count, state_dim))
        out = np.vstack([out, x[np.linalg.norm(x, axis=1) >= min_norm]])
    return out[:count]


def _simulate(model, policy, x0s, plan: SegmentPlan, spec: SolverSpec):
    n = model.state_dim
    spr = plan.segments_per_rollout
    offsets = even_instants(0.0, plan.interval, plan.n_samples)
    grid = (np.arange(spr)[:, None] * plan.interval + offsets[None, :]).reshape(-1)
    grid = np.sort(grid)
    grid = grid[np.concatenate([[True], np.diff(grid) > 1e-12 * plan.interval])]
    y0 = np.hstack([x0s, np.zeros((len(x0s), 1))])
    try:
        traj = integrate(augmented_rhs(model, policy), y0, 0.0, spr * plan.interval,
                         spec, stops=grid)
    except (BlowUpError, DivergenceError) as exc:
        raise InadmissiblePolicyError(f"closed loop left the admissible region: {exc}") from exc
    out = []
    for k in range(spr):
        inst = k * plan.interval + offsets
        ys = sample_at(traj, inst)            # (N, R, n + 1)
        out.append(np.moveaxis(ys, 1, 0))     # (R, N, n + 1)
    return np.stack(out, axis=1), offsets, traj.solver_meta  # (R, spr, N, n + 1)


def collect_segments(model, policy, pool=None, plan: SegmentPlan = SegmentPlan(),
                     basis_dim: int | None = None, spec: SolverSpec = PLANT_SPEC) -> SegmentBatch:
    """Simulate the closed loop and cut it into interval segments.

    Parameters
    ----------
    model : ControlAffineModel or LinearQuadraticModel
    policy : callable
        Current feedback policy.
    pool : ndarray, optional
        Initial states, one per rollout. Drawn from ``plan`` when omitted.
    plan : SegmentPlan
    basis_dim : int, optional
        Needed only to resolve ``plan.n_segments=None``; defaults to the
        quadratic basis size.
    spec : SolverSpec
        Plant solver, high accuracy by default.
    """
    model = _affine(model)
    n = model.state_dim
    basis_dim = basis_dim or n * (n + 1) // 2
    m = plan.resolved_segments(basis_dim)
    spr = plan.segments_per_rollout
    if pool is None:
        pool = draw_pool(n, math.ceil(m / spr), plan.box, np.random.default_rng(plan.seed),
                         plan.reset_threshold)
    pool = model.check_state(np.atleast_2d(pool))
    refill = np.random.default_rng([plan.seed, 1])
    chunks, t_starts = [], []
    have, rounds, n_steps = 0, 0, 0
    while have < m:
        if rounds > 100:
            raise InadmissiblePolicyError("could not gather enough segments above the reset threshold")
        data, offsets, meta = _simulate(model, policy, pool, plan, spec)
        n_steps += meta.n_steps
        for r in range(len(pool)):
            for k in range(spr):
                start = data[r, k, 0, :n]
                if np.linalg.norm(start) < plan.reset_threshold:
                    break
                chunks.append(data[r, k])
                t_starts.append(k * plan.interval)
        have = len(chunks)
        rounds += 1
        pool = draw_pool(n, math.ceil((m - have) / spr) if have < m else 0, plan.box,
                         refill, plan.reset_threshold)
    seg = np.stack(chunks[:m])            # (m, N, n + 1)
    return SegmentBatch(
        starts=seg[:, 0, :n].copy(),
        ends=seg[:, -1, :n].copy(),
        samples=seg[:, :, :n].copy(),
        t_start=np.array(t_starts[:m]),
        offsets=offsets,
        xi_oracle=seg[:, -1, n] - seg[:, 0, n],
        meta={"rounds": rounds, "solver_steps": n_steps},
    )


def estimate_xi(segments: SegmentBatch, policy, model, rule: QuadratureRule | None,
                norm_constant: float = 1.0):
    """Quadrature estimates of the segment integrals and their error indicators.

    With ``rule=None`` the oracle integrals are returned with zero error.
    ``delta_xi`` is the rule's posterior standard deviation scaled by
    ``norm_constant``; it is a relative indicator, not a certified bound.
    """
    if rule is None:
        return segments.xi_oracle.copy(), np.zeros(len(segments))
    if rule.n != segments.n_samples:
        raise ValueError(f"rule has {rule.n} nodes, segments carry {segments.n_samples} samples")
    x = segments.samples
    vals = np.asarray(eval_utility(model, x, policy(x)))   # (m, N)
    xi = apply_rule(rule, vals.T)
    std = rule.posterior_std or 0.0
    return np.atleast_1d(xi), np.full(len(segments), std * norm_constant)


@dataclass(frozen=True)
class RegressionSystem:
    """``Theta omega = Xi`` with per-row error indicators ``XiBound``."""

    Theta: np.ndarray
    Xi: np.ndarray
    XiBound: np.ndarray
    t_start: np.ndarray | None = None
    n_samples: int | None = None
    Xi_reference: np.ndarray | None = None

    def __post_init__(self):
        m, p = self.Theta.shape
        if m < p:
            raise SingularRegressionError(f"{m} segments cannot determine {p} coefficients")
        if self.Xi.shape != (m,) or self.XiBound.shape != (m,):
            raise ValueError("Theta, Xi and XiBound must have matching rows")
        if np.any(self.XiBound < 0):
            raise ValueError("XiBound must be nonnegative")


def build_regression(basis: BasisExpansion, segments: SegmentBatch, xi, xi_bound) -> RegressionSystem:
    theta = eval_basis(basis, segments.starts) - eval_basis(basis, segments.ends)
    return RegressionSystem(theta, np.asarray(xi, dtype=float), np.asarray(xi_bound, dtype=float),
                            segments.t_start, segments.n_samples, segments.xi_oracle)


@dataclass(frozen=True)
class RegressionDiagnostics:
    residual_norm: float
    condition: float
    pinv_norm: float
    bound: float                   # pinv_norm * |XiBound|
    actual_bound: float | None     # pinv_norm * |Xi - Xi_reference|
    actual_error: float | None     # |omega - omega_reference|
    bound_holds: bool | None


def solve_regression(sys: RegressionSystem):
    """Least-squares ``omega`` by Householder QR.

    Returns
    -------
    omega : ndarray
    diagnostics : RegressionDiagnostics
        When ``Xi_reference`` is present, the solution error against it is
        checked against ``|pinv(Theta)|_2 |Xi - Xi_reference|_2``.
    """
    Theta = sys.Theta
    s = linalg.svdvals(Theta)
    tol = max(Theta.shape) * np.finfo(float).eps * s[0] if s[0] > 0 else 0.0
    if s[0] == 0 or s[-1] <= tol:
        raise SingularRegressionError(
            f"regression matrix has numerical rank {int(np.sum(s > tol))} < {Theta.shape[1]}; "
            "the segments do not satisfy the persistence (full column rank) condition")
    Qm, Rm = linalg.qr(Theta, mode="economic")
    omega = linalg.solve_triangular(Rm, Qm.T @ sys.Xi)
    pinv_norm = 1.0 / s[-1]
    actual_bound = actual_error = holds = None
    if sys.Xi_reference is not None:
        omega_ref = linalg.solve_triangular(Rm, Qm.T @ sys.Xi_reference)
        actual_error = float(np.linalg.norm(omega - omega_ref))
        actual_bound = float(pinv_norm * np.linalg.norm(sys.Xi - sys.Xi_reference))
        holds = actual_error <= actual_bound * (1 + 1e-8) + 1e-14 * max(1.0, np.linalg.norm(omega))
    diag = RegressionDiagnostics(
        residual_norm=float(np.linalg.norm(Theta @ omega - sys.Xi)),
        condition=float(s[0] / s[-1]),
        pinv_norm=float(pinv_norm),
        bound=float(pinv_norm * np.linalg.norm(sys.XiBound)),
        actual_bound=actual_bound,
        actual_error=actual_error,
        bound_holds=holds,
    )
    return omega, diag
