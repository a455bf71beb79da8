"""Integral reinforcement learning policy iteration.

Each iteration simulates the current policy, estimates the segment
integrals with the configured quadrature, solves the regression for the
value coefficients and takes the greedy policy of the resulting value as the
next policy.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .benchmarks import lqr3_initial_policy
from .basis import BasisExpansion, ValueParams, eval_basis
from .dynamics import FeatureGradientPolicy, LinearQuadraticModel, _affine
from .errors import InadmissiblePolicyError, SingularRegressionError
from .pev import (QuadratureSpec, RegressionDiagnostics, SegmentPlan, build_regression,
                  collect_segments, estimate_xi, solve_regression)
from .reference import solve_riccati_kleinman


@dataclass(frozen=True)
class PiConfig:
    """Everything that determines one policy-iteration run."""

    model: object
    initial_policy: object
    quadrature: QuadratureSpec = QuadratureSpec("trapezoid")
    plan: SegmentPlan = SegmentPlan()
    basis: BasisExpansion | None = None
    tol: float = 1e-9
    max_iter: int = 50
    norm_constant: float = 1.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.basis is None:
            object.__setattr__(self, "basis", BasisExpansion(_affine(self.model).state_dim))

    @property
    def n_samples(self) -> int:
        return self.plan.n_samples

    def with_samples(self, n: int) -> "PiConfig":
        return replace(self, plan=replace(self.plan, n_samples=n))


@dataclass(frozen=True)
class IterationRecord:
    """Policy ``i`` and the value coefficients estimated for it."""

    index: int
    omega: np.ndarray
    step_norm: float
    diagnostics: RegressionDiagnostics
    phi_sup: float          # max |phi_k| over the visited sample states

    @property
    def pinv_bound(self) -> float:
        return self.diagnostics.bound


@dataclass(frozen=True)
class PiReport:
    config: PiConfig
    records: tuple[IterationRecord, ...]
    converged: bool
    failed: bool = False
    failure_iteration: int | None = None
    failure_message: str = ""
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def omegas(self) -> np.ndarray:
        return np.array([r.omega for r in self.records])

    @property
    def final_omega(self) -> np.ndarray | None:
        return self.records[-1].omega if self.records else None

    def policy(self, i: int):
        """Policy evaluated at iteration ``i`` (0 is the initial policy)."""
        if i == 0:
            return self.config.initial_policy
        params = ValueParams(self.records[i - 1].omega, self.config.basis)
        return FeatureGradientPolicy(params, self.config.model)


def _evaluate(cfg: PiConfig, policy, quadrature: QuadratureSpec, rule_cache: dict):
    segments = collect_segments(cfg.model, policy, plan=cfg.plan, basis_dim=cfg.basis.dim)
    key = (quadrature, cfg.plan.n_samples, cfg.plan.interval)
    if key not in rule_cache:
        rule_cache[key] = quadrature.rule(cfg.plan.n_samples, cfg.plan.interval)
    xi, dxi = estimate_xi(segments, policy, cfg.model, rule_cache[key], cfg.norm_constant)
    omega, diag = solve_regression(build_regression(cfg.basis, segments, xi, dxi))
    if diag.bound_holds is False:
        raise AssertionError("least-squares error exceeds the pseudo-inverse perturbation bound")
    phi_sup = float(np.max(np.abs(eval_basis(cfg.basis, segments.samples))))
    return omega, diag, phi_sup, segments


def run_policy_iteration(cfg: PiConfig) -> PiReport:
    """Alternate policy evaluation and greedy improvement until the
    coefficient increment drops to ``cfg.tol`` or ``cfg.max_iter`` is hit.

    A policy that drives the plant out of bounds, a learned value that is not
    positive on the visited states, or a rank-deficient regression ends the
    run with ``failed=True`` instead of raising.
    """
    records: list[IterationRecord] = []
    policy = cfg.initial_policy
    cache: dict = {}
    prev = None
    for i in range(cfg.max_iter):
        try:
            omega, diag, phi_sup, seg = _evaluate(cfg, policy, cfg.quadrature, cache)
            values = eval_basis(cfg.basis, seg.starts) @ omega
            if np.any(values <= 0):
                raise InadmissiblePolicyError(
                    "estimated value is not positive on the visited states")
        except (InadmissiblePolicyError, SingularRegressionError) as exc:
            return PiReport(cfg, tuple(records), False, True, i, str(exc))
        step = float("inf") if prev is None else float(np.linalg.norm(omega - prev))
        omega.setflags(write=False)
        records.append(IterationRecord(i, omega, step, diag, phi_sup))
        if step <= cfg.tol:
            return PiReport(cfg, tuple(records), True)
        prev = omega
        policy = FeatureGradientPolicy(ValueParams(omega, cfg.basis), cfg.model)
    return PiReport(cfg, tuple(records), False)


def newton_error_term(report: PiReport, i: int, oracle_cfg: PiConfig | None = None):
    """Finite-basis estimate of the Newton perturbation at iteration ``i``.

    Re-evaluates policy ``i`` with the oracle integrals and returns
    ``(E_i, bound_i)``: ``E_i = |omega_i - omega_oracle_i|_2 * phi_sup`` and
    ``bound_i = |pinv(Theta)|_2 |Xi_hat - Xi|_2 * phi_sup``, where ``phi_sup``
    is ``max |phi_k|`` over the sampled states.
    """
    cfg = report.config
    oracle_cfg = oracle_cfg or replace(cfg, quadrature=QuadratureSpec("oracle"))
    rec = report.records[i]
    omega_oracle, _, phi_sup, _ = _evaluate(oracle_cfg, report.policy(i), oracle_cfg.quadrature, {})
    err = float(np.linalg.norm(rec.omega - omega_oracle)) * phi_sup
    return err, rec.diagnostics.actual_bound * phi_sup


def kleinman_equivalence_check(model: LinearQuadraticModel, iterations: int = 6, K0=None,
                               quadrature: QuadratureSpec = QuadratureSpec("oracle"),
                               plan: SegmentPlan = SegmentPlan()):
    """Compare IntRL iterates with Newton-Kleinman iterates from the same gain.

    Returns ``(max_discrepancy, per_iteration)`` with Frobenius norms of
    ``P_i(IntRL) - P_i(NK)`` for ``i = 0 .. iterations - 1``.
    """
    n, m_in = model.B.shape
    K0 = np.zeros((m_in, n)) if K0 is None else np.atleast_2d(K0)
    nk = solve_riccati_kleinman(model.A, model.B, model.Q, model.R, K0)
    cfg = PiConfig(model, lqr3_initial_policy(K0), quadrature, plan, tol=1e-300, max_iter=iterations)
    report = run_policy_iteration(cfg)
    if report.failed:
        raise InadmissiblePolicyError(
            f"IntRL run failed at iteration {report.failure_iteration}: {report.failure_message}")
    diffs = []
    for i, rec in enumerate(report.records):
        P_rl = ValueParams(rec.omega, cfg.basis).to_matrix()
        P_nk = nk.history[min(i, len(nk.history) - 1)]
        diffs.append(float(np.linalg.norm(P_rl - P_nk, "fro")))
    return max(diffs), np.array(diffs)
