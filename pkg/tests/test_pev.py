import numpy as np
import pytest

from intrl.basis import BasisExpansion, ValueParams
from intrl.benchmarks import LQR3_A, LQR3_B, LQR3_Q, lqr3, lqr3_initial_policy
from intrl.errors import InadmissiblePolicyError, SingularRegressionError
from intrl.dynamics import ExplicitPolicy, closed_loop_rhs
from intrl.integrators import PLANT_SPEC, integrate
from intrl.pev import (QuadratureSpec, RegressionSystem, SegmentPlan, build_regression,
                       collect_segments, estimate_xi, solve_regression)
from intrl.quadrature import even_instants, trapezoid_rule
from intrl.reference import solve_lyapunov

from oracles import P0_LYAP

K_STAB = np.array([[1.0, 2.0, 1.5]])


def stabilizing():
    return lqr3_initial_policy(K_STAB)


def test_collect_segments_bookkeeping():
    seg = collect_segments(lqr3(), lqr3_initial_policy(), plan=SegmentPlan(n_segments=12))
    assert len(seg) == 12
    assert seg.samples.shape == (12, 5, 3)
    assert np.all(np.isfinite(seg.samples))
    np.testing.assert_array_equal(seg.samples[:, 0], seg.starts)
    np.testing.assert_array_equal(seg.samples[:, -1], seg.ends)
    np.testing.assert_allclose(seg.offsets, even_instants(0, 0.1, 5))


def test_endpoints_lie_on_trajectory():
    seg = collect_segments(lqr3(), stabilizing(), plan=SegmentPlan(n_segments=4, segments_per_rollout=2))
    rhs = closed_loop_rhs(lqr3(), stabilizing())
    x1 = integrate(rhs, seg.starts[0], 0.0, 0.1, PLANT_SPEC).final_state
    np.testing.assert_allclose(seg.ends[0], x1, atol=1e-10)
    # Consecutive segments of one rollout chain together.
    np.testing.assert_allclose(seg.starts[1], seg.ends[0], atol=1e-12)


def test_reset_threshold_respected():
    plan = SegmentPlan(n_segments=30, segments_per_rollout=10, reset_threshold=1.0, box=1.2)
    seg = collect_segments(lqr3(), stabilizing(), plan=plan)
    assert len(seg) == 30
    assert np.all(np.linalg.norm(seg.starts, axis=1) >= 1.0)
    plan = SegmentPlan(n_segments=12, reset_threshold=1e-3)
    seg = collect_segments(lqr3(), stabilizing(), plan=plan)
    assert np.all(np.linalg.norm(seg.starts, axis=1) >= 1e-3)


def test_theta_rank_and_condition():
    seg = collect_segments(lqr3(), lqr3_initial_policy(), plan=SegmentPlan(n_segments=12))
    sys = build_regression(BasisExpansion(3), seg, seg.xi_oracle, np.zeros(12))
    assert np.linalg.matrix_rank(sys.Theta) == 6
    assert np.linalg.cond(sys.Theta) < 1e8


def test_blow_up_is_inadmissible():
    grow = ExplicitPolicy(lambda x: 1e4 * x[..., 2:3] ** 3, input_dim=1)
    with pytest.raises(InadmissiblePolicyError):
        collect_segments(lqr3(), grow, plan=SegmentPlan(n_segments=6, interval=1.0, box=5.0))


def test_constant_utility_integrates_exactly():
    seg = collect_segments(lqr3(), lqr3_initial_policy(), plan=SegmentPlan(n_segments=6))
    # Frozen states make the utility constant along each segment.
    const = seg.__class__(seg.starts, seg.starts, np.repeat(seg.starts[:, None], 5, 1),
                          seg.t_start, seg.offsets, seg.xi_oracle)
    c = np.sum(seg.starts ** 2, axis=1)
    for spec in (QuadratureSpec("trapezoid"), QuadratureSpec("bq-wiener")):
        xi, _ = estimate_xi(const, lqr3_initial_policy(), lqr3(), spec.rule(5, 0.1))
        np.testing.assert_allclose(xi, 0.1 * c, rtol=1e-14)


def test_matern_constant_defect_is_small_and_shrinks():
    # Constants are not in the Matern RKHS, so the weights only nearly sum to dT.
    defects = [abs(QuadratureSpec("bq-matern").rule(n, 0.1).weights.sum() - 0.1) / 0.1
               for n in (5, 10, 15)]
    assert defects[0] < 1e-3
    assert defects[0] > defects[1] > defects[2]


def test_trapezoid_error_shrinks_with_samples():
    errs = []
    for n in (5, 9):
        seg = collect_segments(lqr3(), stabilizing(), plan=SegmentPlan(n_segments=12, n_samples=n))
        xi, _ = estimate_xi(seg, stabilizing(), lqr3(), trapezoid_rule(even_instants(0, 0.1, n)))
        errs.append(np.max(np.abs(xi - seg.xi_oracle)))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_xi_bound_for_trapezoid():
    seg = collect_segments(lqr3(), stabilizing(), plan=SegmentPlan(n_segments=8, n_samples=7))
    _, dxi = estimate_xi(seg, stabilizing(), lqr3(), trapezoid_rule(even_instants(0, 0.1, 7)))
    np.testing.assert_allclose(dxi, np.sqrt(0.1 ** 3 / 12 / 36), rtol=1e-12)


def test_oracle_pev_matches_lyapunov_value():
    seg = collect_segments(lqr3(), stabilizing(), plan=SegmentPlan())
    sys = build_regression(BasisExpansion(3), seg, *estimate_xi(seg, stabilizing(), lqr3(), None))
    omega, diag = solve_regression(sys)
    K = K_STAB
    P = solve_lyapunov(LQR3_A - LQR3_B @ K, LQR3_Q + K.T @ K)
    assert np.linalg.norm(ValueParams(omega, BasisExpansion(3)).to_matrix() - P) <= 1e-6
    assert diag.bound_holds


def test_exact_xi_recovers_chosen_quadratic(rng):
    b = BasisExpansion(3)
    starts = rng.normal(size=(24, 3))
    ends = starts * 0.8 + 0.1 * rng.normal(size=(24, 3))
    P = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 3.0]])
    theta = b(starts) - b(ends)
    xi = np.einsum("ni,ij,nj->n", starts, P, starts) - np.einsum("ni,ij,nj->n", ends, P, ends)
    omega, diag = solve_regression(RegressionSystem(theta, xi, np.zeros(24)))
    assert diag.residual_norm < 1e-8
    np.testing.assert_allclose(omega, ValueParams.from_matrix(P, b).omega, atol=1e-10)
    omega0, _ = solve_regression(RegressionSystem(theta, np.zeros(24), np.zeros(24)))
    np.testing.assert_array_equal(omega0, 0.0)


def test_perturbation_bound(rng):
    b = BasisExpansion(3)
    starts = rng.normal(size=(24, 3))
    theta = b(starts) - b(0.7 * starts)
    xi = rng.normal(size=24)
    omega, _ = solve_regression(RegressionSystem(theta, xi, np.zeros(24)))
    for _ in range(50):
        delta = rng.normal(size=24)
        delta *= 1e-3 / np.linalg.norm(delta)
        pert, diag = solve_regression(RegressionSystem(theta, xi + delta, np.full(24, 1e-3 / np.sqrt(24)),
                                                       Xi_reference=xi))
        assert np.linalg.norm(pert - omega) <= diag.bound * (1 + 1e-9)
        assert diag.bound_holds


def test_rank_deficiency_raises():
    b = BasisExpansion(3)
    x = np.tile([1.0, 0.0, 0.0], (10, 1))
    theta = b(x) - b(0.5 * x)
    with pytest.raises(SingularRegressionError, match="persistence"):
        solve_regression(RegressionSystem(theta, np.ones(10), np.zeros(10)))


def test_too_few_rows():
    with pytest.raises(SingularRegressionError):
        RegressionSystem(np.ones((3, 6)), np.ones(3), np.zeros(3))


def test_zero_gain_oracle_value():
    seg = collect_segments(lqr3(), lqr3_initial_policy(), plan=SegmentPlan())
    sys = build_regression(BasisExpansion(3), seg, seg.xi_oracle, np.zeros(len(seg)))
    omega, _ = solve_regression(sys)
    np.testing.assert_allclose(ValueParams(omega, BasisExpansion(3)).to_matrix(), P0_LYAP, atol=1e-9)
