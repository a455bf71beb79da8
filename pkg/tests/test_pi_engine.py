from dataclasses import replace

import numpy as np
import pytest

from intrl.basis import BasisExpansion, ValueParams
from intrl.benchmarks import lqr3
from intrl.experiments import pi_config
from intrl.pev import QuadratureSpec
from intrl.pi_engine import PiConfig, kleinman_equivalence_check, newton_error_term, run_policy_iteration

from oracles import OMEGA_STAR_NL2, P_STAR

B3 = BasisExpansion(3)


def p_err(omega):
    return np.linalg.norm(ValueParams(omega, B3).to_matrix() - P_STAR)


@pytest.fixture(scope="module")
def oracle_lqr():
    return run_policy_iteration(pi_config("lqr3", "oracle", 5))


@pytest.fixture(scope="module")
def trap_runs():
    return {n: run_policy_iteration(pi_config("lqr3", "trapezoid", n)) for n in (5, 15)}


def test_oracle_lqr_reaches_riccati(oracle_lqr):
    assert oracle_lqr.converged and not oracle_lqr.failed
    assert p_err(oracle_lqr.final_omega) <= 1e-4
    assert oracle_lqr.records[-1].step_norm <= oracle_lqr.config.tol


def test_oracle_nonlinear_reaches_optimum():
    rep = run_policy_iteration(pi_config("nonlinear2", "oracle", 5))
    assert rep.converged
    np.testing.assert_allclose(rep.final_omega, OMEGA_STAR_NL2, atol=1e-3)


def test_trapezoid_refinement_helps(trap_runs):
    w_star = ValueParams.from_matrix(P_STAR).omega
    e5 = np.linalg.norm(trap_runs[5].final_omega - w_star)
    e15 = np.linalg.norm(trap_runs[15].final_omega - w_star)
    assert e15 < e5


def test_superlinear_contraction(oracle_lqr):
    r = np.array([p_err(w) for w in oracle_lqr.omegas])
    C = r[3:7] / r[2:6] ** 2
    assert np.all(r[3:7] <= C.max() * r[2:6] ** 2)
    assert C.max() / C.min() <= 3.0


def test_error_floor():
    # Keep iterating past convergence: the floor must persist, not drift down.
    w_star = ValueParams.from_matrix(P_STAR).omega
    floors = {}
    for n in (5, 15):
        rep = run_policy_iteration(pi_config("lqr3", "trapezoid", n, tol=1e-300, max_iter=15))
        e = np.linalg.norm(rep.omegas - w_star, axis=1)
        rel = np.abs(np.diff(e[-4:])) / e[-4:-1]
        assert np.all(rel < 0.01)
        floors[n] = e[-1]
    assert floors[5] >= 5 * floors[15]


def test_newton_error_oracle_is_zero(oracle_lqr):
    for i in range(oracle_lqr.iterations):
        err, _ = newton_error_term(oracle_lqr, i)
        assert err <= 1e-8


def test_newton_error_within_bound_and_shrinks(trap_runs):
    e = {}
    for n, rep in trap_runs.items():
        e[n] = []
        for i in range(rep.iterations):
            err, bound = newton_error_term(rep, i)
            assert err <= bound * (1 + 1e-9)
            e[n].append(err)
    k = min(len(e[5]), len(e[15]))
    assert all(a < b for a, b in zip(e[15][:k], e[5][:k]))


def test_kleinman_equivalence():
    worst, per = kleinman_equivalence_check(lqr3(), 6)
    assert len(per) == 6
    assert worst <= 1e-5
    assert per[0] <= 1e-9


def test_kleinman_discrepancy_grows_with_degraded_quadrature():
    exact, _ = kleinman_equivalence_check(lqr3(), 6)
    degraded, per = kleinman_equivalence_check(lqr3(), 6, quadrature=QuadratureSpec("trapezoid"))
    assert degraded > 100 * exact
    assert per[-1] > per[0]


def test_report_determinism():
    a = run_policy_iteration(pi_config("lqr3", "bq-matern", 7, seed=3))
    b = run_policy_iteration(pi_config("lqr3", "bq-matern", 7, seed=3))
    assert a.iterations == b.iterations
    assert np.array_equal(a.omegas, b.omegas)


def test_inadmissible_start_is_reported():
    cfg = pi_config("nonlinear2", "oracle", 5)
    cfg = replace(cfg, plan=replace(cfg.plan, box=2.0))
    rep = run_policy_iteration(cfg)
    assert rep.failed and not rep.converged
    assert rep.failure_iteration == 0
    assert rep.final_omega is None


def test_max_iter_respected():
    rep = run_policy_iteration(pi_config("lqr3", "trapezoid", 5, max_iter=3))
    assert rep.iterations == 3 and not rep.converged


@pytest.mark.parametrize("kw", [dict(tol=0.0), dict(max_iter=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        pi_config("lqr3", "oracle", 5, **kw)


def test_policy_reconstruction(oracle_lqr):
    pol = oracle_lqr.policy(1)
    x = np.array([0.3, -0.2, 1.0])
    P0 = ValueParams(oracle_lqr.records[0].omega, B3).to_matrix()
    np.testing.assert_allclose(pol(x), -(lqr3().B.T @ P0 @ x), atol=1e-12)
    assert isinstance(oracle_lqr.config, PiConfig)
