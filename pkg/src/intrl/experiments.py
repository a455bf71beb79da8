"""Reproducible numerical studies that write CSV artifacts."""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.integrate import simpson

from . import benchmarks as bm
from .basis import BasisExpansion, ValueParams
from .dynamics import FeatureGradientPolicy
from .errors import FitError
from .integrators import SolverSpec, integrate_augmented
from .pev import QuadratureSpec, SegmentPlan
from .pi_engine import PiConfig, PiReport, run_policy_iteration
from .quadrature import MaternKernel, WienerKernel, apply_rule, bq_rule, even_instants
from .reference import example2_optimal, expected_quadratic_cost, solve_riccati_kleinman

EXAMPLES = ("lqr3", "nonlinear2")
RULES = ("trapezoid", "bq-matern")
CSV_HEADER = ("example", "rule", "N", "param_err", "policy_err", "cost_gap", "iters", "seed")
COST_SIGMA = 100.0
# Half-width of the initial-state box per example.
POOL_BOX = {"lqr3": 2.0, "nonlinear2": 0.5}
EVAL_STATES = 1000


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(path, header, rows) -> str:
    """Write rows with LF endings and minimal quoting; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
    return text


# -- convergence sweeps -------------------------------------------------------

@dataclass(frozen=True)
class StudyRow:
    example: str
    rule: str
    N: int
    param_err: float
    policy_err: float
    cost_gap: float
    iters: int
    seed: int

    @property
    def ok(self) -> bool:
        return self.iters >= 0


@dataclass(frozen=True)
class ExampleSetup:
    name: str
    model: object
    initial_policy: object
    omega_star: np.ndarray
    box: float


def example_setup(example: str) -> ExampleSetup:
    if example == "lqr3":
        sol = solve_riccati_kleinman(bm.LQR3_A, bm.LQR3_B, bm.LQR3_Q, bm.LQR3_R)
        w = ValueParams.from_matrix(sol.P).omega
        return ExampleSetup("lqr3", bm.lqr3(), bm.lqr3_initial_policy(), w, POOL_BOX["lqr3"])
    if example == "nonlinear2":
        return ExampleSetup("nonlinear2", bm.nonlinear2(), bm.nonlinear2_initial_policy(),
                            bm.NONLINEAR2_OMEGA_STAR.copy(), POOL_BOX["nonlinear2"])
    raise ValueError(f"unknown example {example!r}; expected one of {EXAMPLES}")


def pi_config(example: str, rule: str, n: int, seed: int = 0, nu: float = 3.5,
              rho: float | None = None, **overrides) -> PiConfig:
    setup = example_setup(example)
    quad = QuadratureSpec(rule, nu=nu, rho=rho)
    plan = SegmentPlan(n_samples=n, box=setup.box, seed=seed)
    return PiConfig(setup.model, setup.initial_policy, quad, plan, **overrides)


def _policy_error(setup: ExampleSetup, omega) -> float:
    basis = BasisExpansion(setup.model.state_dim)
    if setup.name == "lqr3":
        P = ValueParams(omega, basis).to_matrix()
        K_hat = np.linalg.solve(bm.LQR3_R, bm.LQR3_B.T @ P)
        K_star = np.linalg.solve(bm.LQR3_R, bm.LQR3_B.T @ ValueParams(setup.omega_star, basis).to_matrix())
        return float(np.linalg.norm(K_hat - K_star, "fro"))
    xs = np.random.default_rng(0).uniform(-2.0, 2.0, size=(EVAL_STATES, 2))
    u_hat = FeatureGradientPolicy(ValueParams(omega, basis), setup.model)(xs)[:, 0]
    _, u_star = example2_optimal(xs)
    return float(np.mean(np.abs(u_hat - u_star)))


def study_row(example: str, rule: str, n: int, seed: int = 0, nu: float = 3.5,
              rho: float | None = None) -> StudyRow:
    """One policy-iteration run summarized against the known optimum."""
    setup = example_setup(example)
    report: PiReport = run_policy_iteration(pi_config(example, rule, n, seed, nu, rho))
    if report.failed or not report.records:
        nan = float("nan")
        return StudyRow(example, rule, n, nan, nan, nan, -1, seed)
    w = report.final_omega
    basis = report.config.basis
    P_hat = ValueParams(w, basis).to_matrix()
    P_star = ValueParams(setup.omega_star, basis).to_matrix()
    gap = abs(expected_quadratic_cost(P_hat, COST_SIGMA) - expected_quadratic_cost(P_star, COST_SIGMA))
    return StudyRow(example, rule, n, float(np.linalg.norm(w - setup.omega_star)),
                    _policy_error(setup, w), float(gap), report.iterations, seed)


def _row_task(args):
    return study_row(*args)


def run_convergence_study(example: str, rule: str, n_values=range(5, 16), seed: int = 0,
                          out=None, nu: float = 3.5, rho: float | None = None,
                          jobs: int = 1) -> list[StudyRow]:
    """Sweep the samples-per-segment count and record the converged errors.

    Rows come back sorted by ``N`` whatever ``jobs`` is.
    """
    if example not in EXAMPLES:
        raise ValueError(f"unknown example {example!r}")
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    ns = sorted(int(n) for n in n_values)
    if not ns or ns[0] < 2 or ns[-1] > 10_000:
        raise ValueError("N values must lie in [2, 10000]")
    tasks = [(example, rule, n, seed, nu, rho) for n in ns]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_row_task, tasks))
    else:
        rows = [_row_task(t) for t in tasks]
    rows.sort(key=lambda r: r.N)
    if out is not None:
        write_csv(out, CSV_HEADER, (astuple(r) for r in rows))
    return rows


def read_study_csv(path) -> list[StudyRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        types = {f.name: f.type for f in fields(StudyRow)}
        conv = {"str": str, "int": int, "float": float}
        return [StudyRow(**{k: conv[types[k]](v) for k, v in rec.items()}) for rec in rd]


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    n_points: int


def fit_loglog_slope(rows, attr: str = "param_err") -> SlopeFit:
    """Least-squares line through ``(log N, log error)``.

    ``rows`` holds StudyRow objects or ``(N, error)`` pairs. Nonpositive or
    non-finite errors are dropped with a warning.
    """
    pts = [(r.N, getattr(r, attr)) if hasattr(r, "N") else tuple(r) for r in rows]
    ns = np.array([p[0] for p in pts], dtype=float)
    es = np.array([p[1] for p in pts], dtype=float)
    keep = np.isfinite(es) & (es > 0) & (ns > 0)
    if not np.all(keep):
        warnings.warn(f"dropping {int(np.sum(~keep))} nonpositive or non-finite errors", RuntimeWarning)
    if np.sum(keep) < 5:
        raise FitError(f"need at least 5 usable points, have {int(np.sum(keep))}")
    x, y = np.log(ns[keep]), np.log(es[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return SlopeFit(float(slope), float(intercept), r2, int(np.sum(keep)))


# -- BQ illustration ----------------------------------------------------------

DEMO_INTERVAL = (2.0, 10.0)
BQ_DEMO_HEADER = ("kernel", "N", "estimate", "abs_error", "posterior_std")


def demo_integrand(t):
    t = np.asarray(t, dtype=float)
    return t / 10.0 * np.sin(3.0 * np.pi / 5.0 * t) + 2.0


def demo_oracle(points: int = 1_000_001) -> float:
    """Composite Simpson on ``points`` nodes (odd count)."""
    s = np.linspace(*DEMO_INTERVAL, points)
    return float(simpson(demo_integrand(s), x=s))


@dataclass(frozen=True)
class BqDemoResult:
    rows: list
    oracle: float
    monotone: bool


def demo_kernel(kernel: str, rho: float | None = None):
    a, b = DEMO_INTERVAL
    if kernel == "wiener":
        return WienerKernel(origin=a - 1.0)
    if kernel.startswith("matern"):
        nu = 3.5 if kernel == "matern" else float(eval_fraction(kernel.split("-", 1)[1]))
        return MaternKernel(nu, b - a if rho is None else rho)
    raise ValueError(f"unknown kernel {kernel!r}")


def eval_fraction(text: str) -> float:
    num, _, den = text.partition("/")
    return float(num) / float(den or 1)


def run_bq_demo(kernel: str = "matern-7/2", n_list=(4, 6, 8, 10), out=None,
                rho: float | None = None) -> BqDemoResult:
    """BQ estimates of the demo integral against a fine Simpson oracle."""
    k = demo_kernel(kernel, rho)
    oracle = demo_oracle()
    rows = []
    for n in sorted(n_list):
        t = even_instants(*DEMO_INTERVAL, n)
        rule = bq_rule(k, t, DEMO_INTERVAL)
        est = apply_rule(rule, demo_integrand(t))
        rows.append((kernel, n, est, abs(est - oracle), rule.posterior_std))
    errs = [r[3] for r in rows]
    monotone = all(e1 < e0 for e0, e1 in zip(errs, errs[1:]))
    if not monotone:
        warnings.warn("BQ demo errors are not strictly decreasing in N", RuntimeWarning)
    if out is not None:
        write_csv(out, BQ_DEMO_HEADER, rows)
    return BqDemoResult(rows, oracle, monotone)


# -- augmented ODE solvers ----------------------------------------------------

AUG_HEADER = ("solver", "params", "value", "abs_error")
AUG_X0 = (1.0, 1.0)
AUG_SOLVERS = (
    SolverSpec("euler", h=0.5),
    SolverSpec("euler", h=0.1),
    SolverSpec("euler", h=0.02),
    SolverSpec("rk45", rtol=1e-8, atol=1e-10),
)


def _solver_params(spec: SolverSpec) -> str:
    return f"h={spec.h:g}" if spec.method != "rk45" else f"rtol={spec.rtol:g}"


def run_augmented_ode_study(out=None, solvers=AUG_SOLVERS, t_max: float = 100.0,
                            stop_norm: float = 1e-8) -> list[tuple]:
    """Accumulated cost of the optimal policy on the nonlinear benchmark.

    Integrates until ``|x| < stop_norm`` or ``t_max``; the exact answer is
    ``V*(x0) = 1.5``.
    """
    model = bm.nonlinear2()
    policy = bm.nonlinear2_optimal_policy()
    v_star, _ = example2_optimal(np.array(AUG_X0))
    rows = []
    for spec in solvers:
        _, v = integrate_augmented(model, policy, AUG_X0, t_max, spec, stop_norm=stop_norm)
        rows.append((spec.method, _solver_params(spec), v, abs(v - v_star)))
    if out is not None:
        write_csv(out, AUG_HEADER, rows)
    return rows
