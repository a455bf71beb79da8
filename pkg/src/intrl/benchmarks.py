"""The two benchmark plants used throughout the experiments.

``lqr3`` is a third-order linear-quadratic regulator; ``nonlinear2`` is a
second-order control-affine system whose optimal value is known in closed
form (``V*(x) = x1^2 / 2 + x2^2``).
"""
import numpy as np

from .dynamics import ControlAffineModel, ExplicitPolicy, LinearQuadraticModel

LQR3_A = np.array([[0.0, 1.0, 0.0],
                   [0.0, 0.0, 1.0],
                   [-0.1, -0.5, -0.7]])
LQR3_B = np.array([[0.0], [0.0], [1.0]])
LQR3_Q = np.eye(3)
LQR3_R = np.eye(1)

# Printed to two decimals.
LQR3_P_STAR_PRINTED = np.array([[2.36, 2.24, 0.90],
                                [2.24, 4.24, 1.89],
                                [0.90, 1.89, 1.60]])
LQR3_K_STAR_PRINTED = np.array([[0.90, 1.89, 1.60]])


def lqr3() -> LinearQuadraticModel:
    return LinearQuadraticModel(LQR3_A, LQR3_B, LQR3_Q, LQR3_R, name="lqr3")


def lqr3_initial_policy(K0=None) -> ExplicitPolicy:
    K0 = np.zeros((1, 3)) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    return ExplicitPolicy(lambda x: -np.asarray(x) @ K0.T, input_dim=K0.shape[0], name="-K0 x")


def _nl_drift(x):
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([-x1 + x2,
                     -0.5 * (x1 + x2) + 0.5 * x2 * np.sin(x1) ** 2], axis=-1)


def _nl_input_map(x):
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.shape[:-1] + (2, 1))
    g[..., 1, 0] = np.sin(x[..., 0])
    return g


def _nl_state_cost(x):
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1)


def nonlinear2() -> ControlAffineModel:
    return ControlAffineModel(
        state_dim=2,
        input_dim=1,
        drift=_nl_drift,
        input_map=_nl_input_map,
        state_cost=_nl_state_cost,
        input_weight=np.eye(1),
        name="nonlinear2",
    )


def nonlinear2_initial_policy() -> ExplicitPolicy:
    def u0(x):
        x1, x2 = x[..., 0], x[..., 1]
        return -1.5 * x1 * np.sin(x1) * (x1 + x2)

    return ExplicitPolicy(u0, input_dim=1, name="-1.5 x1 sin(x1) (x1 + x2)")


def nonlinear2_optimal_policy() -> ExplicitPolicy:
    return ExplicitPolicy(lambda x: -np.sin(x[..., 0]) * x[..., 1], input_dim=1, name="u*")


NONLINEAR2_OMEGA_STAR = np.array([0.5, 0.0, 1.0])
