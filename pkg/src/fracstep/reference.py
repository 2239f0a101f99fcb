"""Reference solutions for error measurement.

The closed forms are built by eigenfunction reduction: for the operator
-d_x^2 on (0, pi) the load profile sin(x) is an eigenfunction with
eigenvalue 1, so each right-hand-side piece contributes a shifted scalar
relaxation response.  Every piece is evaluated strictly in its own local
time; forming global Mittag-Leffler arguments across a jump is exactly the
failure mode these evaluators exist to avoid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .special_functions import gamma, ml

_EX1_ONSETS = (0.0, 1.0 / 3.0, 1.0 / 2.0, 3.0 / 4.0)


@dataclass(frozen=True)
class ExactSolution:
    """Pointwise evaluator (x, t) -> u(x, t), defined piecewise per onset."""

    evaluator: Callable[[float, float], float]

    def __call__(self, x: float, t: float) -> float:
        return self.evaluator(x, t)


def relaxation_response(alpha: float, tau: float, gamma_exp: float = 0.0) -> float:
    """Solution at local time tau of d_t^a y + y = tau^g, y(0) = 0."""
    if tau <= 0.0:
        return 0.0
    ta = tau**alpha
    if gamma_exp == 0.0:
        return ta * ml(alpha, 1.0 + alpha, -ta)
    return (
        gamma(gamma_exp + 1.0)
        * tau ** (gamma_exp + alpha)
        * ml(alpha, gamma_exp + alpha + 1.0, -ta)
    )


def exact_ex1(alpha: float, x: float, t: float) -> float:
    """Exact solution of the four-jump benchmark on (0, pi) x (0, 1]."""
    total = 0.0
    for s in _EX1_ONSETS:
        if t > s:
            total += relaxation_response(alpha, t - s)
    return math.sin(x) * total


def exact_ex2(alpha: float, gamma_exp: float, x: float, t: float) -> float:
    """Series solution of the smoothed-jump benchmark (same reduction)."""
    total = 0.0
    for k, s in enumerate(_EX1_ONSETS):
        if t > s:
            total += relaxation_response(alpha, t - s, gamma_exp / 2**k)
    return math.sin(x) * total


def exact_neg_lambda(t: float) -> float:
    """Exact solution t^0.6 of the scalar negative-reaction benchmark."""
    if t < 0.0 or t > 1.0:
        raise ValueError("t must lie in [0, 1]")
    return t**0.6


def ex1_solution(alpha: float) -> ExactSolution:
    return ExactSolution(lambda x, t: exact_ex1(alpha, x, t))


def neg_lambda_solution() -> ExactSolution:
    return ExactSolution(lambda x, t: exact_neg_lambda(t))


def reference_for_ex2(
    alpha: float,
    gamma_exp: float,
    tol: float,
    ncells: int = 30,
    m: int = 4,
    refine: float = 100.0,
):
    """Numerical reference for the smoothed benchmark at tolerance tol/refine.

    Solves with the shifting strategy (whose guarantee covers the full
    horizon) and wraps the result as an (x, t) evaluator plus the raw
    dof-vector evaluator for grid comparisons.
    """
    from .controller import AdaptiveParams
    from .problem import make_problem
    from .spatial_fem import assemble
    from .stepper import gauss_lobatto_rule
    from .strategies import solve_by_shifting

    spec = make_problem("ex2", alpha, gamma_exp, ncells=ncells)
    op = assemble(spec.spatial)
    rule = gauss_lobatto_rule(m)
    params = AdaptiveParams(TOL=tol / refine)
    sol, report = solve_by_shifting(spec, rule, op, params)

    basis_cache = {}

    def dof_values(t: float) -> np.ndarray:
        from .strategies import evaluate_any

        return evaluate_any(sol, t)

    def evaluator(x: float, t: float) -> float:
        key = float(x)
        if key not in basis_cache:
            from .spatial_fem import _basis_matrix

            basis_cache[key] = _basis_matrix(op.spec, np.array([key]))
        return float(basis_cache[key] @ dof_values(t))

    ref = ExactSolution(evaluator)
    return ref, dof_values, report
