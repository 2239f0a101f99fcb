"""Problem descriptions: piecewise-in-time right-hand sides with jumps.

A right-hand side is a sum of separable pieces profile_k(x) * g_k(t - s_k)
switched on at onsets s_k by Heaviside factors.  Evaluation follows the
upper semi-continuity convention (the post-jump value holds at the onset)
and onsets are nudged slightly to the left so that floating-point times
landing "on" a jump are treated as post-jump; both choices are needed for
stable stepping near the jumps.

Times are passed around in split form (t_base, t_local) with t = t_base +
t_local.  Local solves near an onset keep t_local tiny while t_base is the
onset itself, which avoids the precision loss of forming t directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .special_functions import gamma
from .spatial_fem import SpatialOperatorSpec

_EPS = 2.220446049250313e-16
#: default left-shift of onset s is _AUTO_SHIFT * max(1, s)
_AUTO_SHIFT = 4.0 * _EPS

PROBLEM_IDS = ("ex1", "ex2", "neg_lambda_scalar")


@dataclass(frozen=True)
class RHSPiece:
    """One separable term profile(x) * g(t - onset), active for t >= onset."""

    onset: float
    exponent: float
    spatial_profile: Callable[[np.ndarray], np.ndarray]
    temporal_profile: Callable[[float], float]

    def __post_init__(self):
        if self.onset < 0.0:
            raise ValueError("onset must be >= 0")
        if self.exponent < 0.0:
            raise ValueError("exponent must be >= 0")


@dataclass(frozen=True)
class ProblemSpec:
    """Full problem description for one solve."""

    alpha: float
    T: float
    pieces: tuple[RHSPiece, ...]
    spatial: SpatialOperatorSpec
    u0: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jump_shift: Optional[float] = None
    label: str = ""

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.T <= 0.0:
            raise ValueError("T must be > 0")
        if not self.pieces:
            raise ValueError("at least one RHS piece is required")
        onsets = [p.onset for p in self.pieces]
        if onsets[0] != 0.0:
            raise ValueError("first piece must start at t = 0")
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ValueError("onsets must be strictly increasing")
        if onsets[-1] >= self.T:
            raise ValueError("all onsets must lie before the horizon")
        if self.jump_shift is not None and self.jump_shift < 0.0:
            raise ValueError("jump_shift must be >= 0")

    def onset_shift(self, onset: float) -> float:
        if self.jump_shift is not None:
            return self.jump_shift
        return _AUTO_SHIFT * max(1.0, onset)

    def effective_onsets(self) -> np.ndarray:
        """Onsets as seen by the right-hand side: shifted slightly left."""
        return np.array([p.onset - self.onset_shift(p.onset) for p in self.pieces])

    def solver_onsets(self) -> np.ndarray:
        """Anchor set for barriers and mesh cutting.

        Identical to the effective onsets except that the initial onset
        stays exactly at 0 (there is nothing to protect left of t = 0).
        """
        eff = self.effective_onsets()
        eff[0] = 0.0
        return eff


def piece_values(spec: ProblemSpec, t_base: float, t_local: float) -> np.ndarray:
    """Temporal factors g_k(t - s_k) of all pieces at t = t_base + t_local.

    Inactive pieces contribute 0; negative local time within a piece (only
    possible inside the shift window) is clamped to 0 so the post-jump
    value is used at and just left of the stored onset.
    """
    out = np.zeros(len(spec.pieces))
    for k, piece in enumerate(spec.pieces):
        shifted = piece.onset - spec.onset_shift(piece.onset)
        if (t_base - shifted) + t_local >= 0.0:
            tau = max((t_base - piece.onset) + t_local, 0.0)
            out[k] = piece.temporal_profile(tau)
    return out


def rhs_eval(spec: ProblemSpec, x, t: float):
    """Pointwise right-hand side f(x, t) under the jump conventions."""
    vals = piece_values(spec, 0.0, float(t))
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for g, piece in zip(vals, spec.pieces):
        if g != 0.0:
            total = total + g * np.asarray(piece.spatial_profile(x))
    return float(total) if total.ndim == 0 else total


def _heaviside_pieces(gamma_exps, onsets):
    pieces = []
    for s, g in zip(onsets, gamma_exps):
        if g == 0.0:
            temporal = lambda tau: 1.0
        else:
            temporal = lambda tau, g=g: tau**g
        pieces.append(
            RHSPiece(
                onset=s,
                exponent=g,
                spatial_profile=np.sin,
                temporal_profile=temporal,
            )
        )
    return tuple(pieces)


def make_problem(
    problem_id: str,
    alpha: float,
    gamma_exp: Optional[float] = None,
    ncells: int = 30,
) -> ProblemSpec:
    """Construct one of the three benchmark problems.

    ex1: (d_t^a - d_x^2) u = (H(t) + H(t-1/3) + H(t-1/2) + H(t-3/4)) sin x
         on (0, pi) x (0, 1], homogeneous data.
    ex2: same with the Heaviside factors smoothed to H(t-s) (t-s)^g, the
         exponent halving at each successive onset (g, g/2, g/4, g/8).
    neg_lambda_scalar: the scalar equation (d_t^a - 1) u = f on (0, 1]
         with f manufactured so the exact solution is u(t) = t^0.6.
    """
    onsets = (0.0, 1.0 / 3.0, 1.0 / 2.0, 3.0 / 4.0)
    if problem_id == "ex1":
        spatial = SpatialOperatorSpec(domain=(0.0, math.pi), ncells=ncells)
        return ProblemSpec(
            alpha=alpha,
            T=1.0,
            pieces=_heaviside_pieces((0.0, 0.0, 0.0, 0.0), onsets),
            spatial=spatial,
            label="ex1",
        )
    if problem_id == "ex2":
        if gamma_exp is None or gamma_exp <= 0.0:
            raise ValueError("ex2 requires gamma_exp > 0")
        exps = tuple(gamma_exp / 2**k for k in range(4))
        spatial = SpatialOperatorSpec(domain=(0.0, math.pi), ncells=ncells)
        return ProblemSpec(
            alpha=alpha,
            T=1.0,
            pieces=_heaviside_pieces(exps, onsets),
            spatial=spatial,
            label="ex2",
        )
    if problem_id == "neg_lambda_scalar":
        coef = gamma(1.6) / gamma(1.6 - alpha)
        nu = 0.6 - alpha

        def temporal(tau: float) -> float:
            if tau <= 0.0:
                return 0.0
            return coef * tau**nu - tau**0.6

        spatial = SpatialOperatorSpec(domain=(0.0, 1.0), ncells=1, a=0.0, b=0.0, c=-1.0)
        piece = RHSPiece(
            onset=0.0,
            exponent=max(nu, 0.0),
            spatial_profile=lambda x: np.ones_like(np.asarray(x, dtype=float)),
            temporal_profile=temporal,
        )
        return ProblemSpec(
            alpha=alpha, T=1.0, pieces=(piece,), spatial=spatial,
            label="neg_lambda_scalar",
        )
    raise ValueError(f"unknown problem id {problem_id!r}")
