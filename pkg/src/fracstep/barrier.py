"""Residual barriers and the a-posteriori error bound.

The base barrier lam + t^(-alpha)/Gamma(1-alpha) (zero for t <= 0) keeps
the residual of an accepted solution below TOL times itself, which in turn
bounds the solution error by TOL.  The generalized barrier anchors one
weighted copy at every onset of the right-hand side so interior
singularities are treated exactly like the initial one.  For negative lam
the base barrier changes sign in finite time; extend_for_negative_lambda
appends further anchors to keep the running sum safely positive on a
moderate horizon.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .special_functions import gamma


@dataclass(frozen=True)
class BarrierSpec:
    """Barrier parameters: exponent, reaction bound, anchors, weights."""

    alpha: float
    lam: float
    S: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if len(self.S) != len(self.weights):
            raise ValueError("S and weights must have equal length")
        if any(b <= a for a, b in zip(self.S, self.S[1:])):
            raise ValueError("onsets must be strictly increasing")
        if any(w <= 0.0 for w in self.weights):
            raise ValueError("weights must be positive")

    @property
    def W(self) -> float:
        return float(sum(self.weights))

    def with_onset(self, onset: float, weight: float = 1.0) -> "BarrierSpec":
        """New spec with one more anchor inserted in order."""
        items = sorted(zip(self.S, self.weights))
        items.append((onset, weight))
        items.sort()
        s, w = zip(*items)
        return BarrierSpec(alpha=self.alpha, lam=self.lam, S=s, weights=w)


def make_barrier(
    alpha: float, lam: float, onsets, weights=None
) -> BarrierSpec:
    """Convenience constructor; weights default to 1 for every anchor."""
    onsets = tuple(float(s) for s in onsets)
    if weights is None:
        weights = (1.0,) * len(onsets)
    return BarrierSpec(alpha=alpha, lam=lam, S=onsets, weights=tuple(weights))


def base_barrier(alpha: float, lam: float, t: float) -> float:
    """lam + t^(-alpha)/Gamma(1-alpha) for t > 0, and 0 for t <= 0."""
    if t <= 0.0:
        return 0.0
    return lam + t ** (-alpha) / gamma(1.0 - alpha)


def generalized_barrier_split(spec: BarrierSpec, t_base: float, t_local: float) -> float:
    """Weighted sum of shifted base barriers at t = t_base + t_local.

    Split-time form: each shifted argument is computed as
    (t_base - s_k) + t_local, so tiny local times next to an anchor do not
    round away.
    """
    total = 0.0
    g1 = 1.0 / gamma(1.0 - spec.alpha)
    for s, w in zip(spec.S, spec.weights):
        dt = (t_base - s) + t_local
        if dt > 0.0:
            total += w * (spec.lam + dt ** (-spec.alpha) * g1)
    return total


def generalized_barrier(spec: BarrierSpec, t: float) -> float:
    """Weighted sum of shifted base barriers; equals the base one below S[1]."""
    return generalized_barrier_split(spec, 0.0, float(t))


def error_bound(spec: BarrierSpec, t: float) -> float:
    """Factor multiplying TOL in the error guarantee: sum of elapsed weights."""
    return float(sum(w for s, w in zip(spec.S, spec.weights) if s <= t))


def barrier_root(alpha: float, lam: float):
    """Time where the base barrier hits zero, or None if it stays positive."""
    if lam >= 0.0:
        return None
    return (abs(lam) * gamma(1.0 - alpha)) ** (-1.0 / alpha)


def _partial_barrier(spec: BarrierSpec, k: int, t: float) -> float:
    """Barrier using only the first k anchors (the sum over l < k)."""
    total = 0.0
    g1 = 1.0 / gamma(1.0 - spec.alpha)
    for s, w in zip(spec.S[:k], spec.weights[:k]):
        dt = t - s
        if dt > 0.0:
            total += w * (spec.lam + dt ** (-spec.alpha) * g1)
    return total


def extend_for_negative_lambda(
    spec: BarrierSpec, T: float, rho: float = 0.05, weight: float = 1.0
) -> BarrierSpec:
    """Append anchors so the barrier stays above rho*|lam| up to the horizon.

    Each new anchor is placed at the unique time in (s_{k-1}, T) where the
    barrier built from the earlier anchors decays to rho*|lam|; iteration
    stops once the partial barrier clears that floor through T.  No-op for
    lam >= 0.
    """
    if spec.lam >= 0.0:
        return spec
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must be in (0, 1)")
    floor = rho * abs(spec.lam)

    result = spec
    for _ in range(4096):
        k = len(result.S)
        last = result.S[-1]
        if _partial_barrier(result, k, T) > floor:
            break
        lo, hi = last, T
        # the partial barrier is continuous and strictly decreasing on
        # (last, T) past its pole at `last`, so bisection is safe
        for _ in range(300):
            mid = 0.5 * (lo + hi)
            if _partial_barrier(result, k, mid) > floor:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13:
                break
        result = result.with_onset(0.5 * (lo + hi), weight)
    if len(result.S) > 64:
        warnings.warn(
            f"negative-lambda barrier needs {len(result.S)} anchors on "
            f"(0, {T}]; the method is intended for moderate horizons",
            stacklevel=2,
        )
    return result
