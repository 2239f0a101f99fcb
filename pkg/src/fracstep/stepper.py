"""Continuous collocation time stepping with exact Caputo evaluation.

A solution is a continuous piecewise polynomial of degree m in time,
stored as values at the collocation nodes of each cell.  Its Caputo
derivative is evaluated exactly (up to roundoff) cell by cell: each cell's
derivative polynomial is integrated against the weakly singular kernel in
closed form.  Two algebraically equivalent forms are used depending on how
far the cell lies behind the evaluation point; the far form is a positive
series, the near form a short finite sum, so neither suffers the
catastrophic cancellation a single global expansion would produce once the
mesh contains cells ten orders of magnitude apart.

Solutions may be chained: a local solution (shifted time frame) keeps a
reference to the solution covering everything before its origin, and all
evaluation times are carried in split form (origin gap + local time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from numpy.polynomial import legendre
from scipy.linalg import lu_factor, lu_solve

from .errors import SingularSystemError
from .problem import ProblemSpec, piece_values
from .spatial_fem import AssembledOperator, linf_norm
from .special_functions import gamma

_EPS = 2.220446049250313e-16
# terms of the far-history series at mu <= 1/2; tail < 2^-64 relative
_FAR_TERMS = 64
_FAR_NEAR_SPLIT = 0.5


# ---------------------------------------------------------------------------
# collocation rules and meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeMesh:
    """Strictly increasing node list starting at 0."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes[0] != 0.0:
            raise ValueError("mesh must start at t = 0")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("mesh nodes must be strictly increasing")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.nodes)


@dataclass(frozen=True)
class CollocationRule:
    """Nodes c_0..c_m on [0, 1] of a continuous collocation method.

    With last_node_shift set, the right-hand side (and only it) is
    evaluated slightly left of the cell end, i.e. c_m acts as 1 - eps for
    f.  The polynomial basis keeps c_m = 1; perturbing the basis node
    itself would wreck conditioning for very small cells.
    """

    m: int
    nodes: np.ndarray
    last_node_shift: bool = True

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if len(nodes) != self.m + 1:
            raise ValueError("need m + 1 nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("nodes must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be strictly increasing")


def gauss_lobatto_rule(m: int, last_node_shift: bool = True) -> CollocationRule:
    """Gauss-Lobatto collocation nodes on [0, 1] for order m >= 1."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        inner = np.array([])
    else:
        coeffs = np.zeros(m + 1)
        coeffs[m] = 1.0
        inner = np.sort(legendre.legroots(legendre.legder(coeffs)))
    nodes = 0.5 * (np.concatenate([[-1.0], inner, [1.0]]) + 1.0)
    nodes[0], nodes[-1] = 0.0, 1.0
    return CollocationRule(m=m, nodes=nodes, last_node_shift=last_node_shift)


# ---------------------------------------------------------------------------
# per-rule geometry tables
# ---------------------------------------------------------------------------


class RuleTables:
    """Precomputed node-dependent matrices shared by all cells."""

    def __init__(self, rule: CollocationRule, alpha: float):
        self.rule = rule
        self.alpha = alpha
        m = rule.m
        c = rule.nodes
        vander = np.vander(c, m + 1, increasing=True)
        self.monomial = np.linalg.inv(vander)  # column l: coeffs of basis l
        # derivative of the nodal polynomial in monomial form: e = deriv @ P
        self.deriv = self.monomial[1:, :] * np.arange(1, m + 1)[:, None]
        # raw kernel moments int_0^1 w^{-a} (1-w)^j dw = B(j+1, 1-a)
        j = np.arange(m)
        self.beta_raw = np.array(
            [math.gamma(jj + 1.0) * gamma(1.0 - alpha) / math.gamma(jj + 2.0 - alpha) for jj in j]
        )
        self.rgamma1ma = 1.0 / gamma(1.0 - alpha)
        # current-cell collocation matrix: caputo of the cell polynomial at
        # node c_i equals h^{-alpha} * (gmat @ P)_i   (i = 1..m)
        self.gmat = self.partial_weight_rows(c[1:])
        # far-series coefficients (alpha)_i / i! / (i + j + 1)
        fc = np.ones(_FAR_TERMS)
        for i in range(1, _FAR_TERMS):
            fc[i] = fc[i - 1] * (alpha + i - 1.0) / i
        denom = np.arange(_FAR_TERMS)[:, None] + np.arange(m)[None, :] + 1.0
        self.far_coeffs = fc[:, None] / denom  # (_FAR_TERMS, m)
        self.binom = np.array(
            [[math.comb(jj, n) if n <= jj else 0 for n in range(m)] for jj in range(m)],
            dtype=float,
        )

    def basis_at(self, sigma: np.ndarray) -> np.ndarray:
        """Lagrange basis values at local coordinates sigma, shape (k, m+1)."""
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        return np.vander(sigma, self.rule.m + 1, increasing=True) @ self.monomial

    def partial_weight_rows(self, sigma: np.ndarray) -> np.ndarray:
        """Rows mapping nodal values to the in-cell Caputo at local sigma.

        caputo(current cell, t = a + sigma h) = h^{-alpha} * (row @ P),
        including the 1/Gamma(1-alpha) prefactor.
        """
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        jj = np.arange(self.rule.m)
        w = sigma[:, None] ** (jj + 1.0 - self.alpha) * (
            self.beta_raw * self.rgamma1ma
        )
        return w @ self.deriv


# ---------------------------------------------------------------------------
# solution storage
# ---------------------------------------------------------------------------


class SolutionFrame:
    """Growable cell storage for one time frame, chainable to a parent.

    Cells live in frame-local time; absolute time is time_origin + local.
    The parent (when present) covers [0, time_origin].
    """

    def __init__(
        self,
        tables: RuleTables,
        ndof: int,
        init_values: np.ndarray,
        time_origin: float = 0.0,
        parent: Optional["SolutionFrame"] = None,
    ):
        self.tables = tables
        self.ndof = ndof
        self.time_origin = float(time_origin)
        self.parent = parent
        self.init_values = np.asarray(init_values, dtype=float).copy()
        cap = 64
        m = tables.rule.m
        self._starts = np.zeros(cap)
        self._widths = np.zeros(cap)
        self._values = np.zeros((cap, m + 1, ndof))
        self._derivs = np.zeros((cap, m, ndof))
        self.ncells = 0

    # -- storage ----------------------------------------------------------

    def _grow(self):
        cap = len(self._starts) * 2
        for name in ("_starts", "_widths", "_values", "_derivs"):
            arr = getattr(self, name)
            new = np.zeros((cap,) + arr.shape[1:])
            new[: self.ncells] = arr[: self.ncells]
            setattr(self, name, new)

    def append_cell(self, a: float, h: float, values: np.ndarray):
        if self.ncells == len(self._starts):
            self._grow()
        n = self.ncells
        self._starts[n] = a
        self._widths[n] = h
        self._values[n] = values
        self._derivs[n] = self.tables.deriv @ values
        self.ncells = n + 1

    def truncate(self, ncells: int):
        if not 0 <= ncells <= self.ncells:
            raise ValueError("bad truncation length")
        self.ncells = ncells

    # -- views ------------------------------------------------------------

    @property
    def starts(self) -> np.ndarray:
        return self._starts[: self.ncells]

    @property
    def widths(self) -> np.ndarray:
        return self._widths[: self.ncells]

    @property
    def cell_values(self) -> np.ndarray:
        return self._values[: self.ncells]

    @property
    def end_time(self) -> float:
        if self.ncells == 0:
            return 0.0
        return float(self._starts[self.ncells - 1] + self._widths[self.ncells - 1])

    @property
    def end_values(self) -> np.ndarray:
        if self.ncells == 0:
            return self.init_values
        return self._values[self.ncells - 1, -1]

    def nodes(self) -> np.ndarray:
        """Local mesh nodes 0 = t_0 < ... <= end."""
        if self.ncells == 0:
            return np.zeros(1)
        return np.concatenate([self.starts, [self.end_time]])

    # -- evaluation --------------------------------------------------------

    def owning_cell(self, tl: float) -> int:
        idx = int(np.searchsorted(self.starts, tl, side="right")) - 1
        return max(idx, 0)

    def eval_local(self, tl: float) -> np.ndarray:
        if self.ncells == 0:
            return self.init_values
        k = self.owning_cell(tl)
        a, h = self._starts[k], self._widths[k]
        sigma = (tl - a) / h
        row = self.tables.basis_at(np.array([sigma]))[0]
        return row @ self._values[k]


def _frame_history_many(
    frame: SolutionFrame, gap: float, tls: np.ndarray, out: np.ndarray
):
    """Accumulate raw kernel integrals of all *fully elapsed* cells.

    Evaluation times are frame-local: t = gap + tls[k].  Adds
    int_cell (t - s)^{-alpha} u'(s) ds for every cell with end <= t into
    out[k]; cells not yet started contribute nothing.  Recurses into the
    parent chain.
    """
    tab = frame.tables
    alpha = tab.alpha
    m = tab.rule.m
    n = frame.ncells
    if n > 0:
        starts = frame.starts
        widths = frame.widths
        derivs = frame._derivs[:n]
        # theta[k, p] = distance from cell start to evaluation time
        theta = (gap - starts)[None, :] + tls[:, None]
        tminb = (gap - (starts + widths))[None, :] + tls[:, None]
        active = tminb >= 0.0
        if not active.all():
            # keep only cells elapsed for every requested time; mixed
            # activity never occurs in the stepping fast path
            keep = active.all(axis=0)
            starts, widths, derivs = starts[keep], widths[keep], derivs[keep]
            theta, tminb = theta[:, keep], tminb[:, keep]
            n = keep.sum()
        if n > 0:
            mu = widths[None, :] / theta
            bmat = np.empty(theta.shape + (m,))
            far = mu <= _FAR_NEAR_SPLIT
            if far.any():
                mu_f = mu[far]
                mupow = np.vander(mu_f, _FAR_TERMS, increasing=True)
                bmat[far] = mupow @ tab.far_coeffs
            near = ~far
            if near.any():
                mu_n = mu[near]
                nu = tminb[near] / theta[near]
                npow = nu[:, None] ** (np.arange(m) + 1.0 - alpha)
                frac = (1.0 - npow) / (np.arange(m) + 1.0 - alpha)
                signs = (-1.0) ** np.arange(m)
                core = (frac * signs) @ tab.binom.T  # (N, m): sum over n
                bmat[near] = core * mu_n[:, None] ** (-(np.arange(m) + 1.0))
            scale = theta ** (-alpha)
            out += np.einsum("kpj,pjd->kd", bmat * scale[:, :, None], derivs)
    if frame.parent is not None:
        _frame_history_many(
            frame.parent,
            gap + (frame.time_origin - frame.parent.time_origin),
            tls,
            out,
        )


def history_caputo_many(frame: SolutionFrame, tls: np.ndarray) -> np.ndarray:
    """Caputo contribution of all stored cells at frame-local times tls.

    All cells of the frame chain must be fully elapsed at every requested
    time (true during stepping, where tls lie in the candidate cell).
    Includes the 1/Gamma(1-alpha) prefactor.
    """
    tls = np.asarray(tls, dtype=float)
    out = np.zeros((len(tls), frame.ndof))
    _frame_history_many(frame, 0.0, tls, out)
    return out * frame.tables.rgamma1ma


# ---------------------------------------------------------------------------
# public solution object
# ---------------------------------------------------------------------------


@dataclass
class PiecewiseSolution:
    """Finalized continuous collocation solution over one time frame."""

    mesh: TimeMesh
    time_origin: float
    history: Optional["PiecewiseSolution"]
    _frame: SolutionFrame

    @classmethod
    def from_frame(
        cls, frame: SolutionFrame, history: Optional["PiecewiseSolution"] = None
    ) -> "PiecewiseSolution":
        return cls(
            mesh=TimeMesh(frame.nodes()),
            time_origin=frame.time_origin,
            history=history,
            _frame=frame,
        )

    @property
    def end_time(self) -> float:
        return self.time_origin + self._frame.end_time

    def evaluate_local(self, tl: float) -> np.ndarray:
        return self._frame.eval_local(tl)


def evaluate(sol: PiecewiseSolution, t: float) -> np.ndarray:
    """Value of the solution at absolute time t (delegating to history)."""
    if t < sol.time_origin:
        if sol.history is None:
            raise ValueError(f"t={t} precedes the solution frame")
        return evaluate(sol.history, t)
    tl = t - sol.time_origin
    if tl > sol._frame.end_time * (1.0 + 1e-12) + 1e-300:
        raise ValueError(f"t={t} beyond the solution span")
    return sol._frame.eval_local(min(tl, sol._frame.end_time))


def caputo_eval(
    sol: PiecewiseSolution,
    t: float,
    history: Optional[PiecewiseSolution] = None,
) -> np.ndarray:
    """Exact Caputo derivative of the stored piecewise polynomial at t.

    If the solution has a positive time origin, its own `history` link or
    the explicit `history` argument must cover [0, time_origin].
    """
    frame = sol._frame
    tab = frame.tables
    alpha = tab.alpha
    hist = sol.history if sol.history is not None else history
    if sol.time_origin > 0.0 and hist is None:
        raise ValueError("history required for a shifted solution")
    tl = t - sol.time_origin
    if tl < 0.0 or tl > frame.end_time * (1.0 + 1e-12) + 1e-300:
        raise ValueError(f"t={t} outside the solution span")
    tl = min(tl, frame.end_time)

    out = np.zeros(frame.ndof)
    if tl > 0.0:
        k = frame.owning_cell(tl)
        a, h = frame.starts[k], frame.widths[k]
        # fully elapsed own cells
        for p in range(k):
            _accumulate_full_cell(tab, frame, p, tl, out)
        sigma = (tl - a) / h
        if sigma > 0.0:
            rows = tab.partial_weight_rows(np.array([min(sigma, 1.0)]))
            out += h ** (-alpha) * (rows @ frame.cell_values[k])[0] / tab.rgamma1ma
    if hist is not None:
        gap = sol.time_origin - hist.time_origin
        _frame_history_many(hist._frame, gap, np.array([tl]), out[None, :])
    return out * tab.rgamma1ma


def _accumulate_full_cell(tab, frame, p, tl, out):
    alpha = tab.alpha
    m = tab.rule.m
    a, h = frame.starts[p], frame.widths[p]
    theta = tl - a
    mu = h / theta
    if mu <= _FAR_NEAR_SPLIT:
        mupow = mu ** np.arange(_FAR_TERMS)
        b = mupow @ tab.far_coeffs
    else:
        nu = (tl - (a + h)) / theta
        npow = nu ** (np.arange(m) + 1.0 - alpha)
        frac = (1.0 - npow) / (np.arange(m) + 1.0 - alpha)
        signs = (-1.0) ** np.arange(m)
        b = (tab.binom @ (frac * signs)) * mu ** (-(np.arange(m) + 1.0))
    out += theta ** (-alpha) * (b @ frame._derivs[p])


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------


class PieceLoads:
    """Per-piece weak loads of a separable right-hand side.

    Precomputes (profile_k, phi_j) and its mass projection once, so the
    load vector at any time is a small linear combination.
    """

    def __init__(self, op: AssembledOperator, spec: ProblemSpec):
        self.spec = spec
        self.loads = np.stack([op.load_vector(p.spatial_profile) for p in spec.pieces])
        self.proj = np.stack([op.apply_minv(load) for load in self.loads])

    def at(self, t_base: float, t_local: float):
        g = piece_values(self.spec, t_base, t_local)
        return g @ self.loads, g @ self.proj


class VectorLoads:
    """Load given directly as callables of split time (testing hook)."""

    def __init__(self, op: AssembledOperator, func: Callable[[float, float], np.ndarray]):
        self.op = op
        self.func = func

    def at(self, t_base: float, t_local: float):
        f = np.asarray(self.func(t_base, t_local), dtype=float)
        return f, self.op.apply_minv(f)


# ---------------------------------------------------------------------------
# cell solver
# ---------------------------------------------------------------------------


def residual_sample_offsets(q: int, ratio: float = 4.0, top: float = 0.95) -> np.ndarray:
    """Geometric sample offsets in (0, 1), clustered toward the left end."""
    return top * ratio ** (-np.arange(q - 1, -1, -1.0))


class CellSolver:
    """Solves single collocation cells against a frozen history prefix."""

    def __init__(
        self,
        op: AssembledOperator,
        rule: CollocationRule,
        alpha: float,
        loads: Union[PieceLoads, VectorLoads],
        time_origin: float = 0.0,
    ):
        self.op = op
        self.alpha = alpha
        self.rule = rule
        self.tables = RuleTables(rule, alpha)
        self.loads = loads
        self.time_origin = float(time_origin)
        self._lu_cache: dict[float, tuple] = {}
        self._kron_mass = None

    def new_frame(self, init_values, parent: Optional[SolutionFrame] = None) -> SolutionFrame:
        return SolutionFrame(
            self.tables,
            self.op.ndof,
            init_values,
            time_origin=self.time_origin,
            parent=parent,
        )

    def _system(self, h: float):
        key = h
        cached = self._lu_cache.get(key)
        if cached is not None:
            return cached
        m = self.rule.m
        gm = self.tables.gmat
        big = h ** (-self.alpha) * np.kron(gm[:, 1:], self.op.mass) + np.kron(
            np.eye(m), self.op.operator
        )
        fac = lu_factor(big)
        if len(self._lu_cache) > 12:
            self._lu_cache.clear()
        self._lu_cache[key] = (big, fac)
        return big, fac

    def _f_times(self, a: float, h: float, f_end_clamp: Optional[float]):
        """Frame-local times at which f is evaluated for the collocation rows."""
        c = self.rule.nodes
        tls = a + c[1:] * h
        if self.rule.last_node_shift:
            b = a + h
            tf = b - _EPS * h
            if tf >= b:
                tf = np.nextafter(b, a)
            tls = tls.copy()
            tls[-1] = tf
        if f_end_clamp is not None:
            tls = np.minimum(tls, f_end_clamp)
        return tls

    def solve_cell(
        self,
        prefix: SolutionFrame,
        a: float,
        h: float,
        f_end_clamp: Optional[float] = None,
    ) -> np.ndarray:
        """Collocation values of the cell [a, a + h] given the prefix.

        Returns the (m + 1, ndof) nodal value block; the first row is the
        continuity value copied from the prefix end.
        """
        if h <= 0.0:
            raise ValueError("cell width must be positive")
        m = self.rule.m
        ndof = self.op.ndof
        c = self.rule.nodes
        p0 = prefix.end_values
        tls = a + c[1:] * h
        hist = history_caputo_many(prefix, tls)

        f_tls = self._f_times(a, h, f_end_clamp)
        rhs = np.empty((m, ndof))
        for i in range(m):
            f_vec, _ = self.loads.at(self.time_origin, f_tls[i])
            rhs[i] = f_vec - self.op.mass @ hist[i]
        halpha = h ** (-self.alpha)
        g0 = self.tables.gmat[:, 0]
        mp0 = self.op.mass @ p0
        rhs -= halpha * np.outer(g0, mp0)

        big, fac = self._system(h)
        b = rhs.ravel()
        x = lu_solve(fac, b)
        scale = float(np.linalg.norm(b))
        if scale > 0.0:
            resid = float(np.linalg.norm(big @ x - b))
            if resid > 1e-12 * scale:
                # one step of iterative refinement before giving up
                x = x + lu_solve(fac, b - big @ x)
                resid = float(np.linalg.norm(big @ x - b))
            if not np.isfinite(resid) or resid > 1e-10 * scale:
                raise SingularSystemError(
                    f"collocation system ill-posed for cell width {h:g} "
                    f"(relative residual {resid / scale:.2e})"
                )
        values = np.empty((m + 1, ndof))
        values[0] = p0
        values[1:] = x.reshape(m, ndof)
        return values

    def residual_samples(
        self,
        prefix: SolutionFrame,
        a: float,
        h: float,
        values: np.ndarray,
        q: int,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sampled sup norms of the discrete residual inside one cell.

        Residual vector at t: M^{-1} F(t) - caputo(u_h)(t) - M^{-1} A u(t),
        measured in the sampled L-inf norm of the corresponding FEM
        function.  Sample points cluster geometrically toward the left
        cell end and avoid the collocation nodes.
        """
        sig = residual_sample_offsets(q)
        tls = a + sig * h
        hist = history_caputo_many(prefix, tls)
        rows = self.tables.partial_weight_rows(sig)
        current = h ** (-self.alpha) * rows @ values
        basis = self.tables.basis_at(sig)
        u = basis @ values
        norms = np.empty(q)
        for i in range(q):
            _, fproj = self.loads.at(self.time_origin, tls[i])
            res = fproj - hist[i] - current[i] - self.op.minv_operator @ u[i]
            norms[i] = linf_norm(self.op, res)
        return tls, norms
