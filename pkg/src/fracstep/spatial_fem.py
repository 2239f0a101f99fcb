"""1-D continuous cubic finite elements for the elliptic part.

Assembles mass and operator matrices for L[u] = -(a u')' + b u' + c u with
homogeneous Dirichlet conditions on a uniform mesh, and provides the
sampled sup-norm used by the residual estimator.  A degenerate "scalar
mode" (a = b = 0, one cell) bypasses the element machinery entirely and
represents the pointwise equation (d_t^alpha + c) u = f with a single
degree of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

_REF_NODES = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])
# interior sample offsets added to the nodal points for the sup norm table
_SAMPLE_OFFSETS = np.array([0.2, 0.4, 0.6, 0.8])


def _as_fn(coef: Coefficient) -> Callable[[np.ndarray], np.ndarray]:
    if callable(coef):
        return coef
    value = float(coef)
    return lambda x: np.full_like(np.asarray(x, dtype=float), value)


def _is_zero(coef: Coefficient) -> bool:
    return not callable(coef) and float(coef) == 0.0


@dataclass(frozen=True)
class SpatialOperatorSpec:
    """Description of the spatial operator L[u] = -(a u')' + b u' + c u."""

    domain: tuple[float, float]
    ncells: int
    a: Coefficient = 1.0
    b: Coefficient = 0.0
    c: Coefficient = 0.0
    degree: int = 3

    def __post_init__(self):
        xl, xr = self.domain
        if not xl < xr:
            raise ValueError(f"empty domain {self.domain}")
        if self.ncells < 1:
            raise ValueError("ncells must be >= 1")
        if self.degree != 3:
            raise ValueError("only cubic elements are supported")
        if _is_zero(self.a) and not (self.ncells == 1 and _is_zero(self.b)):
            raise ValueError("a == 0 requires scalar mode: ncells == 1 and b == 0")

    @property
    def scalar_mode(self) -> bool:
        return _is_zero(self.a) and self.ncells == 1 and _is_zero(self.b)


def _lagrange_tables(points: np.ndarray):
    """Values and derivatives of the reference cubic basis at given points."""
    vander = np.vander(_REF_NODES, 4, increasing=True)  # rows: nodes
    coeffs = np.linalg.inv(vander)  # column l: monomial coeffs of basis l
    vals = np.vander(points, 4, increasing=True) @ coeffs
    dcoeffs = coeffs[1:, :] * np.array([1.0, 2.0, 3.0])[:, None]
    dvals = np.vander(points, 3, increasing=True) @ dcoeffs
    return vals, dvals


@dataclass
class AssembledOperator:
    """Matrices and sampling tables for one spatial discretization."""

    spec: SpatialOperatorSpec
    mass: np.ndarray
    operator: np.ndarray
    dof_x: np.ndarray
    sample_x: np.ndarray
    sample_basis: np.ndarray
    ndof: int
    scalar_mode: bool
    _mass_lu: tuple = field(repr=False, default=None)
    minv_operator: np.ndarray = field(repr=False, default=None)

    def apply_minv(self, vec: np.ndarray) -> np.ndarray:
        """Solve M x = vec (mass-projection of a load vector)."""
        if self.scalar_mode:
            return vec
        return lu_solve(self._mass_lu, vec)

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Nodal interpolant of a function, restricted to interior dofs."""
        return np.asarray(func(self.dof_x), dtype=float)

    def load_vector(self, profile: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Weak load (profile, phi_j) for all interior basis functions."""
        if self.scalar_mode:
            return np.atleast_1d(np.asarray(profile(self.dof_x), dtype=float))
        return _assemble_load(self.spec, profile)


def _gauss01(n: int = 5):
    pts, wts = np.polynomial.legendre.leggauss(n)
    return 0.5 * (pts + 1.0), 0.5 * wts


def assemble(spec: SpatialOperatorSpec) -> AssembledOperator:
    """Assemble mass and operator matrices with Dirichlet rows eliminated.

    Quadrature is 5-point Gauss-Legendre per cell, exact for the bilinear
    form whenever the coefficients are polynomials of degree <= 3.
    """
    if spec.scalar_mode:
        cfn = _as_fn(spec.c)
        xmid = np.array([0.5 * (spec.domain[0] + spec.domain[1])])
        cval = float(np.asarray(cfn(xmid)))
        return AssembledOperator(
            spec=spec,
            mass=np.array([[1.0]]),
            operator=np.array([[cval]]),
            dof_x=xmid,
            sample_x=xmid,
            sample_basis=np.array([[1.0]]),
            ndof=1,
            scalar_mode=True,
            _mass_lu=None,
            minv_operator=np.array([[cval]]),
        )

    xl, xr = spec.domain
    n = spec.ncells
    h = (xr - xl) / n
    nglobal = 3 * n + 1
    afn, bfn, cfn = _as_fn(spec.a), _as_fn(spec.b), _as_fn(spec.c)

    gp, gw = _gauss01()
    vals, dvals = _lagrange_tables(gp)

    mass = np.zeros((nglobal, nglobal))
    oper = np.zeros((nglobal, nglobal))
    for e in range(n):
        x0 = xl + e * h
        xg = x0 + h * gp
        ag, bg, cg = afn(xg), bfn(xg), cfn(xg)
        # local blocks: rows are test functions, columns trial functions
        m_loc = h * (vals.T * gw) @ vals
        a_loc = (
            (dvals.T * (gw * ag)) @ dvals / h
            + (vals.T * (gw * bg)) @ dvals
            + h * (vals.T * (gw * cg)) @ vals
        )
        sl = slice(3 * e, 3 * e + 4)
        mass[sl, sl] += m_loc
        oper[sl, sl] += a_loc

    keep = slice(1, nglobal - 1)
    mass = mass[keep, keep]
    oper = oper[keep, keep]

    nodes = xl + (xr - xl) * np.arange(nglobal) / (3 * n)
    dof_x = nodes[1:-1]

    # sup-norm sample table: all element nodes plus 4 interior points per cell
    locs = np.unique(np.concatenate([_REF_NODES, _SAMPLE_OFFSETS]))
    sample_x = np.unique(
        np.concatenate([xl + (e + locs) * h for e in range(n)])
    )
    sample_basis = _basis_matrix(spec, sample_x)

    lu = lu_factor(mass)
    minv_a = lu_solve(lu, oper)
    return AssembledOperator(
        spec=spec,
        mass=mass,
        operator=oper,
        dof_x=dof_x,
        sample_x=sample_x,
        sample_basis=sample_basis,
        ndof=3 * n - 1,
        scalar_mode=False,
        _mass_lu=lu,
        minv_operator=minv_a,
    )


def _basis_matrix(spec: SpatialOperatorSpec, points: np.ndarray) -> np.ndarray:
    """FEM basis values at arbitrary points, interior dofs only."""
    xl, xr = spec.domain
    n = spec.ncells
    h = (xr - xl) / n
    nglobal = 3 * n + 1
    out = np.zeros((len(points), nglobal))
    cell = np.clip(((points - xl) / h).astype(int), 0, n - 1)
    local = (points - (xl + cell * h)) / h
    vals, _ = _lagrange_tables(local)
    for i, (e, row) in enumerate(zip(cell, vals)):
        out[i, 3 * e : 3 * e + 4] = row
    return out[:, 1:-1]


def _assemble_load(
    spec: SpatialOperatorSpec, profile: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    xl, xr = spec.domain
    n = spec.ncells
    h = (xr - xl) / n
    gp, gw = _gauss01()
    vals, _ = _lagrange_tables(gp)
    out = np.zeros(3 * n + 1)
    for e in range(n):
        xg = xl + e * h + h * gp
        out[3 * e : 3 * e + 4] += h * (vals.T * gw) @ np.asarray(profile(xg))
    return out[1:-1]


def compute_lambda(spec: SpatialOperatorSpec, samples_per_cell: int = 12) -> float:
    """inf over the domain of L applied to the constant 1, i.e. inf c(x).

    Sampled on a dense uniform grid (>= 10 points per cell).
    """
    cfn = _as_fn(spec.c)
    xl, xr = spec.domain
    grid = np.linspace(xl, xr, max(samples_per_cell, 10) * spec.ncells + 1)
    return float(np.min(np.asarray(cfn(grid), dtype=float)))


def linf_norm(op: AssembledOperator, coeffs: np.ndarray) -> float:
    """Max |u_h| over the sample-point table for a dof vector."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != op.ndof:
        raise ValueError(f"expected {op.ndof} dofs, got {coeffs.shape[-1]}")
    return float(np.max(np.abs(op.sample_basis @ coeffs)))
