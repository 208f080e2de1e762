"""Manufactured solutions, forcing, discrete errors and convergence rates.

A discrete solution is never pointwise evaluable inside a cell, so the error
is measured from computable data.  The default is the discrete energy norm
of the DoF interpolation error (exact-solution DoFs minus solution DoFs),
whose components are the assembled Hessian-form-plus-penalty energy and the
gradient-form energy; that is the norm the penalty parameter controls and it
matches the reference convergence figures.  Broken seminorm errors of the
element solution polynomials are computed alongside so both readings of the
error are always reported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

from .basis import derivative_matrix, polygon_quadrature
from .projectors import SUPPORTED_ORDER
from .system import cell_dof_indices


@dataclass(frozen=True)
class ManufacturedSolution:
    """Closed-form solution with partial derivatives through order four.

    ``partial(i, j, x, y)`` evaluates d^(i+j) u / dx^i dy^j; ``clamped``
    records whether both the value and the normal derivative vanish on the
    boundary of the unit square.
    """

    name: str
    partial: object
    clamped: bool = True

    def __call__(self, x, y):
        return self.partial(0, 0, x, y)


def _leibniz_poly_trig(poly_coeffs, freq, n, x):
    """n-th derivative of p(x) * sin(freq x) via the product rule."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    for i in range(n + 1):
        pd = npoly.polyder(poly_coeffs, i) if i else np.asarray(poly_coeffs, dtype=float)
        trig = np.sin(freq * x + (n - i) * math.pi / 2.0)
        total += math.comb(n, i) * npoly.polyval(x, pd) * freq ** (n - i) * trig
    return total


def _example1_partial(i, j, x, y):
    # u = 10 x^2 (1-x)^2 sin(pi x) * y^2 (1-y)^2
    gx = _leibniz_poly_trig([0.0, 0.0, 10.0, -20.0, 10.0], math.pi, i, x)
    hy = npoly.polyval(np.asarray(y, dtype=float), npoly.polyder([0.0, 0.0, 1.0, -2.0, 1.0], j) if j else [0.0, 0.0, 1.0, -2.0, 1.0])
    return gx * hy


def _sin_squared_deriv(n, x):
    """n-th derivative of sin(pi x)^2 = (1 - cos(2 pi x))/2."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.sin(math.pi * x) ** 2
    w = 2.0 * math.pi
    # d/dx^n of -(1/2) cos(w x) = -(1/2) w^n cos(w x + n pi/2)
    return -0.5 * w**n * np.cos(w * x + n * math.pi / 2.0)


def _example2_partial(i, j, x, y):
    return _sin_squared_deriv(i, x) * _sin_squared_deriv(j, y)


EXAMPLES = {
    1: ManufacturedSolution("example1", _example1_partial),
    2: ManufacturedSolution("example2", _example2_partial),
}


def example_solution(which):
    try:
        return EXAMPLES[int(which)]
    except (KeyError, ValueError):
        raise ValueError(f"unknown example {which!r}; available: {sorted(EXAMPLES)}")


def forcing(msol, eps, x, y):
    """Source of the perturbed problem: eps^2 biharmonic(u) - laplacian(u)."""
    bih = msol.partial(4, 0, x, y) + 2.0 * msol.partial(2, 2, x, y) + msol.partial(0, 4, x, y)
    lap = msol.partial(2, 0, x, y) + msol.partial(0, 2, x, y)
    return eps**2 * bih - lap


def forcing_parts(msol):
    """The two eps-independent load densities: (biharmonic u, -laplacian u)."""

    def f4(x, y):
        return msol.partial(4, 0, x, y) + 2.0 * msol.partial(2, 2, x, y) + msol.partial(0, 4, x, y)

    def f2(x, y):
        return -(msol.partial(2, 0, x, y) + msol.partial(0, 2, x, y))

    return f4, f2


@dataclass(eq=False)
class ErrorRecord:
    """Energy error of one (mesh, eps) run.

    ``h2_part`` and ``h1_part`` are the unweighted components entering the
    total, so e_total^2 = eps^2 h2_part^2 + h1_part^2 holds exactly as
    stored.  The projection-based seminorm errors are kept alongside for
    comparison: ``proj_h2`` measures |u - p2|_{2,h} with p2 the h2-projected
    solution polynomial, ``proj_h1`` measures |u - p1|_{1,h} with the
    h1-projected one, and ``proj_h1_via_h2`` the gradient error of p2.
    """

    eps: float
    n_cells: int
    h_max: float
    e_total: float
    h2_part: float
    h1_part: float
    norm: str = "interp-energy"
    j1_energy: float = 0.0
    proj_h2: float = float("nan")
    proj_h1: float = float("nan")
    proj_h1_via_h2: float = float("nan")

    @property
    def decomposition_residual(self):
        return abs(self.e_total**2 - (self.eps**2 * self.h2_part**2 + self.h1_part**2))


def interpolation_dofs(mesh, dof_map, elements, msol, quad_order=8):
    """Global DoF vector of the exact solution: point values and cell means."""
    chi = np.zeros(dof_map.n_dofs)
    for el in elements:
        idx = cell_dof_indices(dof_map, mesh, el.cell_id)
        pts = el.layout.points
        chi[idx[: len(pts)]] = msol(pts[:, 0], pts[:, 1])
        qp, qw = polygon_quadrature(el.geometry, quad_order)
        chi[idx[-1]] = float(qw @ msol(qp[:, 0], qp[:, 1])) / el.geometry.area
    return chi


def projection_errors(mesh, dof_map, elements, solution, msol, quad_order=8):
    """Broken seminorm errors of the element solution polynomials.

    Returns (|u - p2|_{2,h}, |u - p1|_{1,h}, |u - p2|_{1,h}) with p2 and p1
    the h2- and h1-projected polynomials, integrated by fan-triangle
    quadrature of the requested order.
    """
    h2_sq = 0.0
    h1_h1_sq = 0.0
    h1_h2_sq = 0.0
    for el in elements:
        chi = solution.values[cell_dof_indices(dof_map, mesh, el.cell_id)]
        p_h2 = el.projectors.h2_coeff @ chi
        p_h1 = el.projectors.h1_coeff @ chi
        pts, w = polygon_quadrature(el.geometry, quad_order)
        x, y = pts[:, 0], pts[:, 1]
        Dx = derivative_matrix(el.basis, "x")
        Dy = derivative_matrix(el.basis, "y")
        vals = el.basis.evaluate(pts)
        ux = msol.partial(1, 0, x, y)
        uy = msol.partial(0, 1, x, y)
        h1_h2_sq += float(w @ ((ux - vals @ (Dx @ p_h2)) ** 2 + (uy - vals @ (Dy @ p_h2)) ** 2))
        h1_h1_sq += float(w @ ((ux - vals @ (Dx @ p_h1)) ** 2 + (uy - vals @ (Dy @ p_h1)) ** 2))
        # second derivatives of the h2 polynomial are constants
        pxx = (Dx @ Dx @ p_h2)[0]
        pxy = (Dx @ Dy @ p_h2)[0]
        pyy = (Dy @ Dy @ p_h2)[0]
        uxx = msol.partial(2, 0, x, y)
        uxy = msol.partial(1, 1, x, y)
        uyy = msol.partial(0, 2, x, y)
        h2_sq += float(w @ ((uxx - pxx) ** 2 + 2.0 * (uxy - pxy) ** 2 + (uyy - pyy) ** 2))
    return math.sqrt(h2_sq), math.sqrt(h1_h1_sq), math.sqrt(h1_h2_sq)


def energy_error(
    mesh,
    dof_map,
    elements,
    solution,
    msol,
    parts=None,
    quad_order=8,
    norm="interp-energy",
    h1_projection="h1",
    with_projection_parts=True,
):
    """Error record of a discrete solution against the exact one.

    The default norm is the discrete energy of the DoF interpolation error
    delta = dofs(u) - dofs(u_h): the Hessian component is the a-form energy
    plus the penalty energy of delta, the gradient component the b-form
    energy, mirroring the norm the penalty parameter is designed to control.
    ``norm='projection'`` uses the broken seminorms of the element solution
    polynomials instead (h2 projection for the Hessian part and the
    projection chosen by ``h1_projection`` for the gradient part).
    """
    if norm not in ("interp-energy", "projection"):
        raise ValueError("norm must be 'interp-energy' or 'projection'")
    eps = solution.eps

    proj = (float("nan"),) * 3
    if with_projection_parts or norm == "projection":
        proj = projection_errors(mesh, dof_map, elements, solution, msol, quad_order)

    if norm == "interp-energy":
        if parts is None:
            raise ValueError("interp-energy norm needs the assembled operator parts")
        delta = interpolation_dofs(mesh, dof_map, elements, msol, quad_order) - solution.values
        h2_sq = float(delta @ (parts.a_only @ delta)) + float(delta @ (parts.j1 @ delta))
        h1_sq = float(delta @ (parts.grad @ delta))
    else:
        h2_sq = proj[0] ** 2
        h1_sq = proj[1] ** 2 if h1_projection == "h1" else proj[2] ** 2

    return ErrorRecord(
        eps=eps,
        n_cells=mesh.n_cells,
        h_max=mesh.max_diameter(),
        e_total=math.sqrt(eps**2 * h2_sq + h1_sq),
        h2_part=math.sqrt(h2_sq),
        h1_part=math.sqrt(h1_sq),
        norm=norm,
        proj_h2=proj[0],
        proj_h1=proj[1],
        proj_h1_via_h2=proj[2],
    )


def j1_energy(solution, j1_matrix):
    """Penalty energy x^T J1 x of a solution vector; nonnegative."""
    x = solution.values
    return float(x @ (j1_matrix @ x))


def fit_rate(h_values, errors):
    """Least-squares slope of log(error) against log(h).

    Needs at least two records with strictly decreasing h.
    """
    h = np.asarray(h_values, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(h) < 2:
        raise ValueError("rate fit needs at least two records")
    if np.any(np.diff(h) >= 0.0):
        raise ValueError("mesh sizes must be strictly decreasing")
    if np.any(e <= 0.0):
        raise ValueError("errors must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(h), np.log(e), 1)
    return float(slope)


@dataclass(eq=False)
class ConvergenceReport:
    """Error records per eps with fitted rates and run metadata."""

    records: dict                   # eps -> list[ErrorRecord], sorted by decreasing h
    seed: int
    penalty_a: float
    k: int = SUPPORTED_ORDER
    rates_h: dict = field(default_factory=dict)
    rates_n: dict = field(default_factory=dict)

    def finalize(self):
        for eps, recs in self.records.items():
            recs.sort(key=lambda r: -r.h_max)
            if len(recs) >= 3:
                self.rates_h[eps] = fit_rate([r.h_max for r in recs], [r.e_total for r in recs])
                self.rates_n[eps] = fit_rate(
                    [r.n_cells ** -0.5 for r in recs], [r.e_total for r in recs]
                )
        return self
