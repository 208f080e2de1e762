"""Global DoF numbering, sparse assembly, clamped boundary handling, solve.

Global DoFs are numbered vertices first, then edge midpoints, then cell
moments.  Clamped boundary conditions zero every boundary vertex and
boundary-edge value; their rows and columns are eliminated rather than
penalized so the conditioning survives small perturbation parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .projectors import SUPPORTED_ORDER, _require_k2


class SolveError(RuntimeError):
    """Linear solve failed to reach the residual target."""


@dataclass(eq=False)
class GlobalDofMap:
    """Vertex, edge-node and moment numbering plus the boundary DoF set."""

    k: int
    n_vertices: int
    n_edges: int
    n_cells: int
    boundary: np.ndarray  # bool mask over all DoFs

    @property
    def n_dofs(self):
        return self.n_vertices + self.n_edges + self.n_cells

    @property
    def free(self):
        return ~self.boundary

    def vertex_dof(self, v):
        return v

    def edge_dof(self, e):
        return self.n_vertices + e

    def moment_dof(self, c):
        return self.n_vertices + self.n_edges + c


def number_dofs(mesh, k=SUPPORTED_ORDER):
    _require_k2(k)
    n_v, n_e, n_c = mesh.n_vertices, mesh.n_edges, mesh.n_cells
    boundary = np.zeros(n_v + n_e + n_c, dtype=bool)
    boundary[:n_v] = mesh.boundary_vertex
    boundary[n_v : n_v + n_e] = mesh.boundary_edge
    return GlobalDofMap(k=k, n_vertices=n_v, n_edges=n_e, n_cells=n_c, boundary=boundary)


def cell_dof_indices(dof_map, mesh, cell_id):
    """Global indices of one cell's DoFs in local order."""
    verts = np.asarray(mesh.cells[cell_id], dtype=int)
    edges = np.array([e for e, _ in mesh.cell_edges[cell_id]], dtype=int)
    return np.concatenate(
        [verts, dof_map.n_vertices + edges, [dof_map.moment_dof(cell_id)]]
    )


@dataclass(eq=False)
class SparseSystem:
    """Reduced symmetric system over the free DoFs."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    eps: float
    dof_map: GlobalDofMap
    free_indices: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_free(self):
        return len(self.free_indices)


@dataclass(eq=False)
class DiscreteSolution:
    """Full DoF vector with boundary entries pinned to zero."""

    values: np.ndarray
    eps: float
    residual: float
    diagnostics: dict = field(default_factory=dict)


def _coo_accumulate(mesh, dof_map, cell_blocks, edge_blocks):
    rows, cols, vals = [], [], []

    def scatter(idx, block):
        n = len(idx)
        rows.append(np.repeat(idx, n))
        cols.append(np.tile(idx, n))
        vals.append(np.asarray(block, dtype=float).ravel())

    if cell_blocks is not None:
        for cid, block in enumerate(cell_blocks):
            if block is None:
                continue
            scatter(cell_dof_indices(dof_map, mesh, cid), block)
    if edge_blocks is not None:
        for stencil in edge_blocks:
            idx = np.concatenate(
                [cell_dof_indices(dof_map, mesh, c) for c in stencil.cells]
            )
            scatter(idx, stencil.block)
    n = dof_map.n_dofs
    if not rows:
        return sp.csr_matrix((n, n))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def assemble_matrix(mesh, dof_map, cell_blocks=None, edge_blocks=None):
    """Scatter-add cell blocks and edge stencils into a full-size matrix."""
    return _coo_accumulate(mesh, dof_map, cell_blocks, edge_blocks)


def assemble_j1(mesh, dof_map, stencils):
    """Full-size matrix of the penalty part alone (no boundary elimination)."""
    j1_only = [
        type(s)(s.edge_id, s.lam, s.j1_block, s.j1_block, s.cells, s.n_dofs)
        for s in stencils
    ]
    return _coo_accumulate(mesh, dof_map, None, j1_only)


@dataclass(eq=False)
class OperatorParts:
    """Full-size eps-independent pieces of the discrete operator.

    ``hess`` is the Hessian-energy form plus all edge coupling blocks (the
    part multiplied by eps^2), ``grad`` the gradient-energy form, ``a_only``
    and ``j1`` the separate ingredients of the discrete energy norm.
    """

    hess: sp.csr_matrix
    grad: sp.csr_matrix
    a_only: sp.csr_matrix
    j1: sp.csr_matrix


def build_operator_parts(mesh, dof_map, local_forms, stencils):
    a_only = assemble_matrix(mesh, dof_map, cell_blocks=[lf.a_matrix for lf in local_forms])
    j_all = assemble_matrix(mesh, dof_map, edge_blocks=stencils)
    grad = assemble_matrix(mesh, dof_map, cell_blocks=[lf.b_matrix for lf in local_forms])
    return OperatorParts(
        hess=(a_only + j_all).tocsr(),
        grad=grad,
        a_only=a_only,
        j1=assemble_j1(mesh, dof_map, stencils),
    )


def load_vector(mesh, dof_map, loads):
    """Scatter per-cell load vectors into the global right-hand side."""
    rhs = np.zeros(dof_map.n_dofs)
    for cid, load in enumerate(loads):
        np.add.at(rhs, cell_dof_indices(dof_map, mesh, cid), load)
    return rhs


def assemble(mesh, dof_map, eps, local_forms, stencils):
    """Assemble eps^2 (A + J) + B over the free DoFs with the load vector."""
    parts = build_operator_parts(mesh, dof_map, local_forms, stencils)
    rhs = load_vector(mesh, dof_map, [lf.load for lf in local_forms])
    return reduce_system(parts.hess, parts.grad, rhs, eps, dof_map)


def reduce_system(hess_part, grad_part, rhs, eps, dof_map):
    """Combine the eps-scaled parts and eliminate the boundary rows/columns."""
    full = (eps**2) * hess_part + grad_part
    full = (full + full.T) * 0.5  # remove accumulation-order roundoff
    free = np.flatnonzero(dof_map.free)
    reduced = full[free][:, free].tocsr()
    return SparseSystem(
        matrix=reduced,
        rhs=rhs[free],
        eps=eps,
        dof_map=dof_map,
        free_indices=free,
        diagnostics={"n_total": dof_map.n_dofs},
    )


RESIDUAL_TARGET = 1e-10


def solve(system, residual_target=RESIDUAL_TARGET):
    """Direct sparse solve with a residual check and a CG fallback."""
    mat, rhs = system.matrix, system.rhs
    rhs_norm = float(np.linalg.norm(rhs))
    diagnostics = {"method": "splu"}
    if rhs_norm == 0.0:
        x = np.zeros_like(rhs)
        residual = 0.0
    else:
        x = None
        try:
            lu = spla.splu(mat.tocsc())
            x = lu.solve(rhs)
            x, residual = _refine(mat, rhs, x, lu, residual_target)
        except RuntimeError:
            residual = np.inf
        if x is None or not np.isfinite(residual) or residual > residual_target:
            x, residual = _cg_solve(mat, rhs, residual_target)
            diagnostics["method"] = "cg"
        if not np.isfinite(residual) or residual > residual_target:
            raise SolveError(f"relative residual {residual:.3e} above {residual_target:.1e}")
    values = np.zeros(system.dof_map.n_dofs)
    values[system.free_indices] = x
    diagnostics["residual"] = residual
    return DiscreteSolution(values=values, eps=system.eps, residual=residual, diagnostics=diagnostics)


def _refine(mat, rhs, x, lu, residual_target, max_steps=4):
    """Mixed-precision iterative refinement.

    Residuals are evaluated in extended precision; plain double evaluation
    bottoms out near u * ||M|| * ||x|| / ||b||, which for the stiff
    small-mesh-size systems sits right at the residual target.
    """
    mat_ld = mat.astype(np.longdouble)
    rhs_ld = rhs.astype(np.longdouble)
    rhs_norm = float(np.linalg.norm(rhs))
    residual = np.inf
    for _ in range(max_steps):
        r = rhs_ld - mat_ld @ x.astype(np.longdouble)
        residual = float(np.linalg.norm(r.astype(float))) / rhs_norm
        if residual <= residual_target / 10.0:
            break
        x = x + lu.solve(r.astype(float))
    return x, residual


def _cg_solve(mat, rhs, residual_target):
    diag = mat.diagonal().copy()
    diag[diag <= 0.0] = 1.0
    precond = sp.diags(1.0 / diag)
    x, info = spla.cg(mat, rhs, rtol=residual_target / 10.0, atol=0.0, maxiter=20 * mat.shape[0], M=precond)
    residual = float(np.linalg.norm(mat @ x - rhs)) / float(np.linalg.norm(rhs))
    return x, residual


def is_positive_definite(system):
    """Positive definiteness by a dense symmetric factorization.

    Returns ``(flag, smallest_pivot_or_eigenvalue)``; the matrix sizes in the
    acceptance runs stay small enough for a dense check.
    """
    dense = system.matrix.toarray()
    try:
        chol = np.linalg.cholesky(dense)
        return True, float(np.min(np.diag(chol)) ** 2)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(dense)[0])
        return False, smallest


def export_matrix(system, path):
    """Write the reduced matrix in coordinate text format: row col value."""
    coo = system.matrix.tocoo()
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {float(v)!r}\n")
