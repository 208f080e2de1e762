"""Interior-penalty virtual element solver for the fourth-order singular
perturbation problem eps^2 biharmonic(u) - laplacian(u) = f with clamped
boundary conditions on polygonal meshes, plus a convergence-study driver."""

from .basis import (
    EdgeRule,
    PolyCoeffs,
    ScaledMonomialBasis,
    gauss_lobatto,
    integrate_monomial,
    poly_derivative,
    triangle_quadrature,
)
from .forms import EdgeStencil, LocalForms, PenaltyConfig, penalty_parameter
from .mesh import (
    CellGeometry,
    MeshQualityReport,
    PolygonalMesh,
    VirtualTriangle,
    export_mesh,
    generate_cvt,
    generate_uniform_squares,
    import_mesh,
    mesh_quality,
)
from .projectors import DofLayout, ElementContext, ProjectorSet, build_element, build_elements
from .system import DiscreteSolution, GlobalDofMap, SparseSystem, assemble, number_dofs, solve
from .verify import (
    ConvergenceReport,
    ErrorRecord,
    ManufacturedSolution,
    energy_error,
    example_solution,
    fit_rate,
    forcing,
)

__version__ = "0.1.0"
