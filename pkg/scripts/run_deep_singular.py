#!/usr/bin/env python3
"""Example 2 at eps = 1e-10: the solver runs far into the singular limit and
keeps first-order convergence.  Also exports the finest solution field in
VTK format for plotting."""

import os
import sys

from ipvem import cli, forms, projectors, system, verify
from ipvem.mesh import generate_cvt


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "out/deep-singular"
    eps = 1e-10
    config = cli.StudyConfig(
        example=2,
        eps=[eps],
        mesh_kind="cvt",
        sizes=[32, 64, 128, 256, 512],
        seed=7,
        lloyd_iters=100,
        out_dir=out_dir,
    )
    output = cli.run_study(config)
    cli.write_outputs(output)
    print(f"fitted rate vs h: {output.report.rates_h[eps]:.3f}")

    # re-solve the finest mesh to export the field alongside the exact one
    msol = verify.example_solution(2)
    m = generate_cvt(config.sizes[-1], seed=config.seed, lloyd_iters=config.lloyd_iters)
    elements = projectors.build_elements(m)
    dof_map = system.number_dofs(m)
    lf = forms.build_local_forms(m, elements, lambda x, y: verify.forcing(msol, eps, x, y))
    stencils = forms.build_edge_stencils(m, elements)
    sol = system.solve(system.assemble(m, dof_map, eps, lf, stencils))
    path = os.path.join(out_dir, "solution-512.vtk")
    cli.export_solution_fields(m, dof_map, elements, sol, path, msol=msol)
    print(f"wrote {path}")
    return output.exit_code


if __name__ == "__main__":
    sys.exit(main())
