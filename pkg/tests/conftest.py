import numpy as np
import pytest

from ipvem import mesh, projectors

CVT_SEED = 7
CVT_LLOYD = 100


@pytest.fixture(scope="session")
def cvt32():
    return mesh.generate_cvt(32, seed=CVT_SEED, lloyd_iters=CVT_LLOYD)


@pytest.fixture(scope="session")
def cvt64():
    return mesh.generate_cvt(64, seed=CVT_SEED, lloyd_iters=CVT_LLOYD)


@pytest.fixture(scope="session")
def cvt_sequence(cvt32, cvt64):
    """The acceptance mesh family, built once per session."""
    seq = {32: cvt32, 64: cvt64}
    for n in (128, 256, 512):
        seq[n] = mesh.generate_cvt(n, seed=CVT_SEED, lloyd_iters=CVT_LLOYD)
    return seq


@pytest.fixture(scope="session")
def unit_square_element():
    return projectors.build_element(mesh.generate_uniform_squares(1), 0)


@pytest.fixture(scope="session")
def cvt32_elements(cvt32):
    return projectors.build_elements(cvt32)


def random_star_polygon(rng, n_min=3, n_max=9):
    """Random polygon star-shaped with respect to its own centroid."""
    while True:
        n = int(rng.integers(n_min, n_max + 1))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
        gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * np.pi]]))
        # nondegenerate edges, and the origin strictly inside the polygon
        if gaps.min() < 0.15 or gaps.max() > 2.5:
            continue
        radii = rng.uniform(0.5, 1.0, n)
        pts = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
        pts += rng.uniform(-0.3, 0.3, 2)
        if geometry_of(pts).star_shaped:
            return pts


def geometry_of(points):
    """CellGeometry of a standalone polygon (single-cell mesh)."""
    m = mesh.build_mesh(np.asarray(points, dtype=float), [list(range(len(points)))])
    return m.geometry(0)
