import itertools

import numpy as np
import pytest

from latentdesign.voxfem import FacePatch, FemProblem, LoadKind, LoadSpec, element_stiffness

# Independent reference implementations used as oracles across test modules.


def ref_node(dims, i, j, k):
    nx, ny, _ = dims
    return i + (nx + 1) * (j + (ny + 1) * k)


def ref_element_nodes(dims, i, j, k):
    """Hex8 corner nodes, counter-clockwise on the bottom face, then the top face."""
    corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    return [ref_node(dims, i + a, j + b, k + c) for a, b, c in corners]


def ref_hex8_stiffness(E=1.0, nu=0.3, order=3):
    """Unit-cube trilinear hexahedron stiffness by Gauss-Legendre quadrature of the given order."""
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[3:, 3:] = np.eye(3) * mu
    signs = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1], [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]])
    pts, wts = np.polynomial.legendre.leggauss(order)
    K = np.zeros((24, 24))
    for (a, wa), (b, wb), (c, wc) in itertools.product(zip(pts, wts), repeat=3):
        xi = np.array([a, b, c])
        dN = np.zeros((8, 3))
        for n, s in enumerate(signs):
            f = 1 + s * xi
            dN[n] = [s[0] * f[1] * f[2], f[0] * s[1] * f[2], f[0] * f[1] * s[2]]
        dN = dN / 8.0 * 2.0  # d/dx = 2 d/dxi on the unit cube
        B = np.zeros((6, 24))
        for n in range(8):
            gx, gy, gz = dN[n]
            B[0, 3 * n] = gx
            B[1, 3 * n + 1] = gy
            B[2, 3 * n + 2] = gz
            B[3, 3 * n], B[3, 3 * n + 1] = gy, gx
            B[4, 3 * n + 1], B[4, 3 * n + 2] = gz, gy
            B[5, 3 * n], B[5, 3 * n + 2] = gz, gx
        K += B.T @ D @ B * (wa * wb * wc) * 0.125
    return K


def dense_stiffness(problem, density):
    dims = problem.dims
    mat = problem.material
    ke = element_stiffness(poisson=mat.poisson)
    K = np.zeros((problem.n_dof, problem.n_dof))
    for k, j, i in itertools.product(range(dims[2]), range(dims[1]), range(dims[0])):
        E = mat.youngs_void + density[i, j, k] ** mat.penalty * (mat.youngs_solid - mat.youngs_void)
        dofs = np.array([[3 * n, 3 * n + 1, 3 * n + 2] for n in ref_element_nodes(dims, i, j, k)]).ravel()
        K[np.ix_(dofs, dofs)] += E * ke
    return K


def dense_solve(problem, density):
    K = dense_stiffness(problem, density)
    f = problem.load_vector()
    fixed = problem.fixed_dofs()
    free = np.setdiff1d(np.arange(problem.n_dof), fixed)
    u = np.zeros(problem.n_dof)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], f[free])
    return u


def face_nodes(dims, axis, side):
    rng = [range(d + 1) for d in dims]
    rng[axis] = [dims[axis] if side else 0]
    return [ref_node(dims, i, j, k) for i, j, k in itertools.product(*rng)]


def cantilever(dims=(16, 8, 8), magnitude=1.0):
    """x=0 face clamped, downward point force at the centre node of the x=nx face."""
    nx, ny, nz = dims
    tip = ref_node(dims, nx, ny // 2, nz // 2)
    return FemProblem(dims, tuple(face_nodes(dims, 0, 0)), (LoadSpec(LoadKind.NODAL_FORCE, tip, magnitude, (0.0, 0.0, -1.0)),))


def random_problem(rng, dims, kind=None):
    """Random fixtures on the x=0 face plus one random load of ``kind``."""
    fixed = face_nodes(dims, 0, 0)
    kinds = list(LoadKind)
    kind = kind or kinds[rng.integers(len(kinds))]
    direction = rng.normal(size=3)
    direction = tuple(direction / np.linalg.norm(direction))
    if kind is LoadKind.NODAL_FORCE:
        region = ref_node(dims, dims[0], int(rng.integers(dims[1] + 1)), int(rng.integers(dims[2] + 1)))
    else:
        region = FacePatch(0, 1, (0, 0), (dims[1], dims[2]))
    return FemProblem(dims, tuple(fixed), (LoadSpec(kind, region, float(rng.uniform(0.5, 2.0)), direction),))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
