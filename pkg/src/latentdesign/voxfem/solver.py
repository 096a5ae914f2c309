"""Matrix-free linear elasticity on a voxel grid with Jacobi-preconditioned CG."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .element import element_stiffness
from .problem import FemProblem, NonConvergence, element_dofs, flatten_field, unflatten_field

log = logging.getLogger(__name__)


@lru_cache(maxsize=8)
def _unit_stiffness(poisson: float) -> np.ndarray:
    ke = element_stiffness(poisson=poisson)
    ke.setflags(write=False)
    return ke


class StiffnessOperator:
    """Applies K(rho) element by element without assembling the global matrix.

    Fixed DOFs are eliminated by zeroing their rows/columns and placing a unit
    diagonal, so the operator stays SPD on the full DOF vector.
    """

    def __init__(self, problem: FemProblem, density: np.ndarray, deterministic: bool = False):
        density = np.asarray(density, dtype=float)
        if density.shape != problem.dims:
            raise ValueError(f"density shape {density.shape} does not match problem dims {problem.dims}")
        self.problem = problem
        self.deterministic = deterministic
        self.ke = _unit_stiffness(problem.material.poisson)
        self.edof = element_dofs(problem.dims)
        self.edof_flat = self.edof.ravel()
        self.youngs = problem.material.youngs(flatten_field(density))
        self.n_dof = problem.n_dof
        self.fixed = problem.fixed_dofs()
        self.free = np.ones(self.n_dof)
        self.free[self.fixed] = 0.0

    def element_products(self, u: np.ndarray) -> np.ndarray:
        """Rows K_e u_e (unit modulus), shape (n_elements, 24)."""
        ue = u[self.edof]
        if self.deterministic:
            return np.einsum("ej,jk->ek", ue, self.ke, optimize=False)
        return ue @ self.ke

    def apply_unconstrained(self, u: np.ndarray) -> np.ndarray:
        ku = self.element_products(u)
        ku *= self.youngs[:, None]
        return np.bincount(self.edof_flat, weights=ku.ravel(), minlength=self.n_dof)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        uf = u.copy()
        uf[self.fixed] = 0.0
        y = self.apply_unconstrained(uf)
        y[self.fixed] = u[self.fixed]
        return y

    def diagonal(self) -> np.ndarray:
        d = np.bincount(self.edof_flat, weights=np.outer(self.youngs, np.diag(self.ke)).ravel(), minlength=self.n_dof)
        return d * self.free + (1.0 - self.free)


@dataclass
class SolveInfo:
    iterations: int
    residual: float


def pcg(apply, b, diag, tol=1e-6, max_iter=1000, x0=None):
    """Jacobi-preconditioned conjugate gradient.

    Converged when ||b - Ax|| <= tol * ||b||. Returns (x, SolveInfo); raises
    NonConvergence past ``max_iter``.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, 0.0)
    inv_diag = 1.0 / diag
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, SolveInfo(0, res)
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            return x, SolveInfo(it, res)
        z = inv_diag * r
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise NonConvergence(max_iter, res)


def solve(
    problem: FemProblem,
    density: np.ndarray,
    tol: float = 1e-6,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
    deterministic: bool = False,
    return_info: bool = False,
):
    """Displacements (flat, 3 DOFs per node) solving K(rho) u = f.

    ``max_iter`` defaults to 10 * n_dof. ``x0`` warm-starts CG.
    """
    problem.check_fixtures()
    op = StiffnessOperator(problem, density, deterministic=deterministic)
    f = problem.load_vector() * op.free
    if max_iter is None:
        max_iter = 10 * problem.n_dof
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float) * op.free
    u, info = pcg(op, f, op.diagonal(), tol=tol, max_iter=max_iter, x0=x0)
    log.debug("solve dims=%s iters=%d residual=%.2e", problem.dims, info.iterations, info.residual)
    return (u, info) if return_info else u


def element_energies(problem: FemProblem, displacements: np.ndarray) -> np.ndarray:
    """u_e^T K_e u_e at unit modulus, flat per element."""
    op_ke = _unit_stiffness(problem.material.poisson)
    ue = np.asarray(displacements)[element_dofs(problem.dims)]
    return np.einsum("ej,jk,ek->e", ue, op_ke, ue, optimize=False)


def compliance(problem: FemProblem, density: np.ndarray, displacements: np.ndarray) -> float:
    """c = f^T u over the free DOFs."""
    f = problem.load_vector()
    f[problem.fixed_dofs()] = 0.0
    return float(f @ np.asarray(displacements))


def compliance_from_elements(problem: FemProblem, density: np.ndarray, displacements: np.ndarray) -> float:
    """c = sum_e E(rho_e) u_e^T K_e u_e."""
    youngs = problem.material.youngs(flatten_field(density))
    return float(youngs @ element_energies(problem, displacements))


def raw_strain_energy(problem: FemProblem, density: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """s_e = 1/2 E(rho_e) u_e^T K_e u_e on the grid, shape dims."""
    youngs = problem.material.youngs(flatten_field(density))
    return unflatten_field(0.5 * youngs * element_energies(problem, displacements), problem.dims)


def normalize_energy(raw: np.ndarray, clip_percentile: float = 99.5) -> np.ndarray:
    """Clip at a percentile then min-max scale to [0, 1]; an all-zero field stays zero."""
    raw = np.asarray(raw, dtype=float)
    top = np.percentile(raw, clip_percentile)
    clipped = np.minimum(raw, top)
    lo = clipped.min()
    span = clipped.max() - lo
    if span <= 0.0:
        # clip swallowed the whole range; fall back to the unclipped field
        clipped = raw
        span = raw.max() - lo
        if span <= 0.0:
            return np.zeros_like(raw) if raw.max() <= 0.0 else np.ones_like(raw)
    return (clipped - lo) / span


def strain_energy_field(problem: FemProblem, density: np.ndarray, displacements: np.ndarray) -> np.ndarray:
    """Normalized per-element strain energy in [0, 1], shape dims."""
    return normalize_energy(raw_strain_energy(problem, density, displacements))
