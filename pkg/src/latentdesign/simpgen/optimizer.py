"""SIMP compliance minimisation: sensitivity filter, OC update and the main loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..voxfem import FemProblem, compliance, element_energies, solve, strain_energy_field, unflatten_field

log = logging.getLogger(__name__)

RHO_MIN = 1e-3


class BisectionFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SimpConfig:
    volfrac: float = 0.3
    max_iters: int = 60
    move_limit: float = 0.2
    damping: float = 0.5
    filter_radius: float = 1.5
    convergence_tol: float = 0.01
    cg_tol: float = 1e-6
    deterministic: bool = False

    def __post_init__(self):
        if not 0 < self.volfrac < 1:
            raise ValueError("volfrac must be in (0, 1)")
        if self.filter_radius < 1:
            raise ValueError("filter_radius must be >= 1")
        if not 0 < self.move_limit <= 1:
            raise ValueError("move_limit must be in (0, 1]")


@dataclass
class SimpHistory:
    compliance: list[float] = field(default_factory=list)
    volume_fraction: list[float] = field(default_factory=list)
    change: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.compliance)


def filter_kernel(radius: float) -> np.ndarray:
    """Cone weights max(0, radius - dist) over a cubic stencil."""
    reach = int(np.floor(radius))
    offs = np.arange(-reach, reach + 1)
    dx, dy, dz = np.meshgrid(offs, offs, offs, indexing="ij")
    return np.maximum(0.0, radius - np.sqrt(dx**2 + dy**2 + dz**2))


def sensitivity_filter(sens: np.ndarray, radius: float, density: np.ndarray | None = None) -> np.ndarray:
    """Mesh-independence filter: sum_i w_ei rho_i s_i / (rho_e sum_i w_ei).

    Fields are 3D arrays; weights use element-centre distances and are
    truncated at the domain boundary.
    """
    sens = np.asarray(sens, dtype=float)
    rho = np.ones_like(sens) if density is None else np.maximum(np.asarray(density, dtype=float), RHO_MIN)
    kernel = filter_kernel(radius)
    num = ndimage.correlate(rho * sens, kernel, mode="constant", cval=0.0)
    wsum = ndimage.correlate(np.ones_like(sens), kernel, mode="constant", cval=0.0)
    return num / (rho * wsum)


def _oc_candidate(rho, sens, lam, cfg: SimpConfig):
    lower = np.maximum(RHO_MIN, rho - cfg.move_limit)
    upper = np.minimum(1.0, rho + cfg.move_limit)
    return np.clip(rho * (np.maximum(-sens, 0.0) / lam) ** cfg.damping, lower, upper)


def oc_update(density: np.ndarray, sensitivities: np.ndarray, cfg: SimpConfig, tol: float = 1e-7) -> np.ndarray:
    """Optimality-criteria step with the Lagrange multiplier found by bisection.

    The multiplier is bracketed and bisected geometrically until the mean
    density matches ``cfg.volfrac`` within ``tol``.
    """
    rho = np.asarray(density, dtype=float)
    sens = np.asarray(sensitivities, dtype=float)
    lower = np.maximum(RHO_MIN, rho - cfg.move_limit)
    upper = np.minimum(1.0, rho + cfg.move_limit)
    if lower.mean() > cfg.volfrac + tol or upper.mean() < cfg.volfrac - tol:
        raise BisectionFailure(f"volfrac {cfg.volfrac} unreachable within move limits")
    smax = float(np.max(-sens))
    if not np.isfinite(smax) or smax <= 0.0:
        raise BisectionFailure("sensitivities carry no descent information")

    # mean(candidate) is non-increasing in lam; widen until it straddles volfrac
    lo, hi = smax, smax
    for _ in range(200):
        if _oc_candidate(rho, sens, lo, cfg).mean() >= cfg.volfrac:
            break
        lo *= 0.5
    else:
        raise BisectionFailure("could not bracket multiplier from below")
    for _ in range(200):
        if _oc_candidate(rho, sens, hi, cfg).mean() <= cfg.volfrac:
            break
        hi *= 2.0
    else:
        raise BisectionFailure("could not bracket multiplier from above")

    new = _oc_candidate(rho, sens, lo, cfg)
    for _ in range(300):
        mid = np.sqrt(lo * hi)
        new = _oc_candidate(rho, sens, mid, cfg)
        vol = new.mean()
        if abs(vol - cfg.volfrac) <= tol:
            return new
        if vol > cfg.volfrac:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-15:
            break
    if abs(new.mean() - cfg.volfrac) > tol:
        raise BisectionFailure(f"bisection stalled at volume {new.mean():.8f}")
    return new


def compliance_sensitivities(problem: FemProblem, density: np.ndarray, u: np.ndarray) -> np.ndarray:
    """dc/drho_e = -p rho^(p-1) (E_solid - E_void) u_e^T K_e u_e, on the grid."""
    mat = problem.material
    ue_ke_ue = unflatten_field(element_energies(problem, u), problem.dims)
    return -mat.penalty * density ** (mat.penalty - 1) * (mat.youngs_solid - mat.youngs_void) * ue_ke_ue


def initial_strain_energy(problem: FemProblem, volfrac: float, cg_tol=1e-6, deterministic=False) -> np.ndarray:
    """Normalized strain energy of the not-yet-optimised domain at uniform density."""
    rho = np.full(problem.dims, volfrac)
    u = solve(problem, rho, tol=cg_tol, deterministic=deterministic)
    return strain_energy_field(problem, rho, u)


def run_simp(problem: FemProblem, cfg: SimpConfig, callback=None):
    """Optimise ``problem`` from uniform density ``cfg.volfrac``.

    Returns ``(initial_strain_energy, final_density, history)``; history
    compliance at iteration k is evaluated at the density entering that
    iteration. ``callback(it, density, c)`` is invoked after every update.
    """
    problem.validate()
    rho = np.full(problem.dims, cfg.volfrac)
    u = solve(problem, rho, tol=cfg.cg_tol, deterministic=cfg.deterministic)
    se0 = strain_energy_field(problem, rho, u)
    history = SimpHistory()
    for it in range(1, cfg.max_iters + 1):
        if it > 1:
            u = solve(problem, rho, tol=cfg.cg_tol, x0=u, deterministic=cfg.deterministic)
        c = compliance(problem, rho, u)
        sens = compliance_sensitivities(problem, rho, u)
        sens = sensitivity_filter(sens, cfg.filter_radius, rho)
        new = oc_update(rho, sens, cfg)
        change = float(np.max(np.abs(new - rho)))
        rho = new
        history.compliance.append(c)
        history.volume_fraction.append(float(rho.mean()))
        history.change.append(change)
        log.debug("simp it=%d c=%.5g vol=%.4f change=%.4f", it, c, rho.mean(), change)
        if callback is not None:
            callback(it, rho, c)
        if change < cfg.convergence_tol:
            break
    return se0, rho, history
