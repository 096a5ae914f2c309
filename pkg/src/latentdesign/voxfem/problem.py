"""Problem definition for the voxel FEM: grid topology, material, fixtures and loads.

Fields live on numpy arrays indexed ``[i, j, k]`` (x, y, z). Flattening uses
Fortran order so element and node numbering is x-fastest, matching the
dataset file layout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .element import HEX8_NODES


class FemError(Exception):
    """Base class for solver errors."""


class SingularSystem(FemError):
    """Fixtures do not remove all rigid-body modes."""


class NonConvergence(FemError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"CG did not converge after {iterations} iterations (relative residual {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class InvalidProblem(FemError, ValueError):
    pass


@dataclass(frozen=True)
class ElasticParams:
    youngs_solid: float = 1.0
    youngs_void: float = 1e-9
    poisson: float = 0.3
    penalty: float = 3.0

    def __post_init__(self):
        if not 0 < self.youngs_void < self.youngs_solid:
            raise ValueError("need 0 < youngs_void < youngs_solid")
        if not 0 <= self.poisson < 0.5:
            raise ValueError("poisson must be in [0, 0.5)")
        if self.penalty < 1:
            raise ValueError("penalty must be >= 1")

    def youngs(self, density: np.ndarray) -> np.ndarray:
        """SIMP interpolation E(rho) = E_void + rho^p (E_solid - E_void)."""
        return self.youngs_void + np.asarray(density) ** self.penalty * (self.youngs_solid - self.youngs_void)


class LoadKind(str, enum.Enum):
    NODAL_FORCE = "NodalForce"
    SURFACE_FORCE = "SurfaceForce"
    PRESSURE = "Pressure"
    MOMENT = "Moment"


@dataclass(frozen=True)
class FacePatch:
    """Rectangular node patch on one boundary face.

    ``axis`` is the face normal axis and ``side`` 0/1 selects the min/max face.
    ``start`` are node offsets along the two remaining axes (ascending order)
    and ``size`` the patch extent in elements along them.
    """

    axis: int
    side: int
    start: tuple[int, int]
    size: tuple[int, int]

    @property
    def in_plane_axes(self) -> tuple[int, int]:
        a, b = (ax for ax in range(3) if ax != self.axis)
        return a, b

    @property
    def outward_normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = 1.0 if self.side else -1.0
        return n

    def node_ijk(self, dims) -> np.ndarray:
        """(m, 3) integer node coordinates covered by the patch."""
        a, b = self.in_plane_axes
        ra = np.arange(self.start[0], self.start[0] + self.size[0] + 1)
        rb = np.arange(self.start[1], self.start[1] + self.size[1] + 1)
        ga, gb = np.meshgrid(ra, rb, indexing="ij")
        ijk = np.zeros((ga.size, 3), dtype=np.int64)
        ijk[:, a] = ga.ravel()
        ijk[:, b] = gb.ravel()
        ijk[:, self.axis] = dims[self.axis] if self.side else 0
        return ijk

    def nodal_area_weights(self) -> np.ndarray:
        """Consistent nodal weights of a unit traction over the patch (sum = area)."""
        wa = np.ones(self.size[0] + 1)
        wa[[0, -1]] = 0.5
        wb = np.ones(self.size[1] + 1)
        wb[[0, -1]] = 0.5
        return np.outer(wa, wb).ravel()

    def inside(self, dims) -> bool:
        if self.axis not in (0, 1, 2) or self.side not in (0, 1):
            return False
        a, b = self.in_plane_axes
        return (
            min(self.size) >= 1
            and min(self.start) >= 0
            and self.start[0] + self.size[0] <= dims[a]
            and self.start[1] + self.size[1] <= dims[b]
        )


@dataclass(frozen=True)
class LoadSpec:
    """One applied load.

    NodalForce: ``region`` is a node index, ``magnitude`` the force on it.
    SurfaceForce: uniform traction (force per area) on a face patch along ``direction``.
    Pressure: force per area on a face patch along the inward normal; ``direction`` ignored.
    Moment: force couple on a face patch with moment vector ``magnitude * direction``.
    """

    kind: LoadKind
    region: int | FacePatch
    magnitude: float
    direction: tuple[float, float, float] = (0.0, 0.0, -1.0)

    def to_dict(self) -> dict:
        region = self.region
        if isinstance(region, FacePatch):
            region = {"axis": region.axis, "side": region.side, "start": list(region.start), "size": list(region.size)}
        return {"kind": self.kind.value, "region": region, "magnitude": self.magnitude, "direction": list(self.direction)}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadSpec":
        region = d["region"]
        if isinstance(region, dict):
            region = FacePatch(region["axis"], region["side"], tuple(region["start"]), tuple(region["size"]))
        return cls(LoadKind(d["kind"]), region, float(d["magnitude"]), tuple(float(x) for x in d["direction"]))


@dataclass(frozen=True)
class FemProblem:
    dims: tuple[int, int, int]
    fixed_nodes: tuple[int, ...]
    loads: tuple[LoadSpec, ...] = ()
    material: ElasticParams = field(default_factory=ElasticParams)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "fixed_nodes", tuple(int(n) for n in self.fixed_nodes))
        object.__setattr__(self, "loads", tuple(self.loads))

    @property
    def n_nodes(self) -> int:
        nx, ny, nz = self.dims
        return (nx + 1) * (ny + 1) * (nz + 1)

    @property
    def n_dof(self) -> int:
        return 3 * self.n_nodes

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.dims))

    def fixed_dofs(self) -> np.ndarray:
        nodes = np.asarray(self.fixed_nodes, dtype=np.int64)
        return (3 * nodes[:, None] + np.arange(3)).ravel()

    def check_fixtures(self):
        """Raise SingularSystem unless the fixed nodes pin every rigid-body mode."""
        nodes = np.unique(np.asarray(self.fixed_nodes, dtype=np.int64))
        if nodes.size < 3:
            raise SingularSystem(f"need at least 3 fixed nodes, got {nodes.size}")
        if nodes.min() < 0 or nodes.max() >= self.n_nodes:
            raise SingularSystem("fixed node index outside the grid")
        xyz = node_coordinates(self.dims)[nodes].astype(float)
        if np.linalg.matrix_rank(xyz - xyz.mean(axis=0), tol=1e-9) < 2:
            raise SingularSystem("fixed nodes are collinear")

    def validate(self):
        if min(self.dims) < 1:
            raise InvalidProblem(f"bad dims {self.dims}")
        self.check_fixtures()
        for load in self.loads:
            if isinstance(load.region, FacePatch):
                if not load.region.inside(self.dims):
                    raise InvalidProblem(f"load patch {load.region} outside grid {self.dims}")
            elif not 0 <= int(load.region) < self.n_nodes:
                raise InvalidProblem(f"load node {load.region} outside grid")
            if load.kind is not LoadKind.PRESSURE and abs(np.linalg.norm(load.direction) - 1) > 1e-9:
                raise InvalidProblem("load direction must be a unit vector")

    def load_vector(self) -> np.ndarray:
        """Global nodal force vector, 3 DOFs per node."""
        f = np.zeros((self.n_nodes, 3))
        for load in self.loads:
            nodes, forces = _load_forces(load, self.dims)
            np.add.at(f, nodes, forces)
        return f.ravel()

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "fixed_nodes": list(self.fixed_nodes),
            "loads": [ld.to_dict() for ld in self.loads],
            "material": {
                "youngs_solid": self.material.youngs_solid,
                "youngs_void": self.material.youngs_void,
                "poisson": self.material.poisson,
                "penalty": self.material.penalty,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FemProblem":
        return cls(
            tuple(d["dims"]),
            tuple(d["fixed_nodes"]),
            tuple(LoadSpec.from_dict(x) for x in d["loads"]),
            ElasticParams(**d.get("material", {})),
        )


def _load_forces(load: LoadSpec, dims) -> tuple[np.ndarray, np.ndarray]:
    direction = np.asarray(load.direction, dtype=float)
    if load.kind is LoadKind.NODAL_FORCE:
        return np.array([int(load.region)]), (load.magnitude * direction)[None, :]
    patch = load.region
    ijk = patch.node_ijk(dims)
    nodes = node_index(dims, ijk[:, 0], ijk[:, 1], ijk[:, 2])
    if load.kind is LoadKind.SURFACE_FORCE:
        return nodes, np.outer(load.magnitude * patch.nodal_area_weights(), direction)
    if load.kind is LoadKind.PRESSURE:
        return nodes, np.outer(load.magnitude * patch.nodal_area_weights(), -patch.outward_normal)
    if load.kind is LoadKind.MOMENT:
        # f_i = w x r_i has zero resultant; sum r_i x f_i = J w with J the polar inertia tensor
        r = ijk.astype(float)
        r -= r.mean(axis=0)
        S = r.T @ r
        J = np.trace(S) * np.eye(3) - S
        w = np.linalg.solve(J, load.magnitude * direction)
        return nodes, np.cross(w, r)
    raise ValueError(f"unknown load kind {load.kind}")


def node_index(dims, i, j, k):
    nx, ny, _ = dims
    return np.asarray(i) + (nx + 1) * (np.asarray(j) + (ny + 1) * np.asarray(k))


@lru_cache(maxsize=16)
def _node_coordinates(dims: tuple[int, int, int]) -> np.ndarray:
    nx, ny, nz = dims
    i, j, k = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    xyz = np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")], axis=1)
    xyz.setflags(write=False)
    return xyz


def node_coordinates(dims) -> np.ndarray:
    """(n_nodes, 3) integer coordinates, row n is node n."""
    return _node_coordinates(tuple(int(d) for d in dims))


@lru_cache(maxsize=16)
def _element_dofs(dims: tuple[int, int, int]) -> np.ndarray:
    nx, ny, nz = dims
    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = (a.ravel(order="F") for a in (i, j, k))
    corners = node_index(dims, i[:, None] + HEX8_NODES[:, 0], j[:, None] + HEX8_NODES[:, 1], k[:, None] + HEX8_NODES[:, 2])
    edof = (3 * corners[:, :, None] + np.arange(3)).reshape(len(i), 24)
    edof.setflags(write=False)
    return edof


def element_dofs(dims) -> np.ndarray:
    """(n_elements, 24) global DOF indices per element, x-fastest element order."""
    return _element_dofs(tuple(int(d) for d in dims))


def boundary_nodes(dims) -> np.ndarray:
    """Indices of nodes on the outer surface of the grid."""
    xyz = node_coordinates(dims)
    on = np.zeros(len(xyz), dtype=bool)
    for ax in range(3):
        on |= (xyz[:, ax] == 0) | (xyz[:, ax] == dims[ax])
    return np.flatnonzero(on)


def flatten_field(values: np.ndarray) -> np.ndarray:
    return np.asarray(values).ravel(order="F")


def unflatten_field(flat: np.ndarray, dims) -> np.ndarray:
    return np.asarray(flat).reshape(tuple(dims), order="F")
