"""Randomised design-task sampler: three boundary fixtures plus one random load."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..voxfem import FacePatch, FemProblem, LoadKind, LoadSpec, boundary_nodes, node_coordinates

MAX_COLLINEAR_REJECTIONS = 1000


def _default_ranges() -> dict:
    return {
        LoadKind.NODAL_FORCE.value: (0.5, 2.0),
        LoadKind.SURFACE_FORCE.value: (0.05, 0.5),
        LoadKind.PRESSURE.value: (0.05, 0.5),
        LoadKind.MOMENT.value: (0.5, 5.0),
    }


def _default_volfracs() -> tuple[float, ...]:
    return tuple(round(0.10 + 0.05 * i, 2) for i in range(9))


@dataclass(frozen=True)
class ProblemSamplerConfig:
    dims: tuple[int, int, int] = (16, 16, 16)
    magnitude_ranges: dict = field(default_factory=_default_ranges)
    volfracs: tuple[float, ...] = field(default_factory=_default_volfracs)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not all(0 < v < 1 for v in self.volfracs) or not self.volfracs:
            raise ValueError("volfracs must be a nonempty subset of (0, 1)")
        for kind in LoadKind:
            lo, hi = self.magnitude_ranges[kind.value]
            if not 0 < lo <= hi:
                raise ValueError(f"bad magnitude range for {kind.value}: {(lo, hi)}")


class SamplingError(RuntimeError):
    pass


def is_collinear(points: np.ndarray) -> bool:
    p = np.asarray(points, dtype=float)
    return np.linalg.matrix_rank(p - p.mean(axis=0), tol=1e-9) < 2


def sample_fixtures(rng: np.random.Generator, dims) -> tuple[int, int, int]:
    """Three distinct, non-collinear boundary nodes."""
    candidates = boundary_nodes(dims)
    xyz = node_coordinates(dims)
    for _ in range(MAX_COLLINEAR_REJECTIONS):
        picks = rng.choice(candidates, size=3, replace=False)
        if not is_collinear(xyz[picks]):
            return tuple(int(n) for n in picks)
    raise SamplingError(f"{MAX_COLLINEAR_REJECTIONS} collinear fixture draws in a row")


def _unit_vector(rng: np.random.Generator) -> tuple[float, float, float]:
    v = rng.standard_normal(3)
    v /= np.linalg.norm(v)
    return tuple(float(x) for x in v)


def _face_patch(rng: np.random.Generator, dims) -> FacePatch:
    axis = int(rng.integers(3))
    side = int(rng.integers(2))
    a, b = (ax for ax in range(3) if ax != axis)
    size = tuple(int(rng.integers(1, max(1, dims[ax] // 2) + 1)) for ax in (a, b))
    start = tuple(int(rng.integers(0, dims[ax] - s + 1)) for ax, s in zip((a, b), size))
    return FacePatch(axis, side, start, size)


def sample_load(rng: np.random.Generator, dims, ranges: dict, exclude_nodes=()) -> LoadSpec:
    kinds = list(LoadKind)
    kind = kinds[int(rng.integers(len(kinds)))]
    lo, hi = ranges[kind.value]
    magnitude = float(rng.uniform(lo, hi))
    direction = _unit_vector(rng)
    if kind is LoadKind.NODAL_FORCE:
        candidates = np.setdiff1d(boundary_nodes(dims), np.asarray(exclude_nodes, dtype=np.int64))
        region = int(rng.choice(candidates))
    else:
        region = _face_patch(rng, dims)
    if kind is LoadKind.PRESSURE:
        direction = tuple(float(x) for x in -region.outward_normal)
    return LoadSpec(kind, region, magnitude, direction)


def sample_problem(rng: np.random.Generator, cfg: ProblemSamplerConfig) -> FemProblem:
    """One randomised task. Deterministic given the generator state."""
    fixed = sample_fixtures(rng, cfg.dims)
    for _ in range(MAX_COLLINEAR_REJECTIONS):
        load = sample_load(rng, cfg.dims, cfg.magnitude_ranges, exclude_nodes=fixed)
        problem = FemProblem(cfg.dims, fixed, (load,))
        f = problem.load_vector()
        f[problem.fixed_dofs()] = 0.0
        # a patch sitting entirely on fixed nodes would carry no load
        if np.linalg.norm(f) > 0.0:
            return problem
    raise SamplingError("could not place a load off the fixtures")


def sample_volfrac(rng: np.random.Generator, cfg: ProblemSamplerConfig) -> float:
    return float(cfg.volfracs[int(rng.integers(len(cfg.volfracs)))])
