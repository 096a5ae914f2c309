"""Dataset generation and the ``VOXD`` binary format.

Layout (little-endian)::

    b"VOXD" | version u16 | nx, ny, nz u32 | count u32
    per sample: id u64 | volfrac f32 | strain energy f32[n] | density f32[n]

Fields are stored x-fastest. A JSON manifest with the same stem sits next
to the data file and carries per-sample provenance and the train/test split.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..voxfem import FemError, FemProblem, compliance, flatten_field, normalize_energy, solve, unflatten_field
from .optimizer import BisectionFailure, SimpConfig, run_simp
from .sampler import ProblemSamplerConfig, SamplingError, sample_problem, sample_volfrac

log = logging.getLogger(__name__)

MAGIC = b"VOXD"
VERSION = 1
_HEADER = struct.Struct("<4sH3II")
_SAMPLE_HEAD = struct.Struct("<Qf")
TEST_FRACTION = 0.2
MAX_FAILURE_FRACTION = 0.2


class DatasetFormatError(ValueError):
    pass


class DatasetGenerationError(RuntimeError):
    pass


@dataclass
class SampleRecord:
    id: int
    seed: int
    status: str = "ok"
    volfrac: float | None = None
    problem: dict | None = None
    compliance: float | None = None
    iterations: int | None = None
    offset: int | None = None
    split: str | None = None
    error: str | None = None


@dataclass
class DatasetManifest:
    count: int
    dims: tuple[int, int, int]
    seed: int
    data_file: str
    samples: list[SampleRecord] = field(default_factory=list)
    sampler: dict = field(default_factory=dict)
    simp: dict = field(default_factory=dict)
    resampled_from: str | None = None

    def ok_samples(self) -> list[SampleRecord]:
        return [s for s in self.samples if s.status == "ok"]

    def split_ids(self, split: str) -> list[int]:
        return [s.id for s in self.ok_samples() if s.split == split]

    def to_json(self) -> str:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["splits"] = {"train": len(self.split_ids("train")), "test": len(self.split_ids("test"))}
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        d.pop("splits", None)
        d["dims"] = tuple(d["dims"])
        d["samples"] = [SampleRecord(**s) for s in d["samples"]]
        return cls(**d)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())


def manifest_path(data_path) -> Path:
    p = Path(data_path)
    return p.with_suffix(".json")


def sample_seed(master_seed: int, sample_id: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(sample_id)]).generate_state(1, np.uint32)[0])


def assign_splits(ids, test_fraction: float = TEST_FRACTION) -> dict[int, str]:
    """Deterministic split: the ``round(test_fraction * n)`` ids with the smallest hash are test."""
    ids = list(ids)
    n_test = int(round(test_fraction * len(ids)))
    ranked = sorted(ids, key=lambda i: hashlib.sha256(f"sample-{i}".encode()).hexdigest())
    test = set(ranked[:n_test])
    return {i: ("test" if i in test else "train") for i in ids}


def write_dataset(path, dims, ids, volfracs, conditions, densities) -> list[int]:
    """Write a VOXD file; returns the byte offset of every sample record."""
    dims = tuple(int(d) for d in dims)
    n_cells = int(np.prod(dims))
    offsets = []
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, *dims, len(ids)))
        for sid, vf, cond, dens in zip(ids, volfracs, conditions, densities):
            offsets.append(fh.tell())
            fh.write(_SAMPLE_HEAD.pack(int(sid), float(vf)))
            for arr in (cond, dens):
                flat = flatten_field(np.asarray(arr)).astype("<f4")
                if flat.size != n_cells:
                    raise DatasetFormatError(f"sample {sid}: field has {flat.size} cells, expected {n_cells}")
                fh.write(flat.tobytes())
    return offsets


@dataclass
class VoxelDataset:
    """In-memory dataset; fields have shape (count, nx, ny, nz), float32."""

    dims: tuple[int, int, int]
    ids: np.ndarray
    volfracs: np.ndarray
    conditions: np.ndarray
    densities: np.ndarray
    manifest: DatasetManifest | None = None

    def __len__(self):
        return len(self.ids)

    def subset(self, ids) -> "VoxelDataset":
        index = {int(i): k for k, i in enumerate(self.ids)}
        rows = np.array([index[int(i)] for i in ids], dtype=np.int64)
        return VoxelDataset(self.dims, self.ids[rows], self.volfracs[rows], self.conditions[rows], self.densities[rows], self.manifest)

    def split(self, name: str) -> "VoxelDataset":
        if self.manifest is None:
            raise DatasetFormatError("dataset has no manifest; split unknown")
        return self.subset(self.manifest.split_ids(name))

    def problem(self, sample_id: int) -> FemProblem:
        rec = next(s for s in self.manifest.samples if s.id == int(sample_id))
        return FemProblem.from_dict(rec.problem)


def read_dataset(path, with_manifest: bool = True) -> VoxelDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, nx, ny, nz, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    dims = (nx, ny, nz)
    n_cells = nx * ny * nz
    rec_size = _SAMPLE_HEAD.size + 8 * n_cells
    if len(raw) != _HEADER.size + count * rec_size:
        raise DatasetFormatError(f"{path}: size {len(raw)} does not match {count} samples of {dims}")
    ids = np.empty(count, dtype=np.int64)
    vfs = np.empty(count, dtype=np.float32)
    cond = np.empty((count, *dims), dtype=np.float32)
    dens = np.empty((count, *dims), dtype=np.float32)
    pos = _HEADER.size
    for k in range(count):
        ids[k], vfs[k] = _SAMPLE_HEAD.unpack_from(raw, pos)
        pos += _SAMPLE_HEAD.size
        a = np.frombuffer(raw, dtype="<f4", count=2 * n_cells, offset=pos)
        cond[k] = unflatten_field(a[:n_cells], dims)
        dens[k] = unflatten_field(a[n_cells:], dims)
        pos += 8 * n_cells
    manifest = None
    if with_manifest:
        mpath = manifest_path(path)
        if not mpath.exists():
            raise FileNotFoundError(f"manifest not found: {mpath}")
        manifest = DatasetManifest.load(mpath)
    return VoxelDataset(dims, ids, vfs, cond, dens, manifest)


def _run_sample(args):
    sample_id, seed, sampler_cfg, simp_cfg = args
    rec = SampleRecord(id=sample_id, seed=seed)
    rng = np.random.default_rng(seed)
    try:
        problem = sample_problem(rng, sampler_cfg)
        volfrac = sample_volfrac(rng, sampler_cfg)
        cfg = replace(simp_cfg, volfrac=volfrac)
        se0, rho, history = run_simp(problem, cfg)
        u = solve(problem, rho, tol=cfg.cg_tol, deterministic=cfg.deterministic)
        rec.volfrac = volfrac
        rec.problem = problem.to_dict()
        rec.compliance = compliance(problem, rho, u)
        rec.iterations = len(history)
        return rec, se0.astype(np.float32), rho.astype(np.float32)
    except (FemError, BisectionFailure, SamplingError, FloatingPointError) as exc:
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec, None, None


def generate_dataset(
    n: int,
    cfg: ProblemSamplerConfig,
    simp_cfg: SimpConfig,
    out_path,
    workers: int | None = None,
    progress=None,
) -> DatasetManifest:
    """Sample ``n`` tasks, optimise each with SIMP and persist the pairs.

    Jobs run on a process pool (``workers`` defaults to the CPU count) but
    results are written in id order, so the bytes depend only on the seed
    and configs.
    """
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    jobs = [(i, sample_seed(cfg.seed, i), cfg, simp_cfg) for i in range(n)]
    workers = workers or os.cpu_count() or 1
    results = []
    if workers == 1:
        for job in jobs:
            results.append(_run_sample(job))
            if progress:
                progress(len(results), n)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_sample, jobs):
                results.append(res)
                if progress:
                    progress(len(results), n)

    records = [r for r, _, _ in results]
    failed = [r for r in records if r.status != "ok"]
    for r in failed:
        log.warning("sample %d failed: %s", r.id, r.error)
    if n and len(failed) > MAX_FAILURE_FRACTION * n:
        raise DatasetGenerationError(f"{len(failed)} of {n} samples failed")

    good = [(r, c, d) for r, c, d in results if r.status == "ok"]
    offsets = write_dataset(
        out_path, cfg.dims, [r.id for r, _, _ in good], [r.volfrac for r, _, _ in good], [c for _, c, _ in good], [d for _, _, d in good]
    )
    splits = assign_splits([r.id for r, _, _ in good])
    for (r, _, _), off in zip(good, offsets):
        r.offset = off
        r.split = splits[r.id]

    manifest = DatasetManifest(
        count=len(good),
        dims=cfg.dims,
        seed=cfg.seed,
        data_file=out_path.name,
        samples=records,
        sampler={
            "dims": list(cfg.dims),
            "magnitude_ranges": {k: list(v) for k, v in cfg.magnitude_ranges.items()},
            "volfracs": list(cfg.volfracs),
            "seed": cfg.seed,
        },
        simp=asdict(simp_cfg),
    )
    manifest.save(manifest_path(out_path))
    return manifest


def _rescale(field_: np.ndarray, factor: float) -> np.ndarray:
    if factor >= 1:
        return np.clip(ndimage.zoom(field_, factor, order=1, mode="nearest", grid_mode=True), 0.0, 1.0)
    k = int(round(1 / factor))
    nx, ny, nz = field_.shape
    return field_.reshape(nx // k, k, ny // k, k, nz // k, k).mean(axis=(1, 3, 5))


def resample_dataset(src_path, dst_path, resolution: int) -> DatasetManifest:
    """Re-voxelise a dataset at another cubic resolution.

    Coarsening averages 2^3 blocks; refinement interpolates trilinearly. The
    sample ids, problems and split are carried over unchanged (problem
    geometry is stored in source-grid units).
    """
    ds = read_dataset(src_path)
    factor = resolution / ds.dims[0]
    if factor < 1 and any(d % int(round(1 / factor)) for d in ds.dims):
        raise ValueError(f"cannot coarsen {ds.dims} to {resolution}")
    # condition fields are renormalised so max stays 1 after averaging
    cond = [normalize_energy(_rescale(c.astype(np.float64), factor), clip_percentile=100) for c in ds.conditions]
    dens = [_rescale(d.astype(np.float64), factor) for d in ds.densities]
    dims = (resolution,) * 3
    dst_path = Path(dst_path)
    offsets = write_dataset(dst_path, dims, ds.ids, ds.volfracs, cond, dens)
    manifest = DatasetManifest.from_json(ds.manifest.to_json())
    manifest.dims = dims
    manifest.data_file = dst_path.name
    manifest.resampled_from = Path(src_path).name
    for rec, off in zip(manifest.ok_samples(), offsets):
        rec.offset = off
    manifest.save(manifest_path(dst_path))
    return manifest
