"""Design similarity, volume fraction and FEM-based evaluation of generated designs."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..nnkit import ShapeMismatch
from ..voxfem import FemError, FemProblem, compliance, solve

HIST_BINS = 20


def cosine_similarity(a, b) -> float:
    """<a, b> / (|a| |b|) over flattened fields; 0 when either field is all zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch("cosine_similarity", a.shape, b.shape)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))


def volume_fraction(density, threshold: float = 0.5) -> float:
    """Share of voxels at or above ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    d = np.asarray(density)
    return float(np.count_nonzero(d >= threshold) / d.size)


def binarize(density, threshold: float = 0.5) -> np.ndarray:
    return (np.asarray(density) >= threshold).astype(np.float64)


def binary_compliance(problem: FemProblem, density, threshold: float = 0.5, tol: float = 1e-6, max_iter: int | None = None) -> tuple[float, str]:
    """Compliance of the thresholded design (void voxels at the void modulus).

    Returns (compliance, status); a failed solve gives (inf, reason).
    """
    rho = binarize(density, threshold)
    try:
        u = solve(problem, rho, tol=tol, max_iter=max_iter)
    except FemError as exc:
        return math.inf, type(exc).__name__
    return compliance(problem, rho, u), "ok"


def _solve_job(args):
    return binary_compliance(*args)


@dataclass
class EvalRow:
    condition_id: int
    design_id: int
    source: str
    compliance: float
    volume_fraction: float
    cosine_vs_simp: float
    status: str = "ok"


@dataclass
class EvalReport:
    rows: list[EvalRow]
    pairwise_cosine_max: dict[int, float] = field(default_factory=dict)

    def select(self, source: str) -> list[EvalRow]:
        return [r for r in self.rows if r.source == source]

    @property
    def vf_mae(self) -> float:
        """Mean over conditions of |mean VF of the generated designs - VF(SIMP)|."""
        errs = []
        for ref in self.select("simp"):
            vfs = [r.volume_fraction for r in self.select("ldm") if r.condition_id == ref.condition_id]
            if vfs:
                errs.append(abs(np.mean(vfs) - ref.volume_fraction))
        return float(np.mean(errs)) if errs else 0.0

    def median_compliance(self, source: str) -> float:
        vals = [r.compliance for r in self.select(source)]
        return float(np.median(vals)) if vals else math.nan

    def per_condition_median_ratio(self) -> dict[int, float]:
        simp = {r.condition_id: r.compliance for r in self.select("simp")}
        out = {}
        for cid, c_simp in simp.items():
            gen = [r.compliance for r in self.select("ldm") if r.condition_id == cid]
            out[cid] = float(np.median(gen) / c_simp) if gen else math.nan
        return out

    def summary(self) -> dict:
        cos = [r.cosine_vs_simp for r in self.select("ldm")]
        return {
            "n_conditions": len(self.select("simp")),
            "n_designs": len(self.select("ldm")),
            "vf_mae": self.vf_mae,
            "median_compliance_simp": self.median_compliance("simp"),
            "median_compliance_ldm": self.median_compliance("ldm"),
            "failed_solves": sum(r.status != "ok" for r in self.rows),
            "cosine_vs_simp_min": min(cos) if cos else math.nan,
            "cosine_vs_simp_mean": float(np.mean(cos)) if cos else math.nan,
            "pairwise_cosine_max": max(self.pairwise_cosine_max.values(), default=math.nan),
        }

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.csv"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition_id", "design_id", "source", "compliance", "volume_fraction", "cosine_vs_simp"])
            for r in self.rows:
                w.writerow([r.condition_id, r.design_id, r.source, _fmt(r.compliance), _fmt(r.volume_fraction), _fmt(r.cosine_vs_simp)])
        gen = self.select("ldm")
        for name, values, rng in (
            ("cosine", [r.cosine_vs_simp for r in gen], (0.0, 1.0)),
            ("volume_fraction", [r.volume_fraction for r in gen], (0.0, 1.0)),
            ("compliance_ldm", [r.compliance for r in gen], None),
            ("compliance_simp", [r.compliance for r in self.select("simp")], None),
        ):
            p = out / f"hist_{name}.csv"
            write_histogram(p, values, rng)
            paths.append(p)
        p = out / "summary.json"
        p.write_text(json.dumps(self.summary(), indent=1, sort_keys=True))
        paths.append(p)
        return paths


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.10g}"


def write_histogram(path, values, value_range=None, bins: int = HIST_BINS) -> None:
    """Binned counts of the finite values; non-finite ones go in a trailing (inf, inf) row."""
    v = np.asarray(values, dtype=np.float64)
    finite = v[np.isfinite(v)]
    if value_range is None:
        value_range = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
        if value_range[0] == value_range[1]:
            value_range = (value_range[0], value_range[0] + 1.0)
    counts, edges = np.histogram(finite, bins=bins, range=value_range)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_low", "bin_high", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([_fmt(lo), _fmt(hi), int(c)])
        if finite.size < v.size:
            w.writerow(["inf", "inf", int(v.size - finite.size)])


def evaluate_designs(
    problems: dict[int, FemProblem],
    generated: dict[int, list],
    simp_refs: dict[int, np.ndarray],
    threshold: float = 0.5,
    tol: float = 1e-6,
    max_iter: int | None = None,
    workers: int = 1,
) -> EvalReport:
    """FEM-evaluate every binarised design under its own condition's problem.

    Each condition contributes one ``simp`` row (its thresholded SIMP
    reference) and one ``ldm`` row per generated design. Failed solves are
    recorded with infinite compliance.
    """
    cids = sorted(generated)
    missing = [c for c in cids if c not in problems or c not in simp_refs]
    if missing:
        raise KeyError(f"no problem or SIMP reference for condition {missing[0]}")
    jobs, meta = [], []
    for cid in cids:
        ref = binarize(simp_refs[cid], threshold)
        designs = [("simp", 0, simp_refs[cid])] + [("ldm", j, g) for j, g in enumerate(generated[cid])]
        for source, j, d in designs:
            d = np.asarray(d)
            if d.shape != tuple(problems[cid].dims):
                raise ShapeMismatch("evaluate_designs", d.shape, problems[cid].dims)
            jobs.append((problems[cid], d, threshold, tol, max_iter))
            meta.append((cid, j, source, volume_fraction(d, threshold), cosine_similarity(binarize(d, threshold), ref)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_solve_job, jobs))
    else:
        results = [_solve_job(j) for j in jobs]
    rows = [EvalRow(cid, j, src, c, vf, cs, status) for (cid, j, src, vf, cs), (c, status) in zip(meta, results)]

    pairwise = {}
    for cid in cids:
        bins = [binarize(g, threshold) for g in generated[cid]]
        best = -1.0
        for a in range(len(bins)):
            for b in range(a + 1, len(bins)):
                best = max(best, cosine_similarity(bins[a], bins[b]))
        pairwise[cid] = best
    return EvalReport(rows, pairwise)
