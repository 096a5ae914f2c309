"""Command-line entry point: ``latentdesign <subcommand> [--config C] [--seed S] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from ..genvae import VaeTrainConfig, as_batch, load_vae, train_vae
from ..latdiff import LdmTrainConfig, load_ldm, train_ldm
from ..nnkit import set_deterministic
from ..simpgen import ProblemSamplerConfig, SimpConfig, generate_dataset, read_dataset, resample_dataset
from ..simpgen.dataset import write_dataset
from .config import ConfigError, RunConfig, derive_seed
from .mesh import export_mesh
from .metrics import evaluate_designs
from .multigrid import MultigridPlan, MultigridStage, multigrid_schedule

COMMANDS = {
    "gen-data": "sample design tasks and solve them with SIMP",
    "train-vae": "train the multi-headed VAE (optionally coarse-to-fine)",
    "train-ldm": "train the latent denoiser against a frozen VAE",
    "generate": "sample designs for held-out conditions",
    "translate": "produce variations of existing SIMP designs",
    "evaluate": "FEM-evaluate generated designs against SIMP references",
    "export-mesh": "write an OBJ surface of one design",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentdesign", description="Voxel design generation with SIMP data, a VAE and latent diffusion.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    parser.subcommands = {}
    for name, text in COMMANDS.items():
        p = parser.subcommands[name] = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
        p.add_argument("--deterministic", action="store_true", help="reproducible kernels, single thread")
        if name == "export-mesh":
            p.add_argument("--index", type=int, help="row of the designs file (or sample id with --from-dataset)")
            p.add_argument("--from-dataset", action="store_true", help="export a SIMP design from the dataset")
    return parser


def _say(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _rel(path: Path, base: Path) -> str:
    return os.path.relpath(Path(path).resolve(), Path(base).resolve())


def cmd_gen_data(cfg: RunConfig, out: Path) -> None:
    path = cfg.path("dataset", out)
    if cfg.multigrid and cfg.multigrid.get("resample_from"):
        manifest = resample_dataset(cfg.multigrid["resample_from"], path, cfg.resolution)
    else:
        sampler = ProblemSamplerConfig(**{**cfg.sampler, "dims": (cfg.resolution,) * 3, "seed": cfg.seed})
        simp = SimpConfig(**{**cfg.simp, "deterministic": cfg.deterministic})
        manifest = generate_dataset(
            cfg.n_samples, sampler, simp, path, workers=cfg.workers, progress=lambda i, n: _say(f"sample {i}/{n}")
        )
    _say(f"wrote {manifest.count} samples to {path}")


def _vae_config(cfg: RunConfig) -> VaeTrainConfig:
    return replace(VaeTrainConfig.from_dict(cfg.vae), seed=derive_seed(cfg.seed, "vae"), deterministic=cfg.deterministic)


def cmd_train_vae(cfg: RunConfig, out: Path) -> None:
    ckpt = cfg.path("vae_checkpoint", out)
    log_path = out / "vae_log.json"
    vcfg = _vae_config(cfg)
    if cfg.multigrid and cfg.multigrid.get("datasets"):
        paths, epochs = cfg.multigrid["datasets"], cfg.multigrid.get("epochs", [10, 1])
        if len(paths) != len(epochs):
            raise ConfigError("multigrid.datasets and multigrid.epochs differ in length")
        stages = []
        for p, e in zip(paths, epochs):
            ds = read_dataset(p)
            stages.append(MultigridStage(ds.split("train"), int(e), ds.split("test")))
        res = multigrid_schedule(MultigridPlan(tuple(stages), vcfg, work_dir=str(out)), log_path, ckpt).result
    else:
        ds = read_dataset(cfg.path("dataset", out))
        res = train_vae(ds.split("train"), vcfg, val_set=ds.split("test"), log_path=log_path, checkpoint_path=ckpt)
    _say(f"final recon {res.log[-1]['recon']:.4f}; checkpoint {ckpt}")


def cmd_train_ldm(cfg: RunConfig, out: Path) -> None:
    ds = read_dataset(cfg.path("dataset", out))
    vae, _ = load_vae(cfg.path("vae_checkpoint", out))
    lcfg = replace(LdmTrainConfig.from_dict(cfg.ldm), seed=derive_seed(cfg.seed, "ldm"), deterministic=cfg.deterministic)
    ckpt = cfg.path("ldm_checkpoint", out)
    res = train_ldm(ds.split("train"), vae, lcfg, log_path=out / "ldm_log.json", checkpoint_path=ckpt)
    _say(f"final loss {res.log[-1]['loss']:.4f}; checkpoint {ckpt}")


def _conditions(cfg: RunConfig, ds) -> list[int]:
    if cfg.condition_ids is not None:
        return [int(c) for c in cfg.condition_ids]
    return [int(i) for i in ds.split(cfg.condition_split).ids[: cfg.n_conditions]]


def _write_designs(out: Path, name: str, cfg: RunConfig, ds, dataset_path: Path, entries, conds, designs, vfs) -> Path:
    data = out / f"{name}.voxd"
    write_dataset(data, ds.dims, list(range(len(entries))), vfs, conds, designs)
    manifest = out / f"{name}.json"
    doc = {
        "dataset": _rel(dataset_path, out),
        "data_file": data.name,
        "threshold": cfg.threshold,
        "seed": cfg.seed,
        "entries": entries,
    }
    manifest.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return manifest


@torch.no_grad()
def cmd_generate(cfg: RunConfig, out: Path, translate: bool = False) -> None:
    dataset_path = cfg.path("dataset", out)
    ds = read_dataset(dataset_path)
    vae, _ = load_vae(cfg.path("vae_checkpoint", out))
    ldm = load_ldm(cfg.path("ldm_checkpoint", out))
    vae.eval()
    entries, conds, designs, vfs = [], [], [], []
    for cid in _conditions(cfg, ds):
        sample = ds.subset([cid])
        z_q = vae.encode_condition(as_batch(sample.conditions))[0]
        if translate:
            seed = derive_seed(cfg.seed, f"translate:{cid}")
            mu = vae.encode_design(as_batch(sample.densities)).mu
            latents = ldm.translate(mu.expand(cfg.n_designs, *mu.shape[1:]), z_q, cfg.strength, seed)
        else:
            seed = derive_seed(cfg.seed, f"generate:{cid}")
            latents = ldm.sample(z_q, cfg.n_designs, seed)
        fields = vae.decode(z_q.expand(cfg.n_designs, *z_q.shape[1:]), latents)[:, 0].numpy()
        for j, f in enumerate(fields):
            entries.append({"index": len(entries), "condition_id": cid, "design_id": j, "seed": seed})
            conds.append(sample.conditions[0])
            designs.append(f)
            vfs.append(float(sample.volfracs[0]))
        _say(f"condition {cid}: {cfg.n_designs} designs")
    name = "translations" if translate else "designs"
    manifest = _write_designs(out, name, cfg, ds, dataset_path, entries, conds, designs, vfs)
    _say(f"wrote {manifest}")


def load_designs(manifest_path: Path):
    """(manifest dict, dataset, design fields) for a designs manifest."""
    if not manifest_path.exists():
        raise FileNotFoundError(f"designs manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    base = manifest_path.parent
    ds = read_dataset(base / doc["dataset"])
    designs = read_dataset(base / doc["data_file"], with_manifest=False)
    if len(designs) != len(doc["entries"]):
        raise ValueError(f"{manifest_path}: {len(doc['entries'])} entries but {len(designs)} stored designs")
    return doc, ds, designs


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    doc, ds, designs = load_designs(cfg.path("designs", out))
    generated: dict[int, list] = {}
    for e in doc["entries"]:
        generated.setdefault(int(e["condition_id"]), []).append(designs.densities[e["index"]])
    problems = {cid: ds.problem(cid) for cid in generated}
    refs = {cid: ds.subset([cid]).densities[0] for cid in generated}
    report = evaluate_designs(
        problems, generated, refs, threshold=cfg.threshold, tol=cfg.eval_tol, max_iter=cfg.eval_max_iter, workers=cfg.workers
    )
    report.write(out)
    _say(json.dumps(report.summary(), indent=1, sort_keys=True))


def cmd_export_mesh(cfg: RunConfig, out: Path, index: int | None, from_dataset: bool) -> None:
    index = cfg.mesh_index if index is None else index
    if from_dataset:
        ds = read_dataset(cfg.path("dataset", out))
        field = ds.subset([index]).densities[0]
        path = out / f"simp_{index}.obj"
    else:
        _, _, designs = load_designs(cfg.path("designs", out))
        if not 0 <= index < len(designs):
            raise IndexError(f"design index {index} out of range (0..{len(designs) - 1})")
        field = designs.densities[index]
        path = out / f"design_{index}.obj"
    nv, nf = export_mesh(field, cfg.threshold, path)
    _say(f"wrote {path}: {nv} vertices, {nf} quads")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if args.command is None:
            parser.error("a command is required")
        if extra:
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        if args.deterministic:
            cfg.deterministic = True
    except UsageError as exc:
        _say(str(exc))
        return 1
    except ConfigError as exc:
        _say(f"latentdesign: config error: {exc}")
        return 1
    except FileNotFoundError as exc:
        _say(f"latentdesign: error: {exc}")
        return 2

    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        set_deterministic(cfg.seed, cfg.deterministic)
        if args.command == "gen-data":
            cmd_gen_data(cfg, out)
        elif args.command == "train-vae":
            cmd_train_vae(cfg, out)
        elif args.command == "train-ldm":
            cmd_train_ldm(cfg, out)
        elif args.command == "generate":
            cmd_generate(cfg, out)
        elif args.command == "translate":
            cmd_generate(cfg, out, translate=True)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, out)
        elif args.command == "export-mesh":
            cmd_export_mesh(cfg, out, args.index, args.from_dataset)
    except ConfigError as exc:
        _say(f"latentdesign: config error: {exc}")
        return 1
    except Exception as exc:  # every runtime failure maps to exit status 2
        _say(f"latentdesign: error: {exc}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
