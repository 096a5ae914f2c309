"""Coarse-to-fine VAE training: the same weights trained on successively finer grids."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..genvae import VaeTrainConfig, load_vae, train_vae
from ..genvae.train import VaeTrainResult, write_log
from ..nnkit import save_checkpoint


@dataclass(frozen=True)
class MultigridStage:
    train_set: object
    epochs: int
    val_set: object = None


@dataclass(frozen=True)
class MultigridPlan:
    stages: tuple[MultigridStage, ...]
    vae: VaeTrainConfig = field(default_factory=VaeTrainConfig)
    work_dir: str | None = None


@dataclass
class MultigridResult:
    result: VaeTrainResult
    log: list[dict]
    stage_seconds: list[float]


def multigrid_schedule(plan: MultigridPlan, log_path=None, checkpoint_path=None) -> MultigridResult:
    """Run each stage in order, handing the checkpoint of one stage to the next.

    Between stages the checkpoint is written and read back, so a weight whose
    shape depended on the grid would fail loudly with ``FormatError``. Each
    log entry records the stage index and grid size of the plan.
    """
    if len(plan.stages) < 1:
        raise ValueError("plan has no stages")
    work = Path(plan.work_dir) if plan.work_dir else None
    model = store = None
    log, seconds = [], []
    res = None
    for k, stage in enumerate(plan.stages):
        dims = list(stage.train_set.conditions.shape[1:])
        prefix = {"stage": k, "resolution": dims, "plan_epochs": [s.epochs for s in plan.stages]}
        t0 = time.perf_counter()
        cfg = replace(plan.vae, epochs=stage.epochs, seed=plan.vae.seed + k)
        res = train_vae(stage.train_set, cfg, model=model, store=store, val_set=stage.val_set, log_prefix=prefix)
        seconds.append(time.perf_counter() - t0)
        log.extend(res.log)
        if k + 1 < len(plan.stages):
            ckpt = (work / f"stage{k}.ckpt") if work else None
            if ckpt is not None:
                save_checkpoint(res.store, ckpt)
                model, store = load_vae(ckpt)
            else:
                model, store = res.model, res.store
    if log_path is not None:
        write_log(log_path, log)
    if checkpoint_path is not None:
        save_checkpoint(res.store, checkpoint_path)
    return MultigridResult(res, log, seconds)

