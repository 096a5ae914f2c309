"""Run configuration shared by the CLI subcommands."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

SUPPORTED_RESOLUTIONS = (16, 32, 64)


class ConfigError(ValueError):
    pass


def derive_seed(seed: int, purpose: str) -> int:
    """Independent 31-bit seed for one consumer of the master seed."""
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


@dataclass
class RunConfig:
    resolution: int = 16
    seed: int = 0
    deterministic: bool = False
    # artifact paths; None means "<out>/<default name>"
    dataset: str | None = None
    vae_checkpoint: str | None = None
    ldm_checkpoint: str | None = None
    designs: str | None = None
    # dataset generation
    n_samples: int = 250
    workers: int = 1
    sampler: dict = field(default_factory=dict)
    simp: dict = field(default_factory=lambda: {"max_iters": 40, "cg_tol": 1e-5})
    # training
    vae: dict = field(default_factory=dict)
    ldm: dict = field(default_factory=dict)
    multigrid: dict | None = None
    # sampling and evaluation
    n_designs: int = 20
    n_conditions: int = 10
    condition_split: str = "test"
    condition_ids: list | None = None
    threshold: float = 0.5
    strength: float = 0.5
    eval_tol: float = 1e-6
    eval_max_iter: int | None = 20000
    mesh_index: int = 0

    def __post_init__(self):
        if self.resolution not in SUPPORTED_RESOLUTIONS:
            raise ConfigError(f"resolution must be one of {SUPPORTED_RESOLUTIONS}, got {self.resolution}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 <= self.strength <= 1.0:
            raise ConfigError(f"strength must lie in [0, 1], got {self.strength}")
        if self.n_samples < 1 or self.n_designs < 1 or self.n_conditions < 1:
            raise ConfigError("n_samples, n_designs and n_conditions must be positive")
        if self.condition_split not in ("train", "test"):
            raise ConfigError(f"condition_split must be 'train' or 'test', got {self.condition_split!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def path(self, name: str, out: Path) -> Path:
        defaults = {
            "dataset": "data.voxd",
            "vae_checkpoint": "vae.ckpt",
            "ldm_checkpoint": "ldm.ckpt",
            "designs": "designs.json",
        }
        value = getattr(self, name)
        return Path(value) if value is not None else out / defaults[name]
