"""Training configuration, key = value config files, and config hashing."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Union


@dataclass
class TrainConfig:
    epochs: int = 120
    batch_size: int = 32
    lr: float = 0.032
    momentum: float = 0.9
    weight_decay: float = 0.0
    tau: float = 0.07
    tau_logits: float = 0.07
    beta: float = 1.0
    gamma: float = 1.0
    k: int = 16
    num_visual_prompts: int = 8
    context_len: int = 10
    weights_seed: int = 0
    train_seed: int = 0
    prototype_seed: int = 0
    template_config: int = 3
    metric: str = "cosine"
    prototype_subset: Union[int, str] = "full"
    use_visual_prompts: bool = True
    use_local_alignment: bool = True
    dataset_dir: str = ""
    fixtures_path: str = ""

    def __post_init__(self):
        for name in ("epochs", "batch_size", "k", "num_visual_prompts",
                     "context_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.tau <= 0 or self.tau_logits <= 0:
            raise ValueError("lr, tau and tau_logits must be positive")
        if self.template_config not in (1, 2, 3):
            raise ValueError("template_config must be 1, 2 or 3")
        if self.metric not in ("cosine", "l1"):
            raise ValueError("metric must be 'cosine' or 'l1'")
        if self.prototype_subset != "full":
            self.prototype_subset = int(self.prototype_subset)
            if self.prototype_subset <= 0:
                raise ValueError("prototype_subset must be positive or 'full'")


def to_text(cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: TrainConfig) -> int:
    """Stable 24-bit hash of the serialized config (exact in float32)."""
    return zlib.crc32(to_text(cfg).encode("utf-8")) % (1 << 24)


_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    if typ is bool:
        try:
            return _BOOL[raw.lower()]
        except KeyError:
            raise ValueError(f"config: bad boolean for {name}: {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    return raw


def parse_config_file(path, overrides: dict | None = None) -> TrainConfig:
    """Read a ``key = value`` config file; `overrides` (CLI flags) win."""
    values: dict = {}
    known = {f.name: f.type for f in fields(TrainConfig)}
    types = {"epochs": int, "batch_size": int, "lr": float, "momentum": float,
             "weight_decay": float, "tau": float, "tau_logits": float,
             "beta": float, "gamma": float, "k": int,
             "num_visual_prompts": int, "context_len": int,
             "weights_seed": int, "train_seed": int, "prototype_seed": int,
             "template_config": int, "metric": str, "prototype_subset": str,
             "use_visual_prompts": bool, "use_local_alignment": bool,
             "dataset_dir": str, "fixtures_path": str}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, val, types[key])
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)
