"""Run configuration: training schedule defaults and the key=value config format.

Defaults reproduce the published training schedule verbatim: lr 0.0005
halving at epochs 80/160/240, 320 epochs total, momentum 0.9, batch size 2,
segmentation weight 4, gradient blocking on.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Tuple


@dataclass
class RunConfig:
    preset: str = "mini"
    input_w: int = 1024
    input_h: int = 512
    lr: float = 0.0005
    lr_factor: float = 0.5
    lr_milestones: Tuple[int, ...] = (80, 160, 240)
    epochs: int = 320
    momentum: float = 0.9
    batch_size: int = 2
    w_seg: float = 4.0
    seed: int = 0
    dataset: str = ""
    block_gradients: bool = True
    augment: bool = True
    save_every: int = 0  # 0: checkpoint only at the end
    max_steps: int = 0  # 0: run the full schedule
    out_dir: str = "run"
    num_det_classes: int = 10
    num_seg_classes: int = 19

    @property
    def input_size(self) -> Tuple[int, int]:
        return (self.input_w, self.input_h)

    def lr_at_epoch(self, epoch: int) -> float:
        drops = sum(1 for m in self.lr_milestones if epoch >= m)
        return self.lr * self.lr_factor**drops

    def validate(self):
        if self.input_w % 32 or self.input_h % 32:
            raise ValueError(
                f"input size must be divisible by 32, got {self.input_w}x{self.input_h}"
            )
        if self.lr <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid optimizer settings")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch size and epochs must be positive")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name == "lr_milestones":
        return tuple(int(v) for v in raw.replace(",", " ").split()) if raw else ()
    if name in ("input_size", "size"):
        w, h = raw.lower().split("x")
        return (int(w), int(h))
    ftype = _FIELD_TYPES.get(name)
    if ftype in ("bool", bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {name}={raw!r}")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def load_config_file(path) -> dict:
    """Plain text: one ``key = value`` per line, # starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in ("input_size", "size"):
            w, h = _parse_value("input_size", raw)
            values["input_w"], values["input_h"] = w, h
            continue
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return values


def build_config(file_path=None, **overrides) -> RunConfig:
    """File values first, then explicit overrides (CLI flags win)."""
    values = load_config_file(file_path) if file_path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()
