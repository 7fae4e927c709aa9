"""Flat ``key=value`` run configuration.

Blank lines and lines starting with ``#`` are ignored. Unknown keys are an
error; omitted keys take the defaults listed in :data:`SCHEMA`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .model import DEPTH_BLOCKS, ArchSpec, SpecError, depth_of
from .ops import PoolKind
from .trainer import OptimConfig


class ConfigError(ValueError):
    pass


def _blocks(value: str) -> tuple:
    parts = tuple(int(v) for v in value.split(","))
    depth_of(parts)
    return parts


def _depth(value: str) -> int:
    d = int(value)
    if d not in DEPTH_BLOCKS:
        raise ValueError(f"depth must be one of {sorted(DEPTH_BLOCKS)} (or use depth_blocks)")
    return d


def _shortcut(value: str) -> bool:
    v = value.strip().lower()
    if v in ("enabled", "true", "yes", "1"):
        return True
    if v in ("none", "false", "no", "0"):
        return False
    raise ValueError("expected 'none' or 'enabled'")


def _optional_float(value: str) -> Optional[float]:
    return None if value.strip().lower() in ("", "none") else float(value)


def _optional_path(value: str) -> Optional[str]:
    return value or None


def _precision(value: str) -> int:
    bits = int(value)
    if bits not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    return bits


# key -> (parser, default as written in a config file)
SCHEMA = {
    "depth": (_depth, None),
    "depth_blocks": (_blocks, "2,2,2,2"),
    "width_multiplier": (Fraction, "1"),
    "pool": (PoolKind.parse, "maxpool_3_2"),
    "shortcut": (_shortcut, "none"),
    "seq_len": (int, "1014"),
    "n_classes": (int, "2"),
    "embed_dim": (int, "16"),
    "kmax_k": (int, "8"),
    "fc_hidden": (int, "2048"),
    "lr": (float, "0.01"),
    "momentum": (float, "0.9"),
    "batch_size": (int, "128"),
    "halve_every": (int, "3"),
    "max_epochs": (int, "15"),
    "seed": (int, "0"),
    "precision": (_precision, "32"),
    "clip_norm": (_optional_float, "none"),
    "train_data": (_optional_path, ""),
    "test_data": (_optional_path, ""),
    "output_dir": (str, "run"),
}


@dataclass
class RunConfig:
    values: dict  # parsed values for every schema key

    @property
    def block_counts(self) -> tuple:
        if self.values["depth"] is not None:
            return DEPTH_BLOCKS[self.values["depth"]]
        return self.values["depth_blocks"]

    def arch_spec(self) -> ArchSpec:
        v = self.values
        try:
            return ArchSpec(
                block_counts=self.block_counts,
                width_multiplier=v["width_multiplier"],
                pool_kind=v["pool"],
                shortcut=v["shortcut"],
                seq_len=v["seq_len"],
                n_classes=v["n_classes"],
                embed_dim=v["embed_dim"],
                kmax_k=v["kmax_k"],
                fc_hidden=v["fc_hidden"],
            )
        except SpecError as exc:
            raise ConfigError(str(exc)) from exc

    def optim(self) -> OptimConfig:
        v = self.values
        try:
            return OptimConfig(
                lr0=v["lr"], momentum=v["momentum"], batch_size=v["batch_size"],
                halve_every=v["halve_every"], max_epochs=v["max_epochs"], seed=v["seed"],
                precision=v["precision"], clip_norm=v["clip_norm"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved_lines(self) -> list:
        """Every key with its effective value, in schema order."""
        out = []
        for key in SCHEMA:
            val = self.values[key]
            if key == "depth_blocks":
                val = ",".join(map(str, self.block_counts))
            elif key == "depth":
                val = depth_of(self.block_counts)
            elif key == "pool":
                val = val.value
            elif key == "shortcut":
                val = "enabled" if val else "none"
            elif isinstance(val, Fraction):
                val = f"{val.numerator}/{val.denominator}" if val.denominator != 1 else str(val.numerator)
            elif val is None:
                val = "none" if key == "clip_norm" else ""
            out.append(f"{key}={val}")
        return out


def parse_config(text: str) -> RunConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    if "depth" in raw and "depth_blocks" in raw:
        raise ConfigError("give either depth or depth_blocks, not both")

    values = {}
    for key, (parse, default) in SCHEMA.items():
        text_value = raw.get(key, default)
        if text_value is None:
            values[key] = None
            continue
        try:
            values[key] = parse(text_value)
        except (ValueError, SpecError, ZeroDivisionError) as exc:
            raise ConfigError(f"{key}={text_value}: {exc}") from None
    return RunConfig(values)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
