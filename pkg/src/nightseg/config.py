"""Plain-text configuration: one ``key = value`` per line, ``#`` comments."""

from __future__ import annotations

from pathlib import Path

__all__ = ["KNOWN_KEYS", "Config", "parse_config"]

KNOWN_KEYS = {
    "decoder.depth",
    "decoder.channels",
    "decoder.normalize_amp_map",
    "matcher.prototypes",
    "matcher.reliable_k",
    "matcher.layers",
    "matcher.mode",
    "reliable.renormalize",
    "enhance.op",
    "phase.c_a",
    "backbone.widths",
    "phase_enc.widths",
    "train.iters",
    "train.phase1_iters",
    "train.lr1",
    "train.lr2",
    "train.batch",
    "train.seed",
    "train.weight_decay",
    "train.lambda_cls",
    "train.lambda_bce",
    "train.lambda_dice",
    "train.dtype",
    "train.log_every",
}

_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


class Config:
    """Typed access over the flat key/value map."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values = dict(values or {})

    def get_str(self, key: str, default: str) -> str:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int) -> int:
        return int(self.values.get(key, default))

    def get_float(self, key: str, default: float) -> float:
        return float(self.values.get(key, default))

    def get_bool(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        lowered = raw.lower()
        if lowered not in _BOOL:
            raise ValueError(f"config key {key}: expected a boolean, got {raw!r}")
        return _BOOL[lowered]

    def get_ints(self, key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        raw = self.values.get(key)
        if raw is None:
            return default
        return tuple(int(p) for p in raw.replace(",", " ").split())


def parse_config(source: str | Path, from_text: bool = False) -> Config:
    """Parse a config file (or literal text); unknown keys are rejected."""
    text = source if from_text else Path(source).read_text(encoding="utf-8")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(str(text).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = value
    return Config(values)
