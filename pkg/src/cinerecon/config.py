"""Flat ``key=value`` experiment configuration.

One setting per line, ``#`` starts a comment. Every key must appear in
:data:`SCHEMA`; values are parsed with the type of the default.
"""

from __future__ import annotations

import math
from pathlib import Path

from .errors import ConfigError, StorageError

# key: (default, help)
SCHEMA: dict[str, tuple[object, str]] = {
    "seed": (0, "global seed; every other random stream is derived from it"),
    "output_dir": ("runs/default", "artifact root (overridden by --out)"),
    "phantom.nx": (32, "image extent along x (power of two)"),
    "phantom.ny": (32, "image extent along y / phase encodes (power of two)"),
    "phantom.nt": (8, "frames per cine series"),
    "phantom.count": (16, "training phantoms, each merged into one reference"),
    "coils.nc": (4, "receive coils"),
    "acq.pattern": ("uniform", "time-interleaved acquisition pattern: uniform|gaussian"),
    "acq.R": (4, "acquisition acceleration (4 or 8)"),
    "acq.center_lines": (4, "always-sampled central phase encodes"),
    "retro.pattern": ("gaussian", "retrospective training mask: uniform|gaussian"),
    "retro.R": (4, "retrospective acceleration (4 or 8)"),
    "retro.center_lines": (4, "central lines in retrospective masks"),
    "retro.draws": (4, "retrospective masks per merged reference"),
    "augment.patch": ("", "crop size x,y,t for shear augmentation (empty: off)"),
    "augment.stride": ("", "crop stride x,y,t"),
    "model.mode": ("multichannel", "multichannel|single-channel"),
    "model.recon_block": ("admm3", "admm3|d5c5"),
    "model.N": (8, "unrolled blocks per coil stack"),
    "model.width": (16, "feature channels per hidden conv layer"),
    "model.depth": (3, "conv layers per learned operator"),
    "model.dc_lambda": (math.inf, "data-consistency weight (inf = hard backfill)"),
    "train.lr0": (0.001, "initial learning rate"),
    "train.decay": (0.98, "per-epoch learning-rate decay"),
    "train.batch": (2, "minibatch size"),
    "train.epochs": (50, "training epochs"),
    "test.pattern": ("gaussian", "per-frame test mask: uniform|gaussian|full"),
    "test.R": (4, "test acceleration (4 or 8)"),
    "test.center_lines": (4, "central lines in the test mask"),
    "test.phantom": ("heldout", "heldout|train (evaluate on the first training phantom)"),
    "eval.lps": (True, "also run the L+S baseline"),
    "lps.lambda_l": (0.02, "singular-value threshold"),
    "lps.lambda_s": (0.01, "temporal-Fourier sparsity threshold"),
    "lps.iters": (40, "proximal-gradient iterations"),
    "metrics.ssim_window": (7, "uniform SSIM window"),
    "metrics.error_max": (0.25, "upper end of the error-map display range"),
}

CHOICES = {
    "acq.pattern": ("uniform", "gaussian"),
    "retro.pattern": ("uniform", "gaussian"),
    "test.pattern": ("uniform", "gaussian", "full"),
    "model.mode": ("multichannel", "single-channel"),
    "model.recon_block": ("admm3", "d5c5"),
    "test.phantom": ("heldout", "train"),
    "acq.R": (4, 8),
    "retro.R": (4, 8),
    "test.R": (4, 8),
}


def defaults() -> dict:
    return {k: v for k, (v, _) in SCHEMA.items()}


def _parse_value(key: str, raw: str):
    default = SCHEMA[key][0]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def validate(cfg: dict) -> dict:
    for key, allowed in CHOICES.items():
        if cfg[key] not in allowed:
            raise ConfigError(f"{key}={cfg[key]!r}; expected one of {allowed}")
    for key in ("phantom.nx", "phantom.ny"):
        n = cfg[key]
        if n < 4 or n & (n - 1):
            raise ConfigError(f"{key} must be a power of two >= 4, got {n}")
    positive = ("phantom.nt", "phantom.count", "coils.nc", "retro.draws", "model.N",
                "model.width", "train.batch", "train.epochs", "lps.iters", "metrics.ssim_window")
    for key in positive:
        if cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1, got {cfg[key]}")
    if cfg["model.depth"] < 2:
        raise ConfigError("model.depth must be >= 2")
    if not cfg["model.dc_lambda"] > 0:
        raise ConfigError("model.dc_lambda must be > 0")
    if cfg["train.lr0"] < 0 or not 0 < cfg["train.decay"] <= 1:
        raise ConfigError("train.lr0 must be >= 0 and train.decay in (0, 1]")
    if not cfg["metrics.error_max"] > 0:
        raise ConfigError("metrics.error_max must be > 0")
    if bool(cfg["augment.patch"]) != bool(cfg["augment.stride"]):
        raise ConfigError("augment.patch and augment.stride must be set together")
    for key in ("augment.patch", "augment.stride"):
        if cfg[key]:
            triple(cfg[key], key)
    return cfg


def triple(text: str, key: str = "value") -> tuple[int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"{key}: expected three comma-separated integers, got {text!r}") from None
    if len(vals) != 3:
        raise ConfigError(f"{key}: expected three comma-separated integers, got {text!r}")
    return vals


def parse(text: str) -> dict:
    cfg = defaults()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        cfg[key] = _parse_value(key, raw)
    return validate(cfg)


def serialize(cfg: dict) -> str:
    return "".join(f"{key}={_format_value(cfg[key])}\n" for key in SCHEMA)


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc}") from exc
    return parse(text)
