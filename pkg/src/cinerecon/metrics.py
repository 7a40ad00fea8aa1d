"""Image-quality metrics, y-t profiles, error maps and 8-bit exports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError

__all__ = [
    "mse",
    "psnr",
    "ssim",
    "second_moment_sigma",
    "yt_profile",
    "error_map",
    "to_uint8",
    "write_pgm",
    "read_pgm",
    "montage",
    "MetricRow",
    "MetricsReport",
    "CSV_FIELDS",
]

CSV_FIELDS = ("method", "volume", "mse", "psnr_db", "ssim", "sigma", "runtime_s")


def _same(a, b, what):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"{what}: {a.shape} vs {b.shape}")
    return a, b


def mse(ref, test) -> float:
    ref, test = _same(ref, test, "mse")
    return float(np.mean(np.abs(ref - test) ** 2))


def psnr(ref, test, peak: float | None = None) -> float:
    """PSNR in dB; ``math.inf`` for identical inputs.

    ``peak`` defaults to ``max |ref|`` (1 for a reference normalised to
    [0, 1]).
    """
    ref, test = _same(ref, test, "psnr")
    err = mse(ref, test)
    if err == 0:
        return math.inf
    if peak is None:
        peak = float(np.max(np.abs(ref)))
    return 10.0 * math.log10(peak**2 / err)


def ssim(ref, test, window: int = 7, k1: float = 0.01, k2: float = 0.03, L: float = 1.0) -> float:
    """Mean SSIM over all valid ``window x window`` uniform windows."""
    ref, test = _same(ref, test, "ssim")
    if ref.ndim != 2 or min(ref.shape) < window:
        raise DimensionError(f"ssim needs a 2-D image of at least {window}x{window}, got {ref.shape}")
    x = sliding_window_view(ref.astype(np.float64), (window, window))
    y = sliding_window_view(test.astype(np.float64), (window, window))
    mx = x.mean(axis=(-2, -1))
    my = y.mean(axis=(-2, -1))
    vx = ((x - mx[..., None, None]) ** 2).mean(axis=(-2, -1))
    vy = ((y - my[..., None, None]) ** 2).mean(axis=(-2, -1))
    cxy = ((x - mx[..., None, None]) * (y - my[..., None, None])).mean(axis=(-2, -1))
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(smap.mean())


def second_moment_sigma(img) -> float:
    """Pixel standard deviation after min-max normalisation to [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    if img.size == 0:
        raise DimensionError("sigma of an empty image")
    lo, hi = img.min(), img.max()
    if hi == lo:
        return 0.0
    p = 255.0 * (img - lo) / (hi - lo)
    return float(np.sqrt(np.mean((p - p.mean()) ** 2)))


def yt_profile(vol, x_index: int) -> np.ndarray:
    """``|vol[x_index, :, :]|`` as a ``(ny, nt)`` image."""
    vol = np.asarray(vol)
    if vol.ndim != 3:
        raise DimensionError(f"expected an (nx, ny, nt) series, got {vol.shape}")
    if not 0 <= x_index < vol.shape[0]:
        raise IndexError(f"x_index {x_index} outside [0, {vol.shape[0]})")
    return np.abs(vol[x_index, :, :])


def error_map(ref, test, display_range=(0.0, 0.25)) -> np.ndarray:
    """``|ref - test|`` clipped to ``display_range``."""
    ref, test = _same(ref, test, "error_map")
    lo, hi = display_range
    return np.clip(np.abs(ref - test), lo, hi)


# --------------------------------------------------------------------------
# 8-bit export


def to_uint8(img, lo: float, hi: float) -> np.ndarray:
    """Linear map ``[lo, hi] -> [0, 255]`` with clipping and rounding."""
    img = np.asarray(img, dtype=np.float64)
    scaled = (np.clip(img, lo, hi) - lo) / (hi - lo) * 255.0
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path, img8: np.ndarray) -> None:
    img8 = np.asarray(img8, dtype=np.uint8)
    if img8.ndim != 2:
        raise DimensionError(f"PGM needs a 2-D image, got {img8.shape}")
    h, w = img8.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img8.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    parts = buf.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    data = buf[len(buf) - w * h :]
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def montage(rows: list[list[np.ndarray]], sep: int = 2, fill: int = 255) -> np.ndarray:
    """Grid of 8-bit tiles.

    Every tile is padded (bottom/right, value 0) to the largest tile extent
    ``(th, tw)``; tiles are separated by ``sep``-pixel lines of ``fill``.
    Output size is ``(R*th + (R-1)*sep, C*tw + (C-1)*sep)`` for R rows and C
    columns (short rows are padded with blank tiles).
    """
    tiles = [t for row in rows for t in row]
    th = max(t.shape[0] for t in tiles)
    tw = max(t.shape[1] for t in tiles)
    n_rows, n_cols = len(rows), max(len(r) for r in rows)
    out = np.full((n_rows * th + (n_rows - 1) * sep, n_cols * tw + (n_cols - 1) * sep), fill, np.uint8)
    for r, row in enumerate(rows):
        for c in range(n_cols):
            y0, x0 = r * (th + sep), c * (tw + sep)
            out[y0 : y0 + th, x0 : x0 + tw] = 0
            if c < len(row):
                t = row[c]
                out[y0 : y0 + t.shape[0], x0 : x0 + t.shape[1]] = t
    return out


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricRow:
    method: str
    volume: str
    mse: float
    psnr_db: float
    ssim: float
    sigma: float
    runtime_s: float

    def as_list(self):
        return [self.method, self.volume] + [_fmt(getattr(self, k)) for k in CSV_FIELDS[2:]]


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


@dataclass
class MetricsReport:
    rows: list[MetricRow] = field(default_factory=list)

    def add(self, method, volume, ref, test, runtime_s=0.0, ssim_window=7):
        """Score magnitude images; both are scaled by ``max |ref|`` first."""
        ref = np.abs(np.asarray(ref))
        test = np.abs(np.asarray(test))
        scale = ref.max() or 1.0
        ref, test = ref / scale, test / scale
        row = MetricRow(method, volume, mse(ref, test), psnr(ref, test, peak=1.0),
                        ssim(ref, test, window=ssim_window), second_moment_sigma(test), float(runtime_s))
        self.rows.append(row)
        return row

    def methods(self) -> list[str]:
        return list(dict.fromkeys(r.method for r in self.rows))

    def summary(self, method: str) -> dict:
        """Mean and standard deviation of each metric (64-bit accumulation)."""
        rows = [r for r in self.rows if r.method == method]
        out = {}
        for key in CSV_FIELDS[2:]:
            vals = np.array([getattr(r, key) for r in rows], dtype=np.float64)
            with np.errstate(invalid="ignore"):  # inf PSNR rows
                out[key] = (float(vals.mean()), float(vals.std()))
        return out

    def write_csv(self, path, include_runtime: bool = True) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_FIELDS)
            for r in self.rows:
                vals = r.as_list()
                if not include_runtime:
                    vals[-1] = ""
                w.writerow(vals)
            for m in self.methods():
                s = self.summary(m)
                w.writerow([m, "mean"] + [_fmt(s[k][0]) for k in CSV_FIELDS[2:]])
                w.writerow([m, "std"] + [_fmt(s[k][1]) for k in CSV_FIELDS[2:]])

    @classmethod
    def read_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with Path(path).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                if rec["volume"] in ("mean", "std"):
                    continue
                rep.rows.append(MetricRow(
                    rec["method"], rec["volume"],
                    *(float(rec[k]) if rec[k] else math.nan for k in CSV_FIELDS[2:]),
                ))
        return rep
