"""Training data from time-interleaved acquisitions.

The pipeline: a cine series is acquired with a time-interleaved mask, all
frames are merged into one fully encoded k-space (count-normalised average
per phase-encode line), and that k-space is retrospectively undersampled
into (input, target) pairs. Test data are never merged.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tns
from .encoding import (
    CoilSensitivities,
    EncodingConfig,
    SamplingMask,
    coil_combine,
    encode,
    full_mask,
    make_gaussian_random_mask,
    make_uniform_interleaved_mask,
)
from .errors import CheckpointError, ConfigError, CoverageError, DimensionError

__all__ = [
    "CinePhantom",
    "random_phantom",
    "generate_phantom",
    "annulus_radius",
    "merge_frames",
    "acquire_and_merge",
    "MaskSpec",
    "make_mask",
    "TrainingPair",
    "Dataset",
    "build_training_pairs",
    "shear_augment",
    "save_dataset",
    "load_dataset",
]


@dataclass
class CinePhantom:
    """Ellipse body with a beating annulus (myocardium) around a blood pool.

    Inner radius of the annulus follows ``r0 + amp * sin(2*pi*t/nt)``; the
    outer radius is the inner radius plus ``thickness``.
    """

    nx: int = 32
    ny: int = 32
    nt: int = 8
    body_center: tuple[float, float] = (16.0, 16.0)
    body_axes: tuple[float, float] = (13.0, 11.0)
    body_intensity: float = 0.35
    ring_center: tuple[int, int] = (15, 17)
    r0: float = 4.0
    amp: float = 1.5
    thickness: float = 2.5
    ring_intensity: float = 0.9
    pool_intensity: float = 0.6
    phase_strength: float = 0.5
    seed: int = 0


def random_phantom(nx: int, ny: int, nt: int, seed: int) -> CinePhantom:
    """Phantom with geometry and intensities drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    s = min(nx, ny)
    body_axes = (rng.uniform(0.32, 0.44) * nx, rng.uniform(0.30, 0.42) * ny)
    body_center = (nx / 2 + rng.uniform(-0.04, 0.04) * nx, ny / 2 + rng.uniform(-0.04, 0.04) * ny)
    r0 = rng.uniform(0.10, 0.16) * s
    thickness = rng.uniform(0.06, 0.10) * s
    reach = r0 + thickness + 0.06 * s
    ring_center = (
        int(round(nx / 2 + rng.uniform(-0.3, 0.3) * (body_axes[0] - reach))),
        int(round(ny / 2 + rng.uniform(-0.3, 0.3) * (body_axes[1] - reach))),
    )
    return CinePhantom(
        nx=nx,
        ny=ny,
        nt=nt,
        body_center=body_center,
        body_axes=body_axes,
        body_intensity=float(rng.uniform(0.25, 0.45)),
        ring_center=ring_center,
        r0=float(r0),
        amp=float(rng.uniform(0.03, 0.06) * s),
        thickness=float(thickness),
        ring_intensity=float(rng.uniform(0.8, 1.0)),
        pool_intensity=float(rng.uniform(0.5, 0.7)),
        phase_strength=float(rng.uniform(0.2, 0.8)),
        seed=int(seed),
    )


def annulus_radius(p: CinePhantom, t) -> np.ndarray:
    return p.r0 + p.amp * np.sin(2 * np.pi * np.asarray(t) / p.nt)


def generate_phantom(p: CinePhantom) -> np.ndarray:
    """Complex ``(nx, ny, nt)`` series with ``|value| <= 1``.

    The phase map is a smooth seeded polynomial, constant over time.
    """
    for n in (p.nx, p.ny):
        if n < 1 or n & (n - 1):
            raise ConfigError(f"phantom extents must be powers of two, got {n}")
    x = np.arange(p.nx, dtype=np.float64)[:, None]
    y = np.arange(p.ny, dtype=np.float64)[None, :]
    body = ((x - p.body_center[0]) / p.body_axes[0]) ** 2 + (
        (y - p.body_center[1]) / p.body_axes[1]
    ) ** 2 <= 1.0
    dist = np.hypot(x - p.ring_center[0], y - p.ring_center[1])

    rng = np.random.default_rng(p.seed)
    coef = rng.uniform(-1, 1, size=5)
    u = 2 * x / p.nx - 1
    v = 2 * y / p.ny - 1
    phase = np.pi * p.phase_strength * (
        coef[0] * u + coef[1] * v + coef[2] * u * v + coef[3] * u**2 + coef[4] * v**2
    ) / 2
    carrier = np.exp(1j * phase)

    vol = np.empty((p.nx, p.ny, p.nt), dtype=np.complex128)
    for t in range(p.nt):
        r_in = annulus_radius(p, t)
        mag = np.where(body, p.body_intensity, 0.0)
        mag = np.where(dist < r_in, p.pool_intensity, mag)
        mag = np.where((dist >= r_in) & (dist < r_in + p.thickness), p.ring_intensity, mag)
        vol[:, :, t] = np.clip(mag, 0.0, 1.0) * carrier
    return vol


# --------------------------------------------------------------------------
# merging


def merge_frames(m: np.ndarray, mask: SamplingMask) -> np.ndarray:
    """Average every sampled frame per phase-encode line into one frame.

    ``out[kx, ky, c] = sum_t P[ky, t] m[kx, ky, t, c] / count(ky)``. Returns
    ``(nx, ny, 1, nc)``. Raises :class:`CoverageError` listing (centred) ky
    rows never sampled.
    """
    if m.ndim != 4 or m.shape[1] != mask.ny or m.shape[2] != mask.nt:
        raise DimensionError(f"k-space {m.shape} vs mask {mask.pattern.shape}")
    missing = np.flatnonzero(mask.pattern.sum(axis=1) == 0)
    if missing.size:
        raise CoverageError(missing.tolist())
    lines = mask.lines().astype(np.float64)  # (ny, nt), FFT order
    count = lines.sum(axis=1)
    summed = (m * lines[None, :, :, None]).sum(axis=2)
    return (summed / count[None, :, None])[:, :, None, :]


def acquire_and_merge(volume: np.ndarray, csm: CoilSensitivities, mask: SamplingMask) -> np.ndarray:
    """Simulate an interleaved acquisition of ``volume`` and merge it."""
    m = encode(volume, EncodingConfig(mask, csm))
    return merge_frames(m, mask)


# --------------------------------------------------------------------------
# retrospective undersampling


PATTERNS = ("uniform", "gaussian", "full")


@dataclass(frozen=True)
class MaskSpec:
    pattern: str = "gaussian"
    R: int = 4
    center_lines: int = 4

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ConfigError(f"unknown mask pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.R < 1:
            raise ConfigError(f"R must be >= 1, got {self.R}")


def make_mask(spec: MaskSpec, ny: int, nt: int, seed: int) -> SamplingMask:
    if spec.pattern == "uniform":
        return make_uniform_interleaved_mask(spec.R, ny, nt, spec.center_lines)
    if spec.pattern == "gaussian":
        return make_gaussian_random_mask(spec.R, ny, nt, spec.center_lines, seed)
    return full_mask(ny, nt)


@dataclass
class TrainingPair:
    input: np.ndarray  # (nx, ny, nc) undersampled k-space
    mask: SamplingMask  # nt == 1
    target: np.ndarray  # (nx, ny) coil-combined image


@dataclass
class Dataset:
    pairs: list[TrainingPair]
    csm: CoilSensitivities | None = None
    manifest: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)


def build_training_pairs(
    full: np.ndarray,
    csm: CoilSensitivities,
    spec: MaskSpec,
    n_draws: int,
    seed: int,
) -> Dataset:
    """Retrospectively undersample one fully encoded k-space ``n_draws`` times.

    Draw ``i`` uses seed ``seed + i`` (Gaussian) or lattice offset ``i``
    (uniform), so draws can be generated in any order.
    """
    if full.ndim == 4:
        if full.shape[2] != 1:
            raise DimensionError(f"expected a single merged frame, got nt={full.shape[2]}")
        full = full[:, :, 0, :]
    if full.ndim != 3 or full.shape != csm.maps.shape:
        raise DimensionError(f"k-space {full.shape} vs coil maps {csm.maps.shape}")
    if n_draws < 1:
        raise ConfigError("n_draws must be >= 1")
    ny = full.shape[1]
    target = coil_combine(full, csm)
    pairs = []
    for i in range(n_draws):
        if spec.pattern == "uniform":
            mask = make_uniform_interleaved_mask(spec.R, ny, i + 1, spec.center_lines).frame(i)
        else:
            mask = make_mask(spec, ny, 1, seed + i)
        inp = full * mask.lines(0)[None, :, None]
        pairs.append(TrainingPair(inp, mask, target.copy()))
    manifest = {"pattern": spec.pattern, "R": spec.R, "center_lines": spec.center_lines,
                "n_draws": n_draws, "seed": seed}
    return Dataset(pairs, csm, manifest)


# --------------------------------------------------------------------------
# augmentation


def shear_augment(volume: np.ndarray, patch, stride) -> list[np.ndarray]:
    """All axis-aligned crops of size ``patch`` on the ``stride`` lattice.

    Scan order is x outermost, t innermost.
    """
    shape = volume.shape[:3]
    if len(patch) != 3 or len(stride) != 3:
        raise ConfigError("patch and stride need three entries (x, y, t)")
    if any(p > n for p, n in zip(patch, shape)):
        raise ConfigError(f"patch {tuple(patch)} exceeds volume {shape}")
    if any(s < 1 for s in stride):
        raise ConfigError(f"strides must be positive, got {tuple(stride)}")
    starts = [range(0, n - p + 1, s) for n, p, s in zip(shape, patch, stride)]
    px, py, pt = patch
    return [
        volume[i : i + px, j : j + py, k : k + pt]
        for i in starts[0]
        for j in starts[1]
        for k in starts[2]
    ]


# --------------------------------------------------------------------------
# persistence


def write_manifest(path: Path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: Path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_dataset(ds: Dataset, directory: str | os.PathLike) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, pair in enumerate(ds.pairs):
        tns.save(d / f"pair_{i}_input.tns", pair.input)
        tns.save(d / f"pair_{i}_target.tns", pair.target)
        tns.save(d / f"pair_{i}_mask.tns", pair.mask.pattern)
    if ds.csm is not None:
        tns.save(d / "csm.tns", ds.csm.maps)
    manifest = dict(ds.manifest)
    manifest["pairs"] = len(ds.pairs)
    write_manifest(d / "manifest.txt", manifest)


def load_dataset(directory: str | os.PathLike) -> Dataset:
    d = Path(directory)
    if not (d / "manifest.txt").is_file():
        raise CheckpointError(f"{d} has no manifest.txt")
    manifest = read_manifest(d / "manifest.txt")
    n = int(manifest.get("pairs", 0))
    pairs = []
    for i in range(n):
        pattern = tns.load(d / f"pair_{i}_mask.tns")
        pairs.append(
            TrainingPair(
                tns.load_complex(d / f"pair_{i}_input.tns"),
                SamplingMask(pattern),
                tns.load_complex(d / f"pair_{i}_target.tns"),
            )
        )
    csm = CoilSensitivities(tns.load_complex(d / "csm.tns")) if (d / "csm.tns").exists() else None
    return Dataset(pairs, csm, manifest)
