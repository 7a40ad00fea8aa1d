"""Multi-coil Cartesian forward model: sampling masks, coil maps, E and E^H.

Array conventions used throughout the package:

* image series ``d``: complex ``(nx, ny, nt)``
* multi-coil k-space ``m``: complex ``(nx, ny, nt, nc)``, stored in plain FFT
  order (DC at index 0)
* mask pattern: ``(ny, nt)`` of 0/1, stored *centred* (row ``ny // 2`` is the
  DC phase encode) so that the central band reads as a contiguous block.
  :meth:`SamplingMask.lines` converts a frame to FFT order.

kx is always fully sampled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, UnsupportedSizeError

__all__ = [
    "SamplingMask",
    "CoilSensitivities",
    "EncodingConfig",
    "fft2",
    "ifft2",
    "make_uniform_interleaved_mask",
    "make_gaussian_random_mask",
    "full_mask",
    "simulate_coil_sensitivities",
    "encode",
    "adjoint_encode",
    "coil_combine",
]


def _check_pow2(*extents):
    for n in extents:
        if n < 1 or n & (n - 1):
            raise UnsupportedSizeError(f"FFT extent {n} is not a power of two")


def fft2(x: np.ndarray) -> np.ndarray:
    """Orthonormal 2-D DFT over the first two axes."""
    _check_pow2(x.shape[0], x.shape[1])
    return np.fft.fft2(x, axes=(0, 1), norm="ortho")


def ifft2(x: np.ndarray) -> np.ndarray:
    _check_pow2(x.shape[0], x.shape[1])
    return np.fft.ifft2(x, axes=(0, 1), norm="ortho")


def _center_band(ny: int, center_lines: int) -> slice:
    return slice(ny // 2 - center_lines // 2, ny // 2 + center_lines // 2)


@dataclass
class SamplingMask:
    pattern: np.ndarray  # (ny, nt) uint8, centred ky
    center_lines: int = 0
    acceleration: float = 1.0

    def __post_init__(self):
        self.pattern = np.asarray(self.pattern, dtype=np.uint8)
        if self.pattern.ndim != 2:
            raise DimensionError(f"mask pattern must be (ny, nt), got {self.pattern.shape}")

    @property
    def ny(self) -> int:
        return self.pattern.shape[0]

    @property
    def nt(self) -> int:
        return self.pattern.shape[1]

    def lines(self, t: int | None = None) -> np.ndarray:
        """Pattern in FFT order: ``(ny,)`` for one frame or ``(ny, nt)``."""
        p = self.pattern if t is None else self.pattern[:, t]
        return np.fft.ifftshift(p, axes=0)

    def kspace_mask(self, nx: int, t: int) -> np.ndarray:
        """Float ``(nx, ny)`` mask of frame ``t`` in FFT order."""
        return np.broadcast_to(self.lines(t)[None, :], (nx, self.ny)).astype(np.float64)

    def frame(self, t: int) -> "SamplingMask":
        return SamplingMask(self.pattern[:, t : t + 1], self.center_lines, self.acceleration)

    def lines_per_frame(self) -> np.ndarray:
        return self.pattern.sum(axis=0)


def full_mask(ny: int, nt: int) -> SamplingMask:
    return SamplingMask(np.ones((ny, nt), np.uint8), 0, 1.0)


def make_uniform_interleaved_mask(R: int, ny: int, nt: int, center_lines: int = 0) -> SamplingMask:
    """Lattice ``ky mod R == t mod R`` rolled by one line per frame, plus the
    central band.

    Any ``R`` consecutive frames jointly sample every line.
    """
    if R < 1:
        raise ConfigError(f"acceleration must be >= 1, got {R}")
    if ny % R:
        raise ConfigError(f"ny={ny} is not divisible by R={R}")
    if center_lines < 0 or center_lines % 2 or center_lines > ny:
        raise ConfigError(f"center_lines must be even and within [0, ny], got {center_lines}")
    ky = np.arange(ny)[:, None]
    t = np.arange(nt)[None, :]
    pattern = (ky % R == t % R).astype(np.uint8)
    pattern[_center_band(ny, center_lines), :] = 1
    return SamplingMask(pattern, center_lines, float(R))


def make_gaussian_random_mask(
    R: int,
    ny: int,
    nt: int,
    center_lines: int,
    seed: int,
    sigma_frac: float = 0.25,
) -> SamplingMask:
    """1-D variable-density random mask, drawn independently per frame.

    Each frame samples exactly ``ny // R`` lines: the central band plus the
    remaining budget drawn without replacement with probability proportional
    to a zero-mean Gaussian in ky (std ``sigma_frac * ny``).
    """
    if R < 1 or ny % R:
        raise ConfigError(f"ny={ny} must be divisible by R={R}")
    if center_lines < 0 or center_lines % 2:
        raise ConfigError(f"center_lines must be even and >= 0, got {center_lines}")
    budget = ny // R
    if budget < center_lines:
        raise ConfigError(f"line budget {budget} is smaller than center_lines={center_lines}")
    rng = np.random.default_rng(seed)
    band = np.zeros(ny, dtype=bool)
    band[_center_band(ny, center_lines)] = True
    candidates = np.flatnonzero(~band)
    k = candidates - ny // 2
    weight = np.exp(-0.5 * (k / (sigma_frac * ny)) ** 2)
    prob = weight / weight.sum()
    extra = budget - center_lines
    pattern = np.zeros((ny, nt), dtype=np.uint8)
    for t in range(nt):
        pattern[band, t] = 1
        if extra:
            picked = rng.choice(candidates, size=extra, replace=False, p=prob)
            pattern[picked, t] = 1
    return SamplingMask(pattern, center_lines, float(R))


@dataclass
class CoilSensitivities:
    maps: np.ndarray  # (nx, ny, nc) complex

    def __post_init__(self):
        self.maps = np.asarray(self.maps, dtype=np.complex128)
        if self.maps.ndim != 3:
            raise DimensionError(f"coil maps must be (nx, ny, nc), got {self.maps.shape}")

    @property
    def nx(self):
        return self.maps.shape[0]

    @property
    def ny(self):
        return self.maps.shape[1]

    @property
    def nc(self):
        return self.maps.shape[2]


def simulate_coil_sensitivities(nx: int, ny: int, nc: int, seed: int = 0) -> CoilSensitivities:
    """Smooth synthetic receive maps, normalised to unit sum of squares.

    Coil ``c`` is a Gaussian lobe centred on the FOV boundary at angle
    ``2*pi*c/nc`` (plus a seeded jitter) with a seeded linear phase ramp.
    """
    if nc < 1:
        raise ConfigError(f"nc must be >= 1, got {nc}")
    rng = np.random.default_rng(seed)
    x = np.arange(nx)[:, None] - nx / 2
    y = np.arange(ny)[None, :] - ny / 2
    width = 0.6 * max(nx, ny)
    maps = np.empty((nx, ny, nc), dtype=np.complex128)
    for c in range(nc):
        theta = 2 * np.pi * c / nc + rng.uniform(-0.2, 0.2)
        cx, cy = 0.5 * nx * np.cos(theta), 0.5 * ny * np.sin(theta)
        mag = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width**2))
        ax, ay, phi0 = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-np.pi, np.pi)
        phase = 2 * np.pi * (ax * x / nx + ay * y / ny) + phi0
        maps[..., c] = mag * np.exp(1j * phase)
    sos = np.sqrt((np.abs(maps) ** 2).sum(axis=-1, keepdims=True))
    return CoilSensitivities(maps / sos)


@dataclass
class EncodingConfig:
    mask: SamplingMask
    csm: CoilSensitivities

    def __post_init__(self):
        if self.mask.ny != self.csm.ny:
            raise DimensionError(f"mask ny={self.mask.ny} but coil maps ny={self.csm.ny}")

    def _mask_array(self) -> np.ndarray:
        # (1, ny, nt, 1) in FFT order
        return self.mask.lines().astype(np.float64)[None, :, :, None]


def encode(d: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """``m[:, :, t, c] = P_t * fft2(C_c * d_t)``."""
    d = np.asarray(d)
    if d.ndim == 2:
        d = d[:, :, None]
    nx, ny, nt = d.shape
    if (nx, ny) != cfg.csm.maps.shape[:2] or nt != cfg.mask.nt:
        raise DimensionError(
            f"image {d.shape} vs coil maps {cfg.csm.maps.shape} / mask {cfg.mask.pattern.shape}"
        )
    coil_images = d[:, :, :, None] * cfg.csm.maps[:, :, None, :]
    return fft2(coil_images) * cfg._mask_array()


def adjoint_encode(m: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    """``d_t = sum_c conj(C_c) * ifft2(P_t * m[:, :, t, c])``."""
    m = np.asarray(m)
    if m.ndim != 4:
        raise DimensionError(f"k-space must be (nx, ny, nt, nc), got {m.shape}")
    nx, ny, nt, nc = m.shape
    if (nx, ny, nc) != cfg.csm.maps.shape or nt != cfg.mask.nt:
        raise DimensionError(
            f"k-space {m.shape} vs coil maps {cfg.csm.maps.shape} / mask {cfg.mask.pattern.shape}"
        )
    coil_images = ifft2(m * cfg._mask_array())
    return (np.conj(cfg.csm.maps)[:, :, None, :] * coil_images).sum(axis=-1)


def coil_combine(kspace: np.ndarray, csm: CoilSensitivities) -> np.ndarray:
    """Conjugate-map combination of multi-coil k-space into one image.

    ``kspace`` is ``(nx, ny, nc)`` or ``(nx, ny, nt, nc)``; no mask applied.
    """
    imgs = ifft2(kspace)
    maps = csm.maps if kspace.ndim == 3 else csm.maps[:, :, None, :]
    return (np.conj(maps) * imgs).sum(axis=-1)
