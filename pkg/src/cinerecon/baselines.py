"""Classical references: zero-filled adjoint and a low-rank + sparse solver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoding import EncodingConfig, adjoint_encode, encode
from .errors import ConfigError, NumericalError

__all__ = [
    "zero_filled",
    "LpsConfig",
    "LpsResult",
    "svt",
    "soft_threshold",
    "lps_objective",
    "lps_solve",
    "lps_recon",
]


def zero_filled(m: np.ndarray, cfg: EncodingConfig) -> np.ndarray:
    return adjoint_encode(m, cfg)


@dataclass
class LpsConfig:
    lambda_l: float = 0.01
    lambda_s: float = 0.01
    iters: int = 50
    step: float = 0.5
    max_backtracks: int = 30

    def __post_init__(self):
        if not (self.lambda_l > 0 and self.lambda_s > 0):
            raise ConfigError("L+S thresholds must be > 0")
        if self.iters < 1 or self.step <= 0:
            raise ConfigError("L+S needs iters >= 1 and step > 0")


def svt(a: np.ndarray, tau: float) -> np.ndarray:
    """Singular-value soft thresholding of a 2-D matrix."""
    if math.isinf(tau):
        return np.zeros_like(a)
    u, s, vh = np.linalg.svd(a, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vh


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    """Complex soft thresholding: shrink magnitudes by ``tau``."""
    if math.isinf(tau):
        return np.zeros_like(x)
    mag = np.abs(x)
    scale = np.maximum(mag - tau, 0.0) / np.where(mag > 0, mag, 1.0)
    return x * scale


def _casorati(v: np.ndarray) -> np.ndarray:
    nx, ny, nt = v.shape
    return v.reshape(nx * ny, nt)


def _tf(v):
    return np.fft.fft(v, axis=2, norm="ortho")


def _itf(v):
    return np.fft.ifft(v, axis=2, norm="ortho")


def lps_objective(L, S, m, cfg: EncodingConfig, lps: LpsConfig) -> float:
    r = encode(L + S, cfg) - m
    value = 0.5 * float(np.vdot(r, r).real)
    value += _penalty(lps.lambda_l, float(np.linalg.svd(_casorati(L), compute_uv=False).sum()))
    value += _penalty(lps.lambda_s, float(np.abs(_tf(S)).sum()))
    return value


def _penalty(lam: float, norm: float) -> float:
    # an infinite weight only admits the zero component
    if math.isinf(lam):
        return math.inf if norm > 0 else 0.0
    return lam * norm


@dataclass
class LpsResult:
    L: np.ndarray
    S: np.ndarray
    objective: list[float]

    @property
    def volume(self) -> np.ndarray:
        return self.L + self.S


def lps_solve(m: np.ndarray, cfg: EncodingConfig, lps: LpsConfig) -> LpsResult:
    """Proximal gradient on
    ``0.5 ||E(L+S) - m||^2 + lambda_l ||L||_* + lambda_s ||F_t S||_1``.

    ``||L||_*`` acts on the (space x time) Casorati matrix and ``F_t`` is the
    orthonormal temporal DFT. The step halves whenever the objective would
    rise; exhausting ``max_backtracks`` raises :class:`NumericalError`.
    """
    if m.ndim != 4 or m.shape[2] < 2:
        raise ConfigError("L+S needs a multi-frame series (nt >= 2)")
    nx, ny, nt, _ = m.shape
    L = adjoint_encode(m, cfg)
    S = np.zeros_like(L)
    obj = [lps_objective(L, S, m, cfg, lps)]
    step = lps.step
    for _ in range(lps.iters):
        g = adjoint_encode(encode(L + S, cfg) - m, cfg)
        for _ in range(lps.max_backtracks + 1):
            L_new = svt(_casorati(L - step * g), step * lps.lambda_l).reshape(nx, ny, nt)
            S_new = _itf(soft_threshold(_tf(S - step * g), step * lps.lambda_s))
            value = lps_objective(L_new, S_new, m, cfg, lps)
            if not math.isfinite(value):
                raise NumericalError("L+S objective is not finite")
            if value <= obj[-1] * (1 + 1e-12) + 1e-300:
                break
            step *= 0.5
        else:
            raise NumericalError(
                f"L+S objective increased after {lps.max_backtracks} step halvings "
                f"(last {value:.6g} > {obj[-1]:.6g})"
            )
        L, S = L_new, S_new
        obj.append(value)
    return LpsResult(L, S, obj)


def lps_recon(m: np.ndarray, cfg: EncodingConfig, lps: LpsConfig) -> np.ndarray:
    return lps_solve(m, cfg, lps).volume
