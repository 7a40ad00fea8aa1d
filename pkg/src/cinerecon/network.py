"""Parallel unrolled reconstruction network.

Every coil gets its own unrolled stack (ADMM-style blocks or a D5C5 cascade)
that works on single-coil k-space with E = P F; the reconstructed coil
images are concatenated along channels and merged by a small CNN.

Parameters live in a flat ``dict[str, Tensor]`` with names of the form
``<stack>/<block>/<net>/layer<i>.w`` (or ``.b``); the per-block step size is
``<stack>/<block>/eta``. Complex images and k-space are ``[2, h, w]`` real
tensors (real plane, imaginary plane).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .encoding import CoilSensitivities, SamplingMask, coil_combine, fft2 as np_fft2
from .errors import ConfigError, DimensionError
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "param_shapes",
    "count_params",
    "cnn",
    "dc_layer",
    "admm_block_forward",
    "coil_recon_forward",
    "d5c5_forward",
    "combine_forward",
    "model_forward",
    "to_planes",
    "from_planes",
]

MODES = ("multichannel", "single-channel")
BLOCKS = ("admm3", "d5c5")


@dataclass
class ModelConfig:
    mode: str = "multichannel"
    recon_block: str = "admm3"
    n_blocks: int = 8
    width: int = 16
    depth: int = 3
    kernel: int = 3
    dc_lambda: float = math.inf
    nc: int = 4
    d5c5_cascades: int = 5
    d5c5_depth: int = 5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.recon_block not in BLOCKS:
            raise ConfigError(f"recon_block must be one of {BLOCKS}, got {self.recon_block!r}")
        if self.n_blocks < 1 or self.depth < 2 or self.width < 1 or self.nc < 1:
            raise ConfigError(f"invalid network sizes in {self}")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel size must be odd")
        if not self.dc_lambda > 0:
            raise ConfigError(f"dc_lambda must be > 0, got {self.dc_lambda}")

    @property
    def stacks(self) -> list[str]:
        if self.mode == "single-channel":
            return ["single"]
        return [f"coil{c}" for c in range(self.nc)]

    def as_dict(self) -> dict:
        return asdict(self)


def _cnn_shapes(prefix: str, c_in: int, c_out: int, width: int, depth: int, k: int) -> dict:
    chans = [c_in] + [width] * (depth - 1) + [c_out]
    shapes = {}
    for i in range(depth):
        shapes[f"{prefix}/layer{i}.w"] = (chans[i + 1], chans[i], k, k)
        shapes[f"{prefix}/layer{i}.b"] = (chans[i + 1],)
    return shapes


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered mapping of parameter name to shape."""
    shapes: dict[str, tuple[int, ...]] = {}
    w, d, k = cfg.width, cfg.depth, cfg.kernel
    for stack in cfg.stacks:
        if cfg.recon_block == "admm3":
            for b in range(cfg.n_blocks):
                pre = f"{stack}/block{b}"
                shapes.update(_cnn_shapes(f"{pre}/gamma", 4, 2, w, d, k))
                shapes.update(_cnn_shapes(f"{pre}/pi", 6, 2, w, d, k))
                shapes.update(_cnn_shapes(f"{pre}/lambda", 2, 2, w, d, k))
                shapes[f"{pre}/eta"] = ()
        else:
            for b in range(cfg.d5c5_cascades):
                shapes.update(_cnn_shapes(f"{stack}/cascade{b}/cnn", 2, 2, w, cfg.d5c5_depth, k))
    if cfg.mode == "multichannel":
        shapes.update(_cnn_shapes("combine/head/cnn", 2 * cfg.nc, 2, w, d, k))
    return shapes


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s, dtype=np.int64)) for s in param_shapes(cfg).values())


# --------------------------------------------------------------------------
# building blocks


def cnn(x: Tensor, params: dict, prefix: str) -> Tensor:
    """conv + relu layers; the last layer is linear."""
    i = 0
    while f"{prefix}/layer{i}.w" in params:
        if i:
            x = T.relu(x)
        x = T.conv2d(x, params[f"{prefix}/layer{i}.w"], params[f"{prefix}/layer{i}.b"])
        i += 1
    if i == 0:
        raise KeyError(f"no layers under {prefix!r}")
    return x


def dc_layer(pred_k: Tensor, measured_k, mask: np.ndarray, lam: float = math.inf) -> Tensor:
    """k-space backfill.

    Unsampled entries keep the prediction; sampled entries become
    ``(pred + lam * measured) / (1 + lam)``, i.e. exactly ``measured`` for
    ``lam = inf``. ``mask`` is ``(h, w)`` and broadcasts over the real/imag
    planes.
    """
    if not lam > 0:
        raise ConfigError(f"dc lambda must be > 0, got {lam}")
    measured_k = T.as_tensor(measured_k, dtype=pred_k.dtype)
    if pred_k.shape != measured_k.shape or pred_k.shape[-2:] != mask.shape:
        raise DimensionError(f"dc: pred {pred_k.shape}, measured {measured_k.shape}, mask {mask.shape}")
    m = np.asarray(mask, dtype=pred_k.dtype)
    if math.isinf(lam):
        keep, take = 1 - m, m
    else:
        w = lam / (1.0 + lam)
        keep, take = 1 - w * m, w * m
    return T.mul(pred_k, keep.astype(pred_k.dtype)) + T.mul(measured_k, take.astype(pred_k.dtype))


def _E(x: Tensor, mask: np.ndarray) -> Tensor:
    return T.mul(T.fft2(x), mask)


def _EH(k: Tensor, mask: np.ndarray) -> Tensor:
    return T.ifft2(T.mul(k, mask))


def admm_block_forward(d: Tensor, z: Tensor, beta: Tensor, m, mask: np.ndarray, params: dict, prefix: str):
    """One learned iteration on a single coil.

    alpha = Gamma(E d, m)          # data-consistency deviation, k-space
    d'    = Pi(d, z - beta, E^H alpha)
    z'    = Lambda(d' + beta)
    beta' = beta + eta * (d' - z')

    Gamma, Pi and Lambda are residual CNNs on channel-concatenated inputs:
    Gamma adds to ``E d - m``, Pi to ``d``, Lambda to its input.
    """
    m = T.as_tensor(m, dtype=d.dtype)
    if not (d.shape == z.shape == beta.shape == m.shape) or d.shape[-2:] != mask.shape:
        raise DimensionError(
            f"admm block: d {d.shape}, z {z.shape}, beta {beta.shape}, m {m.shape}, mask {mask.shape}"
        )
    mask = np.asarray(mask, dtype=d.dtype)
    Ed = _E(d, mask)
    alpha = (Ed - m) + cnn(T.concat([Ed, m]), params, f"{prefix}/gamma")
    u = z - beta
    d_new = d + cnn(T.concat([d, u, _EH(alpha, mask)]), params, f"{prefix}/pi")
    s = d_new + beta
    z_new = s + cnn(s, params, f"{prefix}/lambda")
    beta_new = beta + T.mul(d_new - z_new, params[f"{prefix}/eta"])
    return d_new, z_new, beta_new


def coil_recon_forward(coil_k, mask: np.ndarray, params: dict, cfg: ModelConfig, stack: str,
                       return_kspace: bool = False):
    """Unrolled reconstruction of one coil from ``[2, h, w]`` k-space.

    Starts from ``d = z = ifft2(coil_k)``, ``beta = 0``; each block is
    followed by a DC layer on ``d``.
    """
    if cfg.recon_block == "d5c5":
        return d5c5_forward(coil_k, mask, params, cfg, stack, return_kspace)
    dtype = _param_dtype(params)
    k0 = T.as_tensor(coil_k, dtype=dtype)
    mask = np.asarray(mask, dtype=dtype)
    d = T.ifft2(k0)
    z = d
    beta = Tensor(np.zeros(d.shape, dtype=dtype))
    k = k0
    for b in range(cfg.n_blocks):
        d, z, beta = admm_block_forward(d, z, beta, k0, mask, params, f"{stack}/block{b}")
        k = dc_layer(T.fft2(d), k0, mask, cfg.dc_lambda)
        d = T.ifft2(k)
    return (d, k) if return_kspace else d


def d5c5_forward(coil_k, mask: np.ndarray, params: dict, cfg: ModelConfig, stack: str,
                 return_kspace: bool = False):
    """Cascade of residual CNNs, each followed by a DC layer."""
    dtype = _param_dtype(params)
    k0 = T.as_tensor(coil_k, dtype=dtype)
    mask = np.asarray(mask, dtype=dtype)
    x = T.ifft2(k0)
    k = k0
    for c in range(cfg.d5c5_cascades):
        x = x + cnn(x, params, f"{stack}/cascade{c}/cnn")
        k = dc_layer(T.fft2(x), k0, mask, cfg.dc_lambda)
        x = T.ifft2(k)
    return (x, k) if return_kspace else x


def combine_forward(coil_images: list[Tensor], params: dict) -> Tensor:
    return cnn(T.concat(coil_images, axis=0), params, "combine/head/cnn")


# --------------------------------------------------------------------------
# whole model


def to_planes(z: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Complex ``(..., h, w)`` array to ``(..., 2, h, w)`` real planes."""
    return np.stack([z.real, z.imag], axis=-3).astype(dtype)


def from_planes(a) -> np.ndarray:
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    return a[..., 0, :, :] + 1j * a[..., 1, :, :]


def _param_dtype(params: dict):
    for p in params.values():
        return p.dtype
    return np.float64


def _mask_2d(mask, nx: int, ny: int) -> np.ndarray:
    if isinstance(mask, SamplingMask):
        if mask.nt != 1:
            raise DimensionError(f"network input mask must have one frame, got nt={mask.nt}")
        return mask.kspace_mask(nx, 0)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape == (ny,):
        return np.broadcast_to(mask[None, :], (nx, ny)).copy()
    if mask.shape != (nx, ny):
        raise DimensionError(f"mask {mask.shape} vs k-space ({nx}, {ny})")
    return mask


def model_forward(kspace: np.ndarray, mask, params: dict, cfg: ModelConfig,
                  csm: CoilSensitivities | None = None, return_coils: bool = False):
    """Reconstruct one coil-combined image from multi-coil k-space.

    ``kspace`` is complex ``(nx, ny, nc)`` in FFT order; ``mask`` is a
    one-frame :class:`SamplingMask`, an ``(ny,)`` line mask (FFT order) or an
    ``(nx, ny)`` array. Returns a ``[2, nx, ny]`` tensor. In single-channel
    mode multi-coil input is first combined with ``csm`` and re-masked.
    With ``return_coils`` also returns the per-stack images and final
    DC k-space.
    """
    kspace = np.asarray(kspace)
    if kspace.ndim == 4 and kspace.shape[2] == 1:
        kspace = kspace[:, :, 0, :]
    if kspace.ndim != 3:
        raise DimensionError(f"k-space must be (nx, ny, nc), got {kspace.shape}")
    nx, ny, nc = kspace.shape
    m2 = _mask_2d(mask, nx, ny)
    dtype = _param_dtype(params)

    if cfg.mode == "single-channel":
        if nc > 1:
            if csm is None:
                raise ConfigError("single-channel mode needs coil maps to combine multi-coil input")
            kspace = (np_fft2(coil_combine(kspace * m2[:, :, None], csm)) * m2)[:, :, None]
        img, k = coil_recon_forward(to_planes(kspace[:, :, 0], dtype), m2, params, cfg, "single", True)
        return (img, [img], [k]) if return_coils else img

    if nc != cfg.nc:
        raise ConfigError(f"model built for nc={cfg.nc}, input has nc={nc}")
    images, kspaces = [], []
    for c, stack in enumerate(cfg.stacks):
        img, k = coil_recon_forward(to_planes(kspace[:, :, c], dtype), m2, params, cfg, stack, True)
        images.append(img)
        kspaces.append(k)
    out = combine_forward(images, params)
    return (out, images, kspaces) if return_coils else out
