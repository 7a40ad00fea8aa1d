"""Optimisation loop: MSE loss, Adam, per-epoch exponential LR decay."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from . import tns
from .data import Dataset, read_manifest, write_manifest
from .errors import CheckpointError, ConfigError, DimensionError, NumericalError
from .network import ModelConfig, from_planes, model_forward, param_shapes, to_planes
from .tensor import Tensor

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "TrainResult",
    "TrainingDiverged",
    "xavier_init",
    "init_params",
    "mse_loss",
    "adam_step",
    "lr_at",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "worker_count",
]

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    decay: float = 0.98
    batch: int = 2
    epochs: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr0 < 0:
            raise ConfigError(f"lr0 must be >= 0, got {self.lr0}")
        if not 0 < self.decay <= 1:
            raise ConfigError(f"decay must lie in (0, 1], got {self.decay}")
        if self.batch < 1 or self.epochs < 1:
            raise ConfigError("batch and epochs must be >= 1")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def worker_count() -> int:
    """Worker cap from ``RECON_THREADS`` (default: CPU count, at most 4)."""
    env = os.environ.get("RECON_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"RECON_THREADS must be an integer, got {env!r}") from None
    return max(1, min(4, os.cpu_count() or 1))


def xavier_init(shape, seed, dtype=np.float32) -> np.ndarray:
    """Glorot-uniform draw in ``+-sqrt(6 / (fan_in + fan_out))``.

    For conv kernels ``(c_out, c_in, k, k)`` the receptive field multiplies
    both fans.
    """
    shape = tuple(shape)
    if len(shape) < 2:
        raise ConfigError(f"xavier_init needs at least 2 dims, got {shape}")
    receptive = int(np.prod(shape[2:], dtype=np.int64)) if len(shape) > 2 else 1
    fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    rng = np.random.default_rng(seed)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> dict[str, Tensor]:
    """Xavier weights, zero biases, unit step sizes."""
    params = {}
    for i, (name, shape) in enumerate(param_shapes(cfg).items()):
        if name.endswith(".w"):
            data = xavier_init(shape, np.random.SeedSequence([seed, i]), dtype)
        elif name.endswith("eta"):
            data = np.ones(shape, dtype=dtype)
        else:
            data = np.zeros(shape, dtype=dtype)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def mse_loss(pred, target) -> Tensor:
    """Mean squared error over real and imaginary planes.

    ``pred`` is a ``[2, h, w]`` tensor; ``target`` a complex ``(h, w)`` array
    or a matching real tensor/array.
    """
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    if np.iscomplexobj(target):
        target = to_planes(np.asarray(target), pred.dtype)
    if tuple(np.shape(target.data if isinstance(target, Tensor) else target)) != pred.shape:
        raise DimensionError(f"mse: pred {pred.shape} vs target {np.shape(target)}")
    return T.mse(pred, target)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    return cfg.lr0 * cfg.decay**epoch


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``.

    ``grads`` maps parameter name to gradient array.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {name} ({bad} entries) at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = b1 * state.m[name] + (1 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - update).astype(p.data.dtype)


# --------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict
    state: OptimizerState
    losses: list[float]
    lrs: list[float]
    best_params: dict
    best_loss: float


class TrainingDiverged(NumericalError):
    def __init__(self, message, last_good: TrainResult):
        super().__init__(message)
        self.last_good = last_good


def _snapshot(params: dict) -> dict:
    return {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in params.items()}


def _item_loss_and_grads(pair, params, model_cfg, csm):
    pred = model_forward(pair.input, pair.mask, params, model_cfg, csm=csm)
    loss = mse_loss(pred, pair.target)
    grads = T.backward(loss)
    return float(loss.data), {name: grads.get(p) for name, p in params.items()}


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Dataset, params: dict | None = None,
          state: OptimizerState | None = None, dtype=np.float32, workers: int | None = None,
          progress=None) -> TrainResult:
    """Mini-batch training; returns final and best-epoch parameters.

    Batch items run on independent graphs (optionally on a thread pool) and
    their gradients are averaged in dataset order, so results do not depend
    on the worker count. Epoch ``e`` shuffles with seed ``(seed, e)``.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    if params is None:
        params = init_params(model_cfg, train_cfg.seed, dtype)
    if state is None:
        state = OptimizerState(beta1=train_cfg.beta1, beta2=train_cfg.beta2, eps=train_cfg.eps)
    workers = workers or worker_count()
    csm = dataset.csm
    losses, lrs = [], []
    best_loss, best = math.inf, _snapshot(params)
    last_good = _snapshot(params)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for epoch in range(train_cfg.epochs):
            lr = lr_at(epoch, train_cfg)
            order = np.random.default_rng([train_cfg.seed, epoch]).permutation(len(dataset))
            epoch_losses = []
            for start in range(0, len(order), train_cfg.batch):
                batch = [dataset.pairs[i] for i in order[start : start + train_cfg.batch]]
                job = lambda pair: _item_loss_and_grads(pair, params, model_cfg, csm)  # noqa: E731
                try:
                    results = list(pool.map(job, batch)) if pool else [job(p) for p in batch]
                except NumericalError as exc:
                    raise TrainingDiverged(
                        f"epoch {epoch}: {exc}",
                        TrainResult(last_good, state, losses, lrs, best, best_loss),
                    ) from exc
                grads = {}
                for name, p in params.items():
                    acc = np.zeros_like(p.data)
                    for _, g in results:
                        if g[name] is not None:
                            acc = acc + g[name]
                    grads[name] = acc / len(results)
                batch_losses = [loss for loss, _ in results]
                if not all(math.isfinite(x) for x in batch_losses):
                    raise TrainingDiverged(
                        f"epoch {epoch}: loss is not finite",
                        TrainResult(last_good, state, losses, lrs, best, best_loss),
                    )
                epoch_losses.extend(batch_losses)
                adam_step(params, grads, state, lr)
            mean_loss = float(np.mean(epoch_losses))
            losses.append(mean_loss)
            lrs.append(lr)
            last_good = _snapshot(params)
            if mean_loss < best_loss:
                best_loss, best = mean_loss, last_good
            log.debug("epoch %d  loss %.6g  lr %.3g", epoch, mean_loss, lr)
            if progress is not None:
                progress(epoch, mean_loss, lr)
    finally:
        if pool:
            pool.shutdown()
    return TrainResult(params, state, losses, lrs, best, best_loss)


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory, params: dict, model_cfg: ModelConfig, state: OptimizerState | None = None,
                    extra: dict | None = None) -> None:
    """One TNS1 file per tensor plus ``manifest.txt`` echoing the config."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, p in params.items():
        tns.save(d / f"{name}.tns", p.data)
    manifest = {"format_version": CHECKPOINT_VERSION, "dtype": str(next(iter(params.values())).dtype)}
    manifest.update({f"model.{k}": v for k, v in model_cfg.as_dict().items()})
    if state is not None:
        manifest["optim.step"] = state.step
        manifest["optim.beta1"] = repr(state.beta1)
        manifest["optim.beta2"] = repr(state.beta2)
        manifest["optim.eps"] = repr(state.eps)
        for name in state.m:
            tns.save(d / "optim" / "m" / f"{name}.tns", state.m[name])
            tns.save(d / "optim" / "v" / f"{name}.tns", state.v[name])
    if extra:
        manifest.update(extra)
    write_manifest(d / "manifest.txt", manifest)


def _parse_model_cfg(manifest: dict) -> ModelConfig:
    fields = {}
    for key, default in asdict(ModelConfig()).items():
        raw = manifest.get(f"model.{key}")
        if raw is None:
            continue
        if isinstance(default, bool):
            fields[key] = raw == "True"
        elif isinstance(default, int):
            fields[key] = int(raw)
        elif isinstance(default, float):
            fields[key] = float(raw)
        else:
            fields[key] = raw
    return ModelConfig(**fields)


def load_checkpoint(directory) -> tuple[dict, ModelConfig, OptimizerState | None]:
    d = Path(directory)
    if not (d / "manifest.txt").is_file():
        raise CheckpointError(f"{d} is not a checkpoint (no manifest.txt)")
    manifest = read_manifest(d / "manifest.txt")
    if int(manifest.get("format_version", -1)) != CHECKPOINT_VERSION:
        raise CheckpointError(f"{d}: unsupported checkpoint version {manifest.get('format_version')}")
    cfg = _parse_model_cfg(manifest)
    params = {}
    for name in param_shapes(cfg):
        path = d / f"{name}.tns"
        if not path.is_file():
            raise CheckpointError(f"{d}: missing tensor {name}")
        params[name] = Tensor(tns.load(path), requires_grad=True, name=name)
    state = None
    if "optim.step" in manifest:
        state = OptimizerState(step=int(manifest["optim.step"]), beta1=float(manifest["optim.beta1"]),
                               beta2=float(manifest["optim.beta2"]), eps=float(manifest["optim.eps"]))
        for name in params:
            mp = d / "optim" / "m" / f"{name}.tns"
            if mp.is_file():
                state.m[name] = tns.load(mp)
                state.v[name] = tns.load(d / "optim" / "v" / f"{name}.tns")
    return params, cfg, state


def predict(kspace, mask, params, cfg, csm=None) -> np.ndarray:
    """Complex ``(nx, ny)`` reconstruction (no graph retained by callers)."""
    return from_planes(model_forward(kspace, mask, params, cfg, csm=csm))
