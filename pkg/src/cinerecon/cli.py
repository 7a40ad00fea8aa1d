"""Experiment driver: ``recon prepare|train|eval|report``.

Artifacts under the output directory::

    config.txt               normalised config echo
    dataset/                 prepare: training pairs, csm, manifest.txt
    checkpoint/final, best   train: parameter tensors + manifest.txt
    loss.csv                 train: epoch,mean_loss,lr
    eval/                    eval: metrics.csv, recon_*.tns, *.pgm
    report/                  report: comparison.csv, montage.pgm

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import tns
from .baselines import LpsConfig, lps_recon, zero_filled
from .data import (
    Dataset,
    MaskSpec,
    build_training_pairs,
    generate_phantom,
    load_dataset,
    make_mask,
    merge_frames,
    random_phantom,
    save_dataset,
    shear_augment,
    write_manifest,
)
from .encoding import (
    CoilSensitivities,
    EncodingConfig,
    coil_combine,
    encode,
    fft2,
    simulate_coil_sensitivities,
)
from .errors import CheckpointError, NumericalError, ReconError, StorageError
from .metrics import (
    CSV_FIELDS,
    MetricsReport,
    error_map,
    montage,
    read_pgm,
    to_uint8,
    write_pgm,
    yt_profile,
)
from .network import ModelConfig
from .training import (
    TrainConfig,
    TrainingDiverged,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)

log = logging.getLogger("cinerecon")

__all__ = ["main", "cmd_prepare", "cmd_train", "cmd_eval", "cmd_report"]


# --------------------------------------------------------------------------
# derived seeds and settings


def _phantom_seed(cfg, i):
    return 1_000_000 * cfg["seed"] + 100 + i


def _test_phantom_seed(cfg):
    return 1_000_000 * cfg["seed"] + 900_000


def _retro_seed(cfg, i):
    return 1_000_000 * cfg["seed"] + 10_000 * (i + 1)


def _acq_seed(cfg, i):
    return 1_000_000 * cfg["seed"] + 500_000 + 1_000 * i


def _test_mask_seed(cfg):
    return 1_000_000 * cfg["seed"] + 950_000


def _coil_seed(cfg):
    return 1_000_000 * cfg["seed"] + 1


def _extents(cfg):
    if cfg["augment.patch"]:
        return config_mod.triple(cfg["augment.patch"])
    return cfg["phantom.nx"], cfg["phantom.ny"], cfg["phantom.nt"]


def model_config(cfg) -> ModelConfig:
    return ModelConfig(
        mode=cfg["model.mode"],
        recon_block=cfg["model.recon_block"],
        n_blocks=cfg["model.N"],
        width=cfg["model.width"],
        depth=cfg["model.depth"],
        dc_lambda=cfg["model.dc_lambda"],
        nc=cfg["coils.nc"],
    )


def train_config(cfg) -> TrainConfig:
    return TrainConfig(lr0=cfg["train.lr0"], decay=cfg["train.decay"], batch=cfg["train.batch"],
                       epochs=cfg["train.epochs"], seed=cfg["seed"])


def coil_maps(cfg) -> CoilSensitivities:
    nx, ny, _ = _extents(cfg)
    return simulate_coil_sensitivities(nx, ny, cfg["coils.nc"], _coil_seed(cfg))


def _out(cfg, out) -> Path:
    return Path(out) if out else Path(cfg["output_dir"])


def _training_volumes(cfg):
    """Yield (label, volume) for every training series after augmentation."""
    for i in range(cfg["phantom.count"]):
        vol = generate_phantom(random_phantom(cfg["phantom.nx"], cfg["phantom.ny"], cfg["phantom.nt"],
                                              _phantom_seed(cfg, i)))
        if cfg["augment.patch"]:
            crops = shear_augment(vol, config_mod.triple(cfg["augment.patch"]),
                                  config_mod.triple(cfg["augment.stride"]))
            for j, crop in enumerate(crops):
                yield f"{i}.{j}", np.ascontiguousarray(crop)
        else:
            yield str(i), vol


# --------------------------------------------------------------------------
# subcommands


def cmd_prepare(cfg: dict, out=None) -> Path:
    """Phantoms -> interleaved acquisition -> merge -> retrospective pairs."""
    root = _out(cfg, out)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.txt").write_text(config_mod.serialize(cfg))
    nx, ny, nt = _extents(cfg)
    csm = coil_maps(cfg)
    acq_spec = MaskSpec(cfg["acq.pattern"], cfg["acq.R"], cfg["acq.center_lines"])
    retro_spec = MaskSpec(cfg["retro.pattern"], cfg["retro.R"], cfg["retro.center_lines"])
    single = cfg["model.mode"] == "single-channel"
    pairs, acq_counts, labels = [], [], []
    for idx, (label, vol) in enumerate(_training_volumes(cfg)):
        mask = make_mask(acq_spec, ny, nt, _acq_seed(cfg, idx))
        acq_counts.append(mask.lines_per_frame())
        m = encode(vol, EncodingConfig(mask, csm))
        full = merge_frames(m, mask)[:, :, 0, :]
        pair_csm = csm
        if single:
            full = fft2(coil_combine(full, csm))[:, :, None]
            pair_csm = CoilSensitivities(np.ones((nx, ny, 1), np.complex128))
        ds = build_training_pairs(full, pair_csm, retro_spec, cfg["retro.draws"], _retro_seed(cfg, idx))
        pairs.extend(ds.pairs)
        labels.append(label)
    manifest = {
        "seed": cfg["seed"],
        "nx": nx, "ny": ny, "nt": nt, "nc": cfg["coils.nc"],
        "mode": cfg["model.mode"],
        "acq.pattern": acq_spec.pattern, "acq.R": acq_spec.R, "acq.center_lines": acq_spec.center_lines,
        "acq.lines_per_frame": ",".join(str(int(c)) for c in np.concatenate(acq_counts)),
        "retro.pattern": retro_spec.pattern, "retro.R": retro_spec.R,
        "retro.center_lines": retro_spec.center_lines, "retro.draws": cfg["retro.draws"],
        "retro.lines_per_pair": ",".join(str(int(p.mask.pattern.sum())) for p in pairs),
        "volumes": ",".join(labels),
        "phantom_seeds": ",".join(str(_phantom_seed(cfg, i)) for i in range(cfg["phantom.count"])),
    }
    dataset_dir = root / "dataset"
    save_dataset(Dataset(pairs, csm, manifest), dataset_dir)
    log.info("prepared %d pairs in %s", len(pairs), dataset_dir)
    return dataset_dir


def _write_loss_csv(path: Path, losses, lrs):
    lines = ["epoch,mean_loss,lr"] + [f"{e},{l!r},{r!r}" for e, (l, r) in enumerate(zip(losses, lrs))]
    path.write_text("\n".join(lines) + "\n")


def cmd_train(cfg: dict, out=None, dataset_dir=None) -> Path:
    root = _out(cfg, out)
    dataset = load_dataset(dataset_dir or root / "dataset")
    mcfg, tcfg = model_config(cfg), train_config(cfg)
    ckpt = root / "checkpoint"
    try:
        res = train(mcfg, tcfg, dataset,
                    progress=lambda e, l, lr: log.info("epoch %d/%d  loss %.6g  lr %.4g", e + 1, tcfg.epochs, l, lr))
    except TrainingDiverged as exc:
        good = exc.last_good
        save_checkpoint(ckpt / "final", good.params, mcfg, good.state, {"status": "diverged"})
        _write_loss_csv(root / "loss.csv", good.losses, good.lrs)
        raise
    save_checkpoint(ckpt / "final", res.params, mcfg, res.state,
                    {"status": "ok", "final_loss": repr(res.losses[-1])})
    save_checkpoint(ckpt / "best", res.best_params, mcfg, None, {"status": "ok", "best_loss": repr(res.best_loss)})
    _write_loss_csv(root / "loss.csv", res.losses, res.lrs)
    log.info("loss %.6g -> %.6g", res.losses[0], res.losses[-1])
    return ckpt


def _test_series(cfg):
    nx, ny, nt = _extents(cfg)
    if cfg["test.phantom"] == "train":
        return next(iter(_training_volumes(cfg)))[1], random_phantom(
            cfg["phantom.nx"], cfg["phantom.ny"], cfg["phantom.nt"], _phantom_seed(cfg, 0))
    p = random_phantom(nx, ny, nt, _test_phantom_seed(cfg))
    return generate_phantom(p), p


def _export_images(outdir: Path, name: str, truth, recon, x_index: int, err_max: float):
    scale = float(np.abs(truth).max()) or 1.0
    write_pgm(outdir / f"{name}_frame.pgm", to_uint8(np.abs(recon[:, :, 0]) / scale, 0.0, 1.0))
    write_pgm(outdir / f"{name}_yt.pgm", to_uint8(yt_profile(recon, x_index) / scale, 0.0, 1.0))
    if name != "truth":
        err = error_map(np.abs(truth[:, :, 0]) / scale, np.abs(recon[:, :, 0]) / scale, (0.0, err_max))
        write_pgm(outdir / f"{name}_error.pgm", to_uint8(err, 0.0, err_max))
        yt_err = error_map(yt_profile(truth, x_index) / scale, yt_profile(recon, x_index) / scale, (0.0, err_max))
        write_pgm(outdir / f"{name}_yt_error.pgm", to_uint8(yt_err, 0.0, err_max))


def cmd_eval(cfg: dict, out=None, checkpoint=None) -> Path:
    """Per-frame (unmerged) reconstruction of a test series with every method."""
    root = _out(cfg, out)
    params, mcfg, _ = load_checkpoint(checkpoint or root / "checkpoint" / "final")
    if mcfg.nc != cfg["coils.nc"] or mcfg.mode != cfg["model.mode"]:
        raise CheckpointError(
            f"checkpoint built for nc={mcfg.nc}, mode={mcfg.mode}; config has "
            f"nc={cfg['coils.nc']}, mode={cfg['model.mode']}"
        )
    outdir = root / "eval"
    outdir.mkdir(parents=True, exist_ok=True)
    csm = coil_maps(cfg)
    truth, phantom = _test_series(cfg)
    nx, ny, nt = truth.shape
    spec = MaskSpec(cfg["test.pattern"], cfg["test.R"], cfg["test.center_lines"])
    mask = make_mask(spec, ny, nt, _test_mask_seed(cfg))
    kspace = encode(truth, EncodingConfig(mask, csm))
    reference = coil_combine(encode(truth, EncodingConfig(make_mask(MaskSpec("full"), ny, nt, 0), csm)), csm)

    report = MetricsReport()
    recons = {}
    win = cfg["metrics.ssim_window"]

    net = np.empty_like(truth)
    zf = np.empty_like(truth)
    for t in range(nt):
        t0 = time.perf_counter()
        net[:, :, t] = predict(kspace[:, :, t, :], mask.frame(t), params, mcfg, csm)
        report.add("network", f"frame{t:02d}", reference[:, :, t], net[:, :, t],
                   time.perf_counter() - t0, win)
    for t in range(nt):
        t0 = time.perf_counter()
        zf[:, :, t] = zero_filled(kspace[:, :, t : t + 1, :], EncodingConfig(mask.frame(t), csm))[:, :, 0]
        report.add("zero-filled", f"frame{t:02d}", reference[:, :, t], zf[:, :, t],
                   time.perf_counter() - t0, win)
    recons["network"], recons["zero-filled"] = net, zf
    if cfg["eval.lps"] and nt >= 2:
        t0 = time.perf_counter()
        lps = lps_recon(kspace, EncodingConfig(mask, csm),
                        LpsConfig(cfg["lps.lambda_l"], cfg["lps.lambda_s"], cfg["lps.iters"]))
        per_frame = (time.perf_counter() - t0) / nt
        for t in range(nt):
            report.add("lps", f"frame{t:02d}", reference[:, :, t], lps[:, :, t], per_frame, win)
        recons["lps"] = lps

    report.write_csv(outdir / "metrics.csv")
    tns.save(outdir / "truth.tns", reference)
    tns.save(outdir / "mask.tns", mask.pattern)
    x_index = int(np.clip(phantom.ring_center[0], 0, nx - 1)) if cfg["test.phantom"] == "heldout" else nx // 2
    _export_images(outdir, "truth", reference, reference, x_index, cfg["metrics.error_max"])
    for name, vol in recons.items():
        tns.save(outdir / f"recon_{name}.tns", vol)
        _export_images(outdir, name, reference, vol, x_index, cfg["metrics.error_max"])
    for name in report.methods():
        s = report.summary(name)
        log.info("%-12s PSNR %.2f +- %.2f dB  SSIM %.4f", name, s["psnr_db"][0], s["psnr_db"][1], s["ssim"][0])
    return outdir


def _find_metrics(d: Path) -> Path | None:
    for cand in (d / "metrics.csv", d / "eval" / "metrics.csv"):
        if cand.is_file():
            return cand
    return None


def _run_label(d: Path) -> str:
    # "<run>/eval" is labelled by the run directory
    return d.parent.name if d.name == "eval" and d.parent.name else d.name


def cmd_report(result_dirs, out) -> tuple[Path, list[str]]:
    """Merge eval results into ``comparison.csv`` and ``montage.pgm``.

    Methods keep their names unless two directories share one, in which
    case they become ``<run name>/<method>`` (``#2``, ``#3``... mark
    repeated run names). Within each method block rows
    follow the first directory's volume order. The montage has one row per
    method with tiles ``frame | error | y-t``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    missing: list[str] = []
    loaded = []
    for d in map(Path, result_dirs):
        path = _find_metrics(d)
        if path is None:
            missing.append(str(d / "metrics.csv"))
            continue
        loaded.append((d, path.parent, MetricsReport.read_csv(path)))
    counts: dict[str, int] = {}
    for _, _, rep in loaded:
        for m in rep.methods():
            counts[m] = counts.get(m, 0) + 1

    labels, seen = [], {}
    for d, _, _ in loaded:
        base = _run_label(d)
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")

    merged = MetricsReport()
    volume_order: list[str] = []
    tiles = []
    for (d, evdir, rep), label in zip(loaded, labels):
        for r in rep.rows:
            if r.volume not in volume_order:
                volume_order.append(r.volume)
        for m in rep.methods():
            key = m if counts[m] == 1 else f"{label}/{m}"
            rows = sorted((r for r in rep.rows if r.method == m), key=lambda r: volume_order.index(r.volume))
            for r in rows:
                r.method = key
                merged.rows.append(r)
            row = []
            for suffix in ("frame", "error", "yt"):
                pgm = evdir / f"{m}_{suffix}.pgm"
                if pgm.is_file():
                    row.append(read_pgm(pgm))
                else:
                    missing.append(str(pgm))
                    row.append(np.zeros((1, 1), np.uint8))
            tiles.append(row)
    merged.write_csv(out / "comparison.csv")
    if tiles:
        write_pgm(out / "montage.pgm", montage(tiles))
    if missing:
        (out / "missing.txt").write_text("\n".join(missing) + "\n")
    return out, missing


# --------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recon", description="Unsupervised multi-coil cine reconstruction")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("prepare", "train", "eval", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name != "report")
        sp.add_argument("--out", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
        if name == "eval":
            sp.add_argument("--checkpoint", type=Path, default=None)
        if name == "train":
            sp.add_argument("--dataset", type=Path, default=None)
        if name == "report":
            sp.add_argument("results", nargs="+", type=Path)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        cfg = config_mod.load(args.config) if args.config else config_mod.defaults()
        if args.seed is not None:
            if args.seed < 0:
                raise config_mod.ConfigError("--seed must be non-negative")
            cfg["seed"] = args.seed
        if args.command == "prepare":
            cmd_prepare(cfg, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.out, args.dataset)
        elif args.command == "eval":
            cmd_eval(cfg, args.out, args.checkpoint)
        else:
            out = args.out or _out(cfg, None) / "report"
            _, missing = cmd_report(args.results, out)
            if missing:
                for m in missing:
                    log.error("missing: %s", m)
                return StorageError.exit_code
    except ReconError as exc:
        log.error("error: %s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return StorageError.exit_code
    except (FloatingPointError, OverflowError) as exc:
        log.error("numeric failure: %s", exc)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
