import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cinerecon import config, tns
from cinerecon.cli import cmd_eval, cmd_prepare, cmd_report, cmd_train, main
from cinerecon.data import read_manifest
from cinerecon.errors import ConfigError
from cinerecon.metrics import MetricsReport, read_pgm

TINY = {
    "phantom.nx": 16,
    "phantom.ny": 16,
    "phantom.nt": 4,
    "phantom.count": 2,
    "coils.nc": 2,
    "acq.center_lines": 2,
    "retro.center_lines": 2,
    "test.center_lines": 2,
    "retro.draws": 2,
    "model.N": 1,
    "model.width": 4,
    "train.epochs": 2,
    "lps.iters": 5,
}


def tiny(**over):
    cfg = config.defaults()
    cfg.update(TINY)
    cfg.update(over)
    return config.validate(cfg)


def write_cfg(path, cfg):
    path.write_text(config.serialize(cfg))
    return path


# -- config ----------------------------------------------------------------


def test_defaults_roundtrip():
    cfg = config.defaults()
    assert config.parse(config.serialize(cfg)) == cfg
    assert config.serialize(cfg).count("\n") == len(config.SCHEMA)


def test_parse_comments_and_types():
    cfg = config.parse("# header\nseed = 7  # trailing\nmodel.dc_lambda=2.5\neval.lps=false\n\n")
    assert cfg["seed"] == 7 and cfg["model.dc_lambda"] == 2.5 and cfg["eval.lps"] is False


def test_infinity_roundtrip():
    cfg = config.parse("model.dc_lambda=inf\n")
    assert math.isinf(cfg["model.dc_lambda"])
    assert "model.dc_lambda=inf\n" in config.serialize(cfg)


@pytest.mark.parametrize("text", [
    "nonsense.key=1",
    "seed",
    "seed=abc",
    "acq.R=5",
    "acq.pattern=radial",
    "phantom.nx=24",
    "model.dc_lambda=0",
    "augment.patch=8,8,4",
    "augment.patch=8,8\naugment.stride=1,1",
    "eval.lps=maybe",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.parse(text)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 2**40),
    st.sampled_from([4, 8]),
    st.sampled_from(["uniform", "gaussian"]),
    st.floats(1e-6, 1e3, allow_nan=False),
    st.integers(1, 100),
    st.booleans(),
)
def test_config_roundtrip_property(seed, R, pattern, lam, epochs, lps):
    cfg = config.defaults()
    cfg.update({"seed": seed, "acq.R": R, "retro.pattern": pattern, "model.dc_lambda": lam,
                "train.epochs": epochs, "eval.lps": lps})
    assert config.parse(config.serialize(cfg)) == cfg


# -- exit codes ------------------------------------------------------------


def test_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("unknown=1\n")
    assert main(["prepare", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_exit_code_missing_config(tmp_path):
    assert main(["prepare", "--config", str(tmp_path / "nope.txt")]) == 4


def test_exit_code_missing_dataset(tmp_path):
    cfgp = write_cfg(tmp_path / "c.txt", tiny())
    assert main(["train", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 4


def test_exit_code_divergence_keeps_checkpoint(tmp_path):
    cfgp = write_cfg(tmp_path / "c.txt", tiny(**{"train.lr0": 1e30}))
    out = tmp_path / "o"
    assert main(["prepare", "--config", str(cfgp), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfgp), "--out", str(out)]) == 3
    manifest = read_manifest(out / "checkpoint" / "final" / "manifest.txt")
    assert manifest["status"] == "diverged"


def test_exit_code_checkpoint_mismatch(tmp_path):
    cfgp = write_cfg(tmp_path / "c.txt", tiny())
    out = tmp_path / "o"
    assert main(["prepare", "--config", str(cfgp), "--out", str(out)]) == 0
    assert main(["train", "--config", str(cfgp), "--out", str(out)]) == 0
    other = write_cfg(tmp_path / "d.txt", tiny(**{"coils.nc": 3}))
    assert main(["eval", "--config", str(other), "--out", str(out)]) == 4


def test_seed_override(tmp_path):
    cfgp = write_cfg(tmp_path / "c.txt", tiny())
    assert main(["prepare", "--config", str(cfgp), "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    assert config.load(tmp_path / "a" / "config.txt")["seed"] == 5


# -- subcommands -----------------------------------------------------------


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = tiny()
    cmd_prepare(cfg, root)
    cmd_train(cfg, root)
    cmd_eval(cfg, root)
    return root


def test_prepare_artifacts(run_dir):
    manifest = read_manifest(run_dir / "dataset" / "manifest.txt")
    assert manifest["pairs"] == "4"
    assert manifest["acq.pattern"] == "uniform"
    assert {"csm.tns", "pair_0_input.tns", "pair_3_mask.tns"} <= {p.name for p in (run_dir / "dataset").iterdir()}


def test_prepare_r8_gaussian_line_counts(tmp_path):
    cfg = tiny(**{"phantom.ny": 32, "phantom.nx": 32, "phantom.nt": 8, "acq.R": 8, "acq.center_lines": 0,
                  "retro.R": 8, "retro.center_lines": 2})
    cmd_prepare(cfg, tmp_path)
    manifest = read_manifest(tmp_path / "dataset" / "manifest.txt")
    assert set(manifest["acq.lines_per_frame"].split(",")) == {"4"}
    assert set(manifest["retro.lines_per_pair"].split(",")) == {"4"}


def test_prepare_reports_coverage_failure(tmp_path, caplog):
    cfgp = write_cfg(tmp_path / "c.txt", tiny(**{"phantom.nt": 2}))
    assert main(["prepare", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == 2
    assert "ky" in caplog.text


def test_train_artifacts(run_dir):
    lines = (run_dir / "loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,lr" and len(lines) == 3
    assert float(lines[2].split(",")[2]) == 0.001 * 0.98
    assert (run_dir / "checkpoint" / "best" / "manifest.txt").is_file()


def test_zero_lr_gives_flat_loss(tmp_path):
    cfg = tiny(**{"train.lr0": 0.0})
    cmd_prepare(cfg, tmp_path)
    cmd_train(cfg, tmp_path)
    rows = (tmp_path / "loss.csv").read_text().splitlines()[1:]
    assert len({r.split(",")[1] for r in rows}) == 1


def test_single_channel_checkpoint_has_no_combine(tmp_path):
    cfg = tiny(**{"model.mode": "single-channel"})
    cmd_prepare(cfg, tmp_path)
    cmd_train(cfg, tmp_path)
    ck = tmp_path / "checkpoint" / "final"
    assert not (ck / "combine").exists() and (ck / "single").is_dir()
    cmd_eval(cfg, tmp_path)
    assert (tmp_path / "eval" / "metrics.csv").is_file()


def test_eval_artifacts(run_dir):
    rep = MetricsReport.read_csv(run_dir / "eval" / "metrics.csv")
    assert rep.methods() == ["network", "zero-filled", "lps"]
    assert len(rep.rows) == 3 * 4
    truth = tns.load_complex(run_dir / "eval" / "truth.tns")
    assert truth.shape == (16, 16, 4)
    assert read_pgm(run_dir / "eval" / "network_yt.pgm").shape == (16, 4)
    assert read_pgm(run_dir / "eval" / "network_error.pgm").shape == (16, 16)


def test_eval_full_mask_on_training_phantom(tmp_path, run_dir):
    cfg = tiny(**{"test.pattern": "full", "test.phantom": "train"})
    cmd_eval(cfg, tmp_path, run_dir / "checkpoint" / "final")
    rep = MetricsReport.read_csv(tmp_path / "eval" / "metrics.csv")
    zf = [r.psnr_db for r in rep.rows if r.method == "zero-filled"]
    assert all(p == math.inf for p in zf)
    ck = tns.load_complex(tmp_path / "eval" / "recon_network.tns")
    assert np.all(np.isfinite(ck))


def test_report_single_dir_passthrough(tmp_path, run_dir):
    out, missing = cmd_report([run_dir / "eval"], tmp_path / "rep")
    assert not missing
    src = MetricsReport.read_csv(run_dir / "eval" / "metrics.csv")
    dst = MetricsReport.read_csv(out / "comparison.csv")
    assert [(r.method, r.volume, r.psnr_db) for r in src.rows] == [(r.method, r.volume, r.psnr_db) for r in dst.rows]


def test_report_two_dirs_keyed_by_method(tmp_path, run_dir):
    other = tmp_path / "other"
    cmd_eval(tiny(), other, run_dir / "checkpoint" / "final")
    out, missing = cmd_report([run_dir, other / "eval"], tmp_path / "rep")
    assert not missing
    rep = MetricsReport.read_csv(out / "comparison.csv")
    methods = rep.methods()
    assert methods[:3] == [f"{run_dir.name}/network", f"{run_dir.name}/zero-filled", f"{run_dir.name}/lps"]
    assert methods[3:] == ["other/network", "other/zero-filled", "other/lps"]
    vols = [[r.volume for r in rep.rows if r.method == m] for m in methods]
    assert all(v == vols[0] for v in vols)


def test_report_same_run_twice_gets_distinct_keys(tmp_path, run_dir):
    out, _ = cmd_report([run_dir, run_dir / "eval"], tmp_path / "rep")
    methods = MetricsReport.read_csv(out / "comparison.csv").methods()
    assert len(methods) == 6 and methods[3] == f"{run_dir.name}#2/network"


def test_report_montage_geometry(tmp_path, run_dir):
    out, _ = cmd_report([run_dir], tmp_path / "rep")
    img = read_pgm(out / "montage.pgm")
    th, tw = 16, 16  # largest tile: frame and error maps
    assert img.shape == (3 * th + 2 * 2, 3 * tw + 2 * 2)
    assert np.all(img[th : th + 2, :] == 255)
    assert np.all(img[:, tw : tw + 2] == 255)
    yt = read_pgm(run_dir / "eval" / "network_yt.pgm")
    assert np.array_equal(img[: yt.shape[0], 2 * (tw + 2) : 2 * (tw + 2) + yt.shape[1]], yt)


def test_report_missing_files_partial(tmp_path, run_dir):
    assert main(["report", str(run_dir), str(tmp_path / "absent"), "--out", str(tmp_path / "rep")]) == 4
    assert (tmp_path / "rep" / "comparison.csv").is_file()
    assert "absent" in (tmp_path / "rep" / "missing.txt").read_text()


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_reruns_are_byte_identical(tmp_path):
    cfg = tiny()
    trees = []
    for name in ("a", "b"):
        root = tmp_path / name
        cmd_prepare(cfg, root)
        cmd_train(cfg, root)
        cmd_eval(cfg, root)
        csv = root / "eval" / "metrics.csv"
        rep = MetricsReport.read_csv(csv)
        for r in rep.rows:
            r.runtime_s = 0.0
        rep.write_csv(csv, include_runtime=False)
        trees.append(_tree(root))
    assert trees[0].keys() == trees[1].keys()
    for key in trees[0]:
        assert trees[0][key] == trees[1][key], key
