import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cinerecon.data import CinePhantom, annulus_radius, generate_phantom
from cinerecon.errors import DimensionError
from cinerecon.metrics import (
    MetricsReport,
    error_map,
    montage,
    mse,
    psnr,
    read_pgm,
    second_moment_sigma,
    ssim,
    to_uint8,
    write_pgm,
    yt_profile,
)


def loop_psnr(ref, test):
    h, w = ref.shape
    acc = 0.0
    peak = 0.0
    for i in range(h):
        for j in range(w):
            acc += (ref[i, j] - test[i, j]) ** 2
            peak = max(peak, abs(ref[i, j]))
    return 10 * math.log10(peak**2 / (acc / (h * w)))


def loop_ssim(x, y, win=7, k1=0.01, k2=0.03, L=1.0):
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    h, w = x.shape
    vals = []
    n = win * win
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            px = [x[i + a, j + b] for a in range(win) for b in range(win)]
            py = [y[i + a, j + b] for a in range(win) for b in range(win)]
            mx, my = sum(px) / n, sum(py) / n
            vx = sum((p - mx) ** 2 for p in px) / n
            vy = sum((p - my) ** 2 for p in py) / n
            cxy = sum((p - mx) * (q - my) for p, q in zip(px, py)) / n
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


def loop_sigma(img):
    flat = [float(v) for v in img.ravel()]
    lo, hi = min(flat), max(flat)
    p = [255 * (v - lo) / (hi - lo) for v in flat]
    mu = sum(p) / len(p)
    return math.sqrt(sum((v - mu) ** 2 for v in p) / len(p))


# -- psnr ------------------------------------------------------------------


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).random((8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_closed_form():
    assert psnr(np.ones((4, 4)), np.full((4, 4), 0.9)) == pytest.approx(20.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_psnr_matches_loop(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 12, 10))
    assert psnr(a, b) == pytest.approx(loop_psnr(a, b), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_psnr_monotone_in_mse(seed, e1, e2):
    ref = np.random.default_rng(seed).random((8, 8))
    ref[0, 0] = 1.0
    a, b = ref + e1, ref + e2
    assert mse(ref, a) >= 0
    if mse(ref, a) < mse(ref, b):
        assert psnr(ref, a) > psnr(ref, b)


def test_mse_zero_iff_identical():
    a = np.arange(4.0)
    assert mse(a, a) == 0 and mse(a, a + 1e-9) > 0


# -- ssim ------------------------------------------------------------------


def test_ssim_identical_is_one():
    a = np.random.default_rng(1).random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negated_is_bounded():
    a = np.random.default_rng(2).random((16, 16))
    a -= a.mean()
    s = ssim(a, -a)
    assert -1 <= s <= 1 and s < ssim(a, a)


@pytest.mark.parametrize("seed", range(3))
def test_ssim_matches_loop(seed):
    rng = np.random.default_rng(10 + seed)
    a = rng.random((16, 16))
    b = np.clip(a + 0.2 * rng.standard_normal((16, 16)), 0, 1)
    assert ssim(a, b) == pytest.approx(loop_ssim(a, b), abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_ssim_symmetric(seed):
    a, b = np.random.default_rng(seed).random((2, 10, 9))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)
    assert -1 <= ssim(a, b) <= 1


def test_ssim_too_small():
    with pytest.raises(DimensionError):
        ssim(np.zeros((5, 5)), np.zeros((5, 5)))


# -- sigma -----------------------------------------------------------------


def test_sigma_constant_is_zero():
    assert second_moment_sigma(np.full((5, 5), 3.3)) == 0.0


def test_sigma_two_level_half_half():
    img = np.zeros((4, 4))
    img[:2] = 255
    assert second_moment_sigma(img) == pytest.approx(127.5, abs=1e-12)


def test_sigma_gain_invariant():
    a = np.random.default_rng(3).random((8, 8))
    assert second_moment_sigma(a) == pytest.approx(second_moment_sigma(7.5 * a), abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_sigma_matches_loop(seed):
    a = np.random.default_rng(20 + seed).random((9, 7))
    assert second_moment_sigma(a) == pytest.approx(loop_sigma(a), abs=1e-8)


def test_sigma_empty():
    with pytest.raises(DimensionError):
        second_moment_sigma(np.zeros((0,)))


# -- profiles / error maps -------------------------------------------------


def test_yt_static_columns_identical():
    vol = np.repeat(np.random.default_rng(4).random((6, 5, 1)), 4, axis=2)
    prof = yt_profile(vol, 2)
    assert prof.shape == (5, 4)
    assert all(np.array_equal(prof[:, t], prof[:, 0]) for t in range(4))


def test_yt_single_frame():
    assert yt_profile(np.ones((4, 4, 1)), 0).shape == (4, 1)


def test_yt_out_of_range():
    with pytest.raises(IndexError):
        yt_profile(np.ones((4, 4, 2)), 4)


def test_yt_tracks_annulus_radius():
    p = CinePhantom(nx=32, ny=32, nt=8, phase_strength=0.0)
    prof = yt_profile(generate_phantom(p), p.ring_center[0])
    cy = p.ring_center[1]
    y = np.arange(32)
    for t in range(8):
        r = annulus_radius(p, t)
        pool = np.isclose(prof[:, t], p.pool_intensity)
        assert np.array_equal(pool, np.abs(y - cy) < r)
        ring = np.isclose(prof[:, t], p.ring_intensity)
        assert np.array_equal(ring, (np.abs(y - cy) >= r) & (np.abs(y - cy) < r + p.thickness))


def test_error_map_values():
    a = np.zeros((2, 2))
    assert not error_map(a, a).any()
    assert np.all(error_map(a, a + 0.5) == 0.25)


def test_error_map_matches_loop():
    rng = np.random.default_rng(5)
    a, b = rng.random((2, 6, 6)) * 0.4
    out = error_map(a, b)
    for i in range(6):
        for j in range(6):
            assert out[i, j] == min(max(abs(a[i, j] - b[i, j]), 0.0), 0.25)


# -- exports ---------------------------------------------------------------


def test_to_uint8_mapping():
    assert list(to_uint8(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]), 0, 1)) == [0, 0, 128, 255, 255]


def test_pgm_roundtrip(tmp_path):
    img = (np.arange(12) * 20).astype(np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_montage_geometry():
    t = np.full((4, 5), 7, np.uint8)
    out = montage([[t, t, t], [t, t]], sep=2)
    assert out.shape == (2 * 4 + 2, 3 * 5 + 2 * 2)
    assert np.all(out[4:6, :] == 255)
    assert np.all(out[:, 5:7] == 255) and np.all(out[:, 12:14] == 255)
    assert np.all(out[:4, :5] == 7) and np.all(out[6:, 14:] == 0)


# -- report ----------------------------------------------------------------


def test_report_summary_matches_recomputation(tmp_path):
    rng = np.random.default_rng(6)
    rep = MetricsReport()
    refs = [rng.random((8, 8)) for _ in range(3)]
    tests = [np.clip(r + 0.05 * rng.standard_normal(r.shape), 0, None) for r in refs]
    for i, (r, t) in enumerate(zip(refs, tests)):
        rep.add("net", f"v{i}", r, t, ssim_window=7)
    s = rep.summary("net")
    ps = [psnr(r / r.max(), t / r.max(), peak=1.0) for r, t in zip(refs, tests)]
    assert s["psnr_db"][0] == pytest.approx(np.mean(ps), abs=1e-12)
    assert s["psnr_db"][1] == pytest.approx(np.std(ps), abs=1e-12)
    rep.write_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "method,volume,mse,psnr_db,ssim,sigma,runtime_s"
    assert lines[-2].startswith("net,mean,") and lines[-1].startswith("net,std,")
    back = MetricsReport.read_csv(tmp_path / "m.csv")
    assert [r.psnr_db for r in back.rows] == [r.psnr_db for r in rep.rows]
