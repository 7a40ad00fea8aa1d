import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cinerecon.baselines import LpsConfig, lps_objective, lps_recon, lps_solve, soft_threshold, svt, zero_filled
from cinerecon.data import generate_phantom, random_phantom
from cinerecon.encoding import (
    EncodingConfig,
    encode,
    full_mask,
    make_gaussian_random_mask,
    make_uniform_interleaved_mask,
    simulate_coil_sensitivities,
)
from cinerecon.errors import ConfigError
from cinerecon.metrics import psnr


def svt_oracle(a, tau):
    """SVT through the eigen-decomposition of A^H A (no SVD)."""
    w, v = np.linalg.eigh(a.conj().T @ a)
    s = np.sqrt(np.clip(w, 0, None))
    gain = np.where(s > 0, np.maximum(s - tau, 0) / np.where(s > 0, s, 1), 0)
    return a @ (v * gain) @ v.conj().T


def singular_values(a):
    return np.sqrt(np.clip(np.linalg.eigvalsh(a.conj().T @ a), 0, None))[::-1]


def static_series(n=16, nt=8, seed=3):
    p = random_phantom(n, n, nt, seed)
    p.amp = 0.0
    return generate_phantom(p)


# -- zero-filled -----------------------------------------------------------


def test_zero_filled_full_mask_is_truth():
    vol = generate_phantom(random_phantom(16, 16, 4, 0))
    cfg = EncodingConfig(full_mask(16, 4), simulate_coil_sensitivities(16, 16, 3))
    np.testing.assert_allclose(zero_filled(encode(vol, cfg), cfg), vol, atol=1e-12)


def test_zero_filled_zero_data():
    cfg = EncodingConfig(full_mask(8, 2), simulate_coil_sensitivities(8, 8, 2))
    assert not zero_filled(np.zeros((8, 8, 2, 2), complex), cfg).any()


def test_zero_filled_undersampled_is_worse():
    vol = generate_phantom(random_phantom(32, 32, 4, 1))
    csm = simulate_coil_sensitivities(32, 32, 4)
    full = EncodingConfig(full_mask(32, 4), csm)
    under = EncodingConfig(make_uniform_interleaved_mask(4, 32, 4, 4), csm)
    ref = np.abs(vol)
    p_full = psnr(ref, np.abs(zero_filled(encode(vol, full), full)))
    p_under = psnr(ref, np.abs(zero_filled(encode(vol, under), under)))
    assert p_under < p_full


# -- thresholds ------------------------------------------------------------


@pytest.mark.parametrize("shape", [(8, 8), (8, 3), (3, 8), (6, 5)])
def test_svt_matches_eigen_oracle(shape):
    rng = np.random.default_rng(sum(shape))
    a = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    s = singular_values(a)
    tau = float(np.median(s))
    out = svt(a, tau)
    np.testing.assert_allclose(out, svt_oracle(a, tau), atol=1e-8)
    k = min(shape)
    # squared values: eigvalsh resolves sigma^2, not sigma, near zero
    np.testing.assert_allclose(singular_values(out)[:k] ** 2, np.maximum(s[:k] - tau, 0) ** 2, atol=1e-8)


def test_svt_infinite_threshold():
    assert not svt(np.ones((4, 3)), math.inf).any()


def test_soft_threshold_complex():
    x = np.array([3 + 4j, 0.5, -2.0, 0.0])
    np.testing.assert_allclose(soft_threshold(x, 1.0), [2.4 + 3.2j, 0, -1.0, 0])
    assert not soft_threshold(x, math.inf).any()


# -- L+S solver ------------------------------------------------------------


def _problem(seed=0, nt=6):
    rng = np.random.default_rng(seed)
    csm = simulate_coil_sensitivities(16, 16, 2, seed=seed)
    cfg = EncodingConfig(make_gaussian_random_mask(4, 16, nt, 2, seed=seed), csm)
    m = encode(rng.standard_normal((16, 16, nt)) + 1j * rng.standard_normal((16, 16, nt)), cfg)
    return m, cfg


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**20), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_objective_non_increasing(seed, lam_l, lam_s):
    m, cfg = _problem(seed)
    obj = lps_solve(m, cfg, LpsConfig(lambda_l=lam_l, lambda_s=lam_s, iters=15)).objective
    assert all(b <= a * (1 + 1e-12) for a, b in zip(obj, obj[1:]))


def test_objective_value_matches_definition():
    m, cfg = _problem(1)
    res = lps_solve(m, cfg, LpsConfig(lambda_l=0.1, lambda_s=0.2, iters=3))
    L, S = res.L, res.S
    r = encode(L + S, cfg) - m
    nuc = singular_values(L.reshape(-1, L.shape[2])).sum()
    l1 = np.abs(np.fft.fft(S, axis=2, norm="ortho")).sum()
    expected = 0.5 * np.sum(np.abs(r) ** 2) + 0.1 * nuc + 0.2 * l1
    assert lps_objective(L, S, m, cfg, LpsConfig(lambda_l=0.1, lambda_s=0.2)) == pytest.approx(expected, rel=1e-10)
    assert res.objective[-1] == pytest.approx(expected, rel=1e-10)


def test_static_rank_one_recovery():
    vol = static_series()
    cfg = EncodingConfig(full_mask(16, 8), simulate_coil_sensitivities(16, 16, 2, seed=1))
    res = lps_solve(encode(vol, cfg), cfg, LpsConfig(lambda_l=1e-3, lambda_s=10.0, iters=50))
    assert np.linalg.norm(res.volume - vol) / np.linalg.norm(vol) < 1e-3
    assert np.linalg.norm(res.S) <= 1e-3 * np.linalg.norm(res.volume)


def test_static_undersampled_beats_zero_filled():
    vol = static_series()
    cfg = EncodingConfig(make_uniform_interleaved_mask(4, 16, 8, 2), simulate_coil_sensitivities(16, 16, 2, 1))
    m = encode(vol, cfg)
    err_lps = np.linalg.norm(lps_recon(m, cfg, LpsConfig(lambda_l=0.1, lambda_s=10.0, iters=50)) - vol)
    err_zf = np.linalg.norm(zero_filled(m, cfg) - vol)
    assert err_lps < 0.2 * err_zf


def test_infinite_thresholds_give_zero():
    m, cfg = _problem(2)
    out = lps_recon(m, cfg, LpsConfig(lambda_l=math.inf, lambda_s=math.inf, iters=3))
    assert not out.any()


def test_infinite_sparsity_is_pure_low_rank():
    m, cfg = _problem(3)
    res = lps_solve(m, cfg, LpsConfig(lambda_l=0.5, lambda_s=math.inf, iters=5))
    assert not res.S.any()


def test_lps_config_validation():
    with pytest.raises(ConfigError):
        LpsConfig(lambda_l=0.0)
    with pytest.raises(ConfigError):
        LpsConfig(iters=0)
    m, cfg = _problem(4, nt=2)
    with pytest.raises(ConfigError):
        lps_solve(m[:, :, :1], EncodingConfig(make_gaussian_random_mask(4, 16, 1, 2, 0), cfg.csm), LpsConfig())
