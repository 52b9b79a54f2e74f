"""Pilot combs, LS estimation, interpolation, and noise-variance estimation."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
from rapro.channel import apply_channel, gen_channel
from rapro.config import ChannelSpec, ConfigError, FrameConfig, Modulation
from rapro.phy import (
    BatchInterpWorkspace,
    PhyError,
    comb_subcarriers,
    cross_slot_noise_estimate,
    estimate_noise_variance,
    gen_pilot_grid,
    interpolate_channel,
    interpolate_comb,
    interpolate_comb_batched,
    ls_estimate,
    pilot_comb_values,
)


def _cfg(m=4, k=2, n=24, fft=64):
    mods = (Modulation.QPSK,) * k
    return FrameConfig(
        num_bs_antennas=m, num_users=k, fft_size=fft, used_subcarriers=n,
        modulation_per_user=mods,
    )


# -- pilot combs -----------------------------------------------------------


def test_pilot_comb_support():
    cfg = _cfg(m=4, k=4, n=24)
    grid = gen_pilot_grid(cfg, 2, seed=9)
    nz = np.nonzero(grid)[0]
    assert np.array_equal(nz, np.arange(2, 24, 4))
    assert np.allclose(np.abs(grid[nz]), 1.0)


def test_pilot_single_user_occupies_everything():
    cfg = _cfg(m=2, k=1, n=24)
    grid = gen_pilot_grid(cfg, 0, seed=1)
    assert np.all(grid != 0)


def test_pilot_orthogonality_and_cover():
    cfg = _cfg(m=4, k=3, n=24)
    grids = [gen_pilot_grid(cfg, u, seed=100 + u) for u in range(3)]
    for a in range(3):
        for b in range(a + 1, 3):
            assert np.all(grids[a] * grids[b] == 0)
    support = np.zeros(24, dtype=int)
    for g in grids:
        support += (g != 0).astype(int)
    assert np.all(support == 1)


def test_pilot_deterministic():
    cfg = _cfg()
    a = gen_pilot_grid(cfg, 1, seed=7)
    b = gen_pilot_grid(cfg, 1, seed=7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gen_pilot_grid(cfg, 1, seed=8))


def test_pilot_user_out_of_range():
    with pytest.raises(PhyError, match="user"):
        gen_pilot_grid(_cfg(), 5, seed=0)


def test_comb_divisibility_enforced_by_config():
    with pytest.raises(ConfigError, match="divisible"):
        FrameConfig(num_bs_antennas=8, num_users=7,
                    modulation_per_user=(Modulation.QPSK,) * 7)


# -- LS estimation ------------------------------------------------------------


def _rx_pilot_for(cfg, h, seeds):
    """Noise-free received pilot symbol for a flat channel h (M, K)."""
    rx = np.zeros((cfg.num_bs_antennas, cfg.used_subcarriers), dtype=np.complex128)
    for k in range(cfg.num_users):
        comb = comb_subcarriers(cfg, k)
        rx[:, comb] += np.outer(h[:, k], pilot_comb_values(cfg, k, seeds[k]))
    return rx


def test_ls_exact_on_noiseless_flat_channel(rng):
    cfg = _cfg(m=4, k=2, n=24)
    seeds = [11, 12]
    h = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    est = ls_estimate(_rx_pilot_for(cfg, h, seeds), cfg, seeds)
    for k in range(2):
        ref = np.repeat(h[:, k][:, None], cfg.comb_points, axis=1)
        assert np.max(np.abs(est[:, k, :] - ref)) < 1e-12 * np.max(np.abs(h))


def test_ls_zero_input_gives_zero():
    cfg = _cfg()
    est = ls_estimate(np.zeros((4, 24), dtype=complex), cfg, [1, 2])
    assert np.all(est == 0)


def test_ls_shape_errors():
    cfg = _cfg()
    with pytest.raises(PhyError, match="shape"):
        ls_estimate(np.zeros((3, 24), dtype=complex), cfg, [1, 2])
    with pytest.raises(PhyError, match="seeds"):
        ls_estimate(np.zeros((4, 24), dtype=complex), cfg, [1])


# -- interpolation --------------------------------------------------------------


def test_interp_constant_stays_constant():
    out = interpolate_comb(np.full((1, 2, 6), 3 - 2j), 12)
    assert np.allclose(out, 3 - 2j)


def test_interp_linear_exact_interior():
    k_users, p = 2, 8
    n = k_users * p
    comb = np.empty((1, k_users, p), dtype=complex)
    for k in range(k_users):
        xs = np.arange(k, n, k_users, dtype=float)
        comb[0, k] = 0.5 * xs - 1j * xs
    out = interpolate_comb(comb, n)
    for k in range(k_users):
        interior = np.arange(k, k + (p - 1) * k_users + 1)
        expect = 0.5 * interior - 1j * interior
        assert np.allclose(out[0, k, interior], expect, atol=1e-12)


def test_interp_identity_for_single_user(rng):
    vals = rng.standard_normal((3, 1, 16)) + 1j * rng.standard_normal((3, 1, 16))
    assert np.allclose(interpolate_comb(vals, 16), vals)


def test_interp_rejects_empty():
    with pytest.raises(PhyError, match="empty"):
        interpolate_comb(np.empty((0, 2, 4)), 8)
    with pytest.raises(PhyError, match="inconsistent"):
        interpolate_comb(np.zeros((1, 2, 4)), 12)


@settings(max_examples=25, deadline=None)
@given(data=st.data())
def test_interp_matches_np_interp(data):
    k_users = data.draw(st.integers(1, 6))
    p = data.draw(st.integers(2, 12))
    m = data.draw(st.integers(1, 4))
    n = k_users * p
    raw = data.draw(
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=2 * m * k_users * p,
                 max_size=2 * m * k_users * p)
    )
    flat = np.asarray(raw)
    comb = (flat[: m * k_users * p] + 1j * flat[m * k_users * p :]).reshape(m, k_users, p)
    out = interpolate_comb(comb, n)
    nn = np.arange(n, dtype=float)
    for mi in range(m):
        for k in range(k_users):
            xp = np.arange(k, n, k_users, dtype=float)
            ref = np.interp(nn, xp, comb[mi, k].real) + 1j * np.interp(
                nn, xp, comb[mi, k].imag
            )
            assert np.allclose(out[mi, k], ref, atol=1e-12)


def test_batched_interp_matches_reference(rng):
    slots, m, k_users, p = 2, 5, 3, 9
    n = k_users * p
    comb = rng.standard_normal((slots, m, k_users, p)) + 1j * rng.standard_normal(
        (slots, m, k_users, p)
    )
    out = np.empty((slots * n, m, k_users), dtype=np.complex128)
    interpolate_comb_batched(comb, BatchInterpWorkspace(slots, m, k_users, p), out)
    ref = interpolate_comb(comb, n)
    ref_b = np.ascontiguousarray(ref.transpose(0, 3, 1, 2)).reshape(slots * n, m, k_users)
    assert np.allclose(out, ref_b, atol=1e-12)


def test_interpolate_channel_layout(rng):
    cfg = _cfg(m=3, k=2, n=12)
    sparse = rng.standard_normal((3, 2, 6)) + 1j * rng.standard_normal((3, 2, 6))
    full = interpolate_channel(sparse, cfg)
    assert full.shape == (12, 3, 2)
    # comb points pass through exactly
    for k in range(2):
        comb = comb_subcarriers(cfg, k)
        assert np.allclose(full[comb, :, k], sparse[:, k, :].T)


def test_ls_plus_interp_tracks_frequency_selective_channel():
    # DERIVED bound: 4-tap channel over a K=2 comb; the interpolation error
    # of the emulator's default channel stays below 2e-3 (oracle-run bound).
    cfg = FrameConfig(
        num_bs_antennas=4, num_users=2, fft_size=2048, used_subcarriers=1200,
        modulation_per_user=(Modulation.QPSK, Modulation.QPSK),
    )
    spec = ChannelSpec(model="tdl", num_taps=4)
    ch = gen_channel(spec, cfg, seed=42)
    seeds = [5, 6]
    tx = np.zeros((2, 1, 1200), dtype=complex)
    for k in range(2):
        tx[k, 0] = gen_pilot_grid(cfg, k, seeds[k])
    rx = apply_channel(tx, ch, 0.0, noise_seed=0)
    est = ls_estimate(rx[:, 0, :], cfg, seeds)
    full = interpolate_channel(est, cfg)
    err = np.max(np.abs(full - ch.h))
    assert err < 2e-3


# -- noise variance ---------------------------------------------------------------


def test_noise_estimate_floor_on_noiseless_input(rng):
    cfg = _cfg(m=4, k=2, n=24)
    seeds = [3, 4]
    h = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    rx = _rx_pilot_for(cfg, h, seeds)
    h_full = np.repeat(h[None, :, :], 24, axis=0)
    pilots = np.stack([pilot_comb_values(cfg, k, seeds[k]) for k in range(2)])
    assert estimate_noise_variance(rx, h_full, pilots, cfg) == 1e-6
    assert estimate_noise_variance(rx, h_full, pilots, cfg, floor=1e-3) == 1e-3


def test_noise_estimate_recovers_injected_variance(rng):
    # DERIVED: Monte-Carlo with known injected variance, >= 1200 pilot REs
    cfg = FrameConfig(
        num_bs_antennas=16, num_users=4, fft_size=2048, used_subcarriers=1200,
    )
    seeds = list(range(4))
    h = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
    rx = _rx_pilot_for(cfg, h, seeds)
    rx += helpers.awgn(rng, rx.shape, 0.01)
    h_full = np.repeat(h[None, :, :], 1200, axis=0)
    pilots = np.stack([pilot_comb_values(cfg, k, seeds[k]) for k in range(4)])
    est = estimate_noise_variance(rx, h_full, pilots, cfg)
    assert abs(est - 0.01) <= 0.15 * 0.01


def test_noise_estimate_quadratic_in_amplitude(rng):
    cfg = FrameConfig(num_bs_antennas=16, num_users=4)
    seeds = list(range(4))
    h = rng.standard_normal((16, 4)) + 1j * rng.standard_normal((16, 4))
    clean = _rx_pilot_for(cfg, h, seeds)
    noise = helpers.awgn(rng, clean.shape, 0.004)
    h_full = np.repeat(h[None, :, :], 1200, axis=0)
    pilots = np.stack([pilot_comb_values(cfg, k, seeds[k]) for k in range(4)])
    v1 = estimate_noise_variance(clean + noise, h_full, pilots, cfg)
    v2 = estimate_noise_variance(clean + 2.0 * noise, h_full, pilots, cfg)
    assert v2 == pytest.approx(4.0 * v1, rel=1e-9)


def test_cross_slot_estimate_unbiased(rng):
    # two LS estimates of the same channel differ by two slots' noise
    var = 0.02
    a = rng.standard_normal((16, 4, 300)) + 1j * rng.standard_normal((16, 4, 300))
    n0 = helpers.awgn(rng, a.shape, var)
    n1 = helpers.awgn(rng, a.shape, var)
    est = cross_slot_noise_estimate(a + n0, a + n1)
    assert abs(est - var) <= 0.1 * var
    assert cross_slot_noise_estimate(a, a) == 1e-6
