"""QAM mapping, demapping, and the quality metrics."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
from rapro.config import Modulation
from rapro.phy import (
    PhyError,
    compute_ber,
    compute_evm,
    constellation,
    demodulate_with_points,
    nearest_constellation_points,
    noise_var_for_ebn0,
    qam_demodulate,
    qam_modulate,
)

SCHEMES = list(Modulation)


@pytest.mark.parametrize("scheme", SCHEMES)
def test_constellation_unit_power(scheme):
    table = constellation(scheme)
    assert table.size == 2**scheme.bits_per_symbol
    assert abs(np.mean(np.abs(table) ** 2) - 1.0) < 1e-12


def test_qpsk_reference_points():
    s = 1 / math.sqrt(2)
    assert qam_modulate([0, 0], Modulation.QPSK)[0] == pytest.approx(s + 1j * s)
    assert qam_modulate([1, 1], Modulation.QPSK)[0] == pytest.approx(-s - 1j * s)
    assert qam_modulate([0, 1], Modulation.QPSK)[0] == pytest.approx(s - 1j * s)
    assert qam_modulate([1, 0], Modulation.QPSK)[0] == pytest.approx(-s + 1j * s)


def test_qam16_corner_first():
    # all-zeros label sits on the positive corner
    sym = qam_modulate([0, 0, 0, 0], Modulation.QAM16)[0]
    assert sym == pytest.approx((3 + 3j) / math.sqrt(10))


@pytest.mark.parametrize("scheme", SCHEMES)
def test_gray_adjacency(scheme):
    # nearest-neighbor constellation points differ in exactly one bit
    pts = constellation(scheme)
    dists = np.abs(pts[:, None] - pts[None, :])
    min_dist = np.min(dists[dists > 0])
    close = np.argwhere(np.abs(dists - min_dist) < 1e-12)
    for idx, jdx in close:
        if idx < jdx:
            assert bin(idx ^ jdx).count("1") == 1


@settings(max_examples=40, deadline=None)
@given(data=st.data(), scheme=st.sampled_from(SCHEMES))
def test_modulate_demodulate_roundtrip(data, scheme):
    n = data.draw(st.integers(min_value=1, max_value=64))
    bits = data.draw(
        st.lists(st.integers(0, 1), min_size=n * scheme.bits_per_symbol,
                 max_size=n * scheme.bits_per_symbol)
    )
    symbols = qam_modulate(bits, scheme)
    assert symbols.shape == (n,)
    out = qam_demodulate(symbols, scheme)
    assert np.array_equal(out, np.asarray(bits, dtype=np.uint8))


@settings(max_examples=30, deadline=None)
@given(data=st.data(), scheme=st.sampled_from(SCHEMES))
def test_demodulate_matches_brute_force(data, scheme):
    n = data.draw(st.integers(min_value=1, max_value=32))
    vals = data.draw(
        st.lists(
            st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False),
            min_size=n, max_size=n,
        )
    )
    symbols = np.asarray(vals, dtype=np.complex128)
    assert np.array_equal(
        qam_demodulate(symbols, scheme), helpers.brute_force_demod(symbols, scheme)
    )


@pytest.mark.parametrize("scheme", SCHEMES)
def test_demodulate_boundary_hits_stay_distance_optimal(scheme):
    # On (near-)boundary inputs the two tied points differ at ulp level, so
    # bit equality with the brute-force search is not well defined; the
    # decision must still be a nearest point up to float rounding, and must
    # be deterministic.
    m = scheme.bits_per_symbol // 2
    scale = {1: math.sqrt(2), 2: math.sqrt(10), 3: math.sqrt(42), 4: math.sqrt(170)}[m]
    boundaries = np.arange(-(2**m) + 2, 2**m, 2, dtype=float) / scale
    pts = [0j]
    for b in boundaries:
        pts.extend([complex(b, 0.3), complex(0.3, b), complex(b, b)])
    symbols = np.asarray(pts)
    table = constellation(scheme)
    bits, points = demodulate_with_points(symbols, scheme)
    best = np.min(np.abs(symbols[:, None] - table[None, :]) ** 2, axis=1)
    got = np.abs(symbols - points) ** 2
    assert np.all(got <= best + 1e-12)
    again, _ = demodulate_with_points(symbols, scheme)
    assert np.array_equal(bits, again)


def test_origin_tie_lowest_index():
    assert np.array_equal(qam_demodulate([0j], Modulation.QPSK), [0, 0])
    # lowest-index tied point for 16-QAM at the origin is 0101 (= +1+1j)
    assert np.array_equal(qam_demodulate([0j], Modulation.QAM16), [0, 1, 0, 1])


def test_modulate_length_error():
    with pytest.raises(PhyError, match="not divisible"):
        qam_modulate([0, 1, 0], Modulation.QPSK)
    with pytest.raises(PhyError, match="0 or 1"):
        qam_modulate([0, 2], Modulation.QPSK)


def test_nearest_points_consistent_with_demod(rng):
    symbols = rng.standard_normal(100) + 1j * rng.standard_normal(100)
    for scheme in SCHEMES:
        bits, points = demodulate_with_points(symbols, scheme)
        assert np.array_equal(bits, qam_demodulate(symbols, scheme))
        assert np.allclose(points, nearest_constellation_points(symbols, scheme))
        assert np.allclose(points, qam_modulate(bits, scheme))


def test_qpsk_awgn_ber_matches_q_function(rng):
    # DERIVED oracle: BER = Q(sqrt(2 Eb/N0)) for Gray QPSK over AWGN
    ebn0_db = 8.0
    nbits = 4_000_000
    expected = helpers.qpsk_ber_theory(ebn0_db)
    bits = rng.integers(0, 2, size=nbits)
    tx = qam_modulate(bits, Modulation.QPSK)
    var = noise_var_for_ebn0(ebn0_db, Modulation.QPSK)
    rx = tx + helpers.awgn(rng, tx.shape, var)
    ber = compute_ber(qam_demodulate(rx, Modulation.QPSK), bits)
    assert abs(ber - expected) <= 0.10 * expected


@pytest.mark.parametrize("scheme", SCHEMES)
def test_ber_monotone_in_snr(scheme, rng):
    nbits = 240_000
    bits = rng.integers(0, 2, size=nbits - nbits % scheme.bits_per_symbol)
    tx = qam_modulate(bits, scheme)
    bers = []
    for ebn0_db in range(0, 24, 4):
        rx = tx + helpers.awgn(rng, tx.shape, noise_var_for_ebn0(ebn0_db, scheme))
        bers.append(compute_ber(qam_demodulate(rx, scheme), bits))
    assert all(b1 >= b2 for b1, b2 in zip(bers, bers[1:]))


def test_evm_examples(rng):
    ref = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    assert compute_evm(ref, ref) == 0.0
    assert compute_evm(1.1 * ref, ref) == pytest.approx(10.0, rel=1e-9)
    # error with 4% relative energy -> 20%
    err = rng.standard_normal(500) + 1j * rng.standard_normal(500)
    err *= np.sqrt(0.04 * np.sum(np.abs(ref) ** 2) / np.sum(np.abs(err) ** 2))
    assert compute_evm(ref + err, ref) == pytest.approx(20.0, rel=1e-9)


def test_evm_errors():
    with pytest.raises(PhyError, match="length"):
        compute_evm([1 + 0j], [1 + 0j, 2 + 0j])
    with pytest.raises(PhyError, match="zero"):
        compute_evm([1 + 0j], [0j])


def test_ber_examples():
    bits = np.array([0, 1, 1, 0] * 250)
    assert compute_ber(bits, bits) == 0.0
    assert compute_ber(bits, 1 - bits) == 1.0
    flipped = bits.copy()
    flipped[123] ^= 1
    assert compute_ber(flipped, bits) == pytest.approx(0.001)
    with pytest.raises(PhyError, match="length"):
        compute_ber([0, 1], [0])
