"""Independent oracles used to compute expected values in tests.

These deliberately avoid the library's computation paths: the LMMSE oracle
forms the explicit inverse in 80-bit extended precision via a real-block
Gauss-Jordan elimination, the demodulation oracle is a brute-force nearest
point search, and BER references come from the Gaussian tail function.
"""
from __future__ import annotations

import math

import numpy as np

from rapro.config import Modulation
from rapro.phy import constellation


def q_function(x: float) -> float:
    """Gaussian tail probability Q(x)."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def qpsk_ber_theory(ebn0_db: float) -> float:
    return q_function(math.sqrt(2.0 * 10.0 ** (ebn0_db / 10.0)))


def _invert_longdouble(a: np.ndarray) -> np.ndarray:
    """Explicit inverse by Gauss-Jordan with partial pivoting, longdouble."""
    n = a.shape[0]
    aug = np.concatenate([a.astype(np.longdouble), np.eye(n, dtype=np.longdouble)], axis=1)
    for col in range(n):
        pivot = col + int(np.argmax(np.abs(aug[col:, col])))
        if aug[pivot, col] == 0:
            raise np.linalg.LinAlgError("singular oracle matrix")
        if pivot != col:
            aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def lmmse_oracle(y: np.ndarray, h: np.ndarray, noise_var: float) -> np.ndarray:
    """x = (H^H H + s2 I)^-1 H^H y with the inverse formed explicitly in
    extended precision (real-block embedding of the complex system)."""
    hr = h.real.astype(np.longdouble)
    hi = h.imag.astype(np.longdouble)
    k = h.shape[1]
    ar = hr.T @ hr + hi.T @ hi + np.longdouble(noise_var) * np.eye(k, dtype=np.longdouble)
    ai = hr.T @ hi - hi.T @ hr
    a_block = np.block([[ar, -ai], [ai, ar]])
    yr = y.real.astype(np.longdouble)
    yi = y.imag.astype(np.longdouble)
    br = hr.T @ yr + hi.T @ yi
    bi = hr.T @ yi - hi.T @ yr
    inv = _invert_longdouble(a_block)
    xr_xi = inv @ np.concatenate([br, bi])
    return (xr_xi[:k] + 1j * xr_xi[k:]).astype(np.complex128)


def brute_force_demod(symbols: np.ndarray, scheme: Modulation) -> np.ndarray:
    """Nearest constellation point by exhaustive search; np.argmin keeps the
    lowest index on exact ties, matching the documented tie-break."""
    table = constellation(scheme)
    bps = scheme.bits_per_symbol
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    out = np.empty(symbols.size * bps, dtype=np.uint8)
    for i, s in enumerate(symbols):
        idx = int(np.argmin(np.abs(s - table) ** 2))
        for b in range(bps):
            out[i * bps + b] = (idx >> (bps - 1 - b)) & 1
    return out


def awgn(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    w = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return w * np.sqrt(variance / 2.0)
