"""Physical-layer numerics: QAM mapping, pilots, LS estimation, LMMSE detection.

Everything here is a pure function of its inputs (given explicit seeds) and is
safe to call from any number of workers concurrently.

Constellation convention (documented in docs/constellations.md): square QAM,
per-axis binary-reflected Gray labels with the all-zeros label on the positive
corner, first half of a symbol's bits on I, second half on Q, scaled to unit
average constellation power.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import FrameConfig, Modulation


class PhyError(ValueError):
    """Invalid input to a physical-layer operation."""


class SingularMatrixError(np.linalg.LinAlgError):
    """Detection matrix singular to working precision."""


# -- Gray-mapped square constellations ----------------------------------------


def _binary_to_gray(i: int) -> int:
    return i ^ (i >> 1)


@lru_cache(maxsize=None)
def _axis_tables(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-axis tables for 2**m levels.

    Returns (levels_by_pattern, pattern_by_index, tie_pick) where index i
    counts levels downward from +(2**m - 1) and pattern_by_index[i] is the
    Gray label of level i. tie_pick[i] resolves an exact tie on the boundary
    between levels i and i+1 toward the smaller Gray pattern, which makes the
    threshold decision identical to nearest-point search with lowest-index
    tie-breaking.
    """
    n = 1 << m
    pattern_by_index = np.array([_binary_to_gray(i) for i in range(n)], dtype=np.int64)
    levels_by_pattern = np.empty(n, dtype=np.float64)
    for i in range(n):
        levels_by_pattern[pattern_by_index[i]] = (n - 1) - 2 * i
    tie_pick = np.array(
        [
            i if pattern_by_index[i] < pattern_by_index[i + 1] else i + 1
            for i in range(n - 1)
        ],
        dtype=np.int64,
    )
    return levels_by_pattern, pattern_by_index, tie_pick


@lru_cache(maxsize=None)
def constellation(scheme: Modulation) -> np.ndarray:
    """Unit-average-power constellation indexed by the symbol's bit pattern."""
    bps = scheme.bits_per_symbol
    m = bps // 2
    levels, _, _ = _axis_tables(m)
    i_pat = np.arange(1 << bps) >> m
    q_pat = np.arange(1 << bps) & ((1 << m) - 1)
    points = levels[i_pat] + 1j * levels[q_pat]
    norm = np.sqrt(np.mean(np.abs(points) ** 2))
    return points / norm


@lru_cache(maxsize=None)
def _axis_scale(scheme: Modulation) -> float:
    """sqrt of the constellation power normalization (sqrt 2/10/42/170)."""
    m = scheme.bits_per_symbol // 2
    levels, _, _ = _axis_tables(m)
    return float(np.sqrt(2.0 * np.mean(levels**2)))


def qam_modulate(bits, scheme: Modulation) -> np.ndarray:
    """Map a 0/1 bit sequence to Gray-coded unit-power QAM symbols."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    bps = scheme.bits_per_symbol
    if bits.size % bps != 0:
        raise PhyError(
            f"bit count {bits.size} not divisible by {bps} ({scheme.value})"
        )
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise PhyError("bits must be 0 or 1")
    weights = 1 << np.arange(bps - 1, -1, -1, dtype=np.int64)
    idx = bits.reshape(-1, bps) @ weights
    return constellation(scheme)[idx]


def _demod_axis(x: np.ndarray, m: int) -> np.ndarray:
    """Nearest level index along one axis with exact-tie resolution."""
    levels, _, tie_pick = _axis_tables(m)
    n = 1 << m
    u = ((n - 1) - x) / 2.0
    idx = np.floor(u + 0.5)
    lo = np.floor(u)
    frac = u - lo
    tie = (frac == 0.5) & (lo >= 0) & (lo <= n - 2)
    if np.any(tie):
        idx[tie] = tie_pick[lo[tie].astype(np.int64)]
    return np.clip(idx, 0, n - 1).astype(np.int64)


def _demod_indices(symbols: np.ndarray, scheme: Modulation) -> np.ndarray:
    m = scheme.bits_per_symbol // 2
    _, pattern_by_index, _ = _axis_tables(m)
    scaled = symbols * _axis_scale(scheme)
    i_pat = pattern_by_index[_demod_axis(scaled.real, m)]
    q_pat = pattern_by_index[_demod_axis(scaled.imag, m)]
    return (i_pat << m) | q_pat


def _bits_from_indices(sym_idx: np.ndarray, bps: int) -> np.ndarray:
    shifts = np.arange(bps - 1, -1, -1, dtype=np.int64)
    bits = (sym_idx[:, None] >> shifts) & 1
    return bits.astype(np.uint8).ravel()


def qam_demodulate(symbols, scheme: Modulation) -> np.ndarray:
    """Hard minimum-distance demodulation back to bits.

    Exact ties (e.g. a symbol at the origin) resolve to the lowest-index
    constellation point.
    """
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    return _bits_from_indices(_demod_indices(symbols, scheme), scheme.bits_per_symbol)


def demodulate_with_points(
    symbols: np.ndarray, scheme: Modulation
) -> tuple[np.ndarray, np.ndarray]:
    """(bits, decided constellation points) in one pass; same decisions as
    qam_demodulate."""
    symbols = np.asarray(symbols, dtype=np.complex128).ravel()
    idx = _demod_indices(symbols, scheme)
    return _bits_from_indices(idx, scheme.bits_per_symbol), constellation(scheme)[idx]


def nearest_constellation_points(symbols: np.ndarray, scheme: Modulation) -> np.ndarray:
    """Hard-decision reference symbols (same decision rule as qam_demodulate)."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    m = scheme.bits_per_symbol // 2
    _, pattern_by_index, _ = _axis_tables(m)
    scaled = symbols * _axis_scale(scheme)
    i_pat = pattern_by_index[_demod_axis(scaled.real.ravel(), m)]
    q_pat = pattern_by_index[_demod_axis(scaled.imag.ravel(), m)]
    pts = constellation(scheme)[(i_pat << m) | q_pat]
    return pts.reshape(symbols.shape)


def noise_var_for_ebn0(ebn0_db: float, scheme: Modulation) -> float:
    """Complex AWGN variance giving the requested Eb/N0 at unit symbol energy."""
    return 1.0 / (scheme.bits_per_symbol * 10.0 ** (ebn0_db / 10.0))


# -- pilots and channel estimation ---------------------------------------------


@lru_cache(maxsize=256)
def _pilot_comb_cached(num_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=2 * num_points)
    return qam_modulate(bits, Modulation.QPSK)


def pilot_comb_values(cfg: FrameConfig, user: int, seed: int) -> np.ndarray:
    """Unit-magnitude QPSK pilot sequence on the user's comb (seeded PRBS)."""
    if user >= cfg.num_users:
        raise PhyError(f"user {user} out of range (num_users={cfg.num_users})")
    return _pilot_comb_cached(cfg.comb_points, seed)


def comb_subcarriers(cfg: FrameConfig, user: int) -> np.ndarray:
    """Subcarrier indices of the user's frequency-orthogonal pilot comb."""
    return np.arange(user, cfg.used_subcarriers, cfg.num_users)


def gen_pilot_grid(cfg: FrameConfig, user: int, seed: int) -> np.ndarray:
    """One pilot OFDM symbol: the user's comb populated, zero elsewhere.

    User k occupies subcarriers {n : n mod K == k}, so distinct users' pilot
    grids have disjoint support and their union covers every subcarrier.
    """
    values = pilot_comb_values(cfg, user, seed)
    grid = np.zeros(cfg.used_subcarriers, dtype=np.complex128)
    grid[user :: cfg.num_users] = values
    return grid


def ls_estimate(
    rx_pilot: np.ndarray, cfg: FrameConfig, pilot_seeds
) -> np.ndarray:
    """Least-squares channel estimates on each user's pilot comb.

    rx_pilot is the received pilot symbol, shape (M, N_sc). Returns comb
    estimates of shape (M, K, P): H_hat[m, k, j] = Y[m, comb_k[j]] / P_k[j].
    Off-comb entries are not represented (the comb is the sparse support).
    """
    rx_pilot = np.asarray(rx_pilot)
    M, K, P = cfg.num_bs_antennas, cfg.num_users, cfg.comb_points
    if rx_pilot.shape != (M, cfg.used_subcarriers):
        raise PhyError(
            f"rx_pilot shape {rx_pilot.shape} != ({M}, {cfg.used_subcarriers})"
        )
    if len(pilot_seeds) != K:
        raise PhyError(f"need {K} pilot seeds, got {len(pilot_seeds)}")
    out = np.empty((M, K, P), dtype=np.complex128)
    for k in range(K):
        pk = pilot_comb_values(cfg, k, pilot_seeds[k])
        # unit-magnitude pilots: division == multiply by conjugate
        np.multiply(rx_pilot[:, k::K], pk.conj(), out=out[:, k, :])
    return out


class CombInterpWorkspace:
    """Reusable buffers for interpolate_comb (one per worker, not shared)."""

    def __init__(self, shape_prefix: tuple[int, ...], num_users: int, comb_points: int):
        K, P = num_users, comb_points
        self.nxt = np.empty(shape_prefix + (K, P), dtype=np.complex128)
        self.lo = np.empty(shape_prefix + (K, P, K), dtype=np.complex128)
        self.hi = np.empty(shape_prefix + (K, P, K), dtype=np.complex128)
        self.out = np.empty(shape_prefix + (K, P * K), dtype=np.complex128)


def interpolate_comb(
    sparse: np.ndarray, num_subcarriers: int, workspace: CombInterpWorkspace | None = None
) -> np.ndarray:
    """Linear interpolation of comb estimates onto every subcarrier.

    sparse has shape (..., K, P) with user k's points at subcarriers
    k + j*K; output has shape (..., K, N_sc). Real and imaginary parts are
    interpolated independently (linear interpolation is complex-linear), and
    edges hold the nearest comb value. With a workspace the returned array is
    the workspace buffer, only valid until the next call on that workspace.
    """
    sparse = np.asarray(sparse, dtype=np.complex128)
    if sparse.size == 0:
        raise PhyError("empty comb estimate")
    K, P = sparse.shape[-2], sparse.shape[-1]
    if P * K != num_subcarriers:
        raise PhyError(
            f"comb shape {sparse.shape} inconsistent with {num_subcarriers} subcarriers"
        )
    ws = workspace or CombInterpWorkspace(sparse.shape[:-2], K, P)
    ws.nxt[..., :-1] = sparse[..., 1:]
    ws.nxt[..., -1] = sparse[..., -1]  # right edge holds
    w1 = np.arange(K, dtype=np.float64) / K
    # values at user-relative positions j*K + r, laid out (..., K, P, K)
    np.multiply(sparse[..., None], 1.0 - w1, out=ws.lo)
    np.multiply(ws.nxt[..., None], w1, out=ws.hi)
    ws.lo += ws.hi
    flat = ws.lo.reshape(*sparse.shape[:-1], num_subcarriers)
    out = ws.out
    for k in range(K):
        out[..., k, k:] = flat[..., k, : num_subcarriers - k]
        if k:
            out[..., k, :k] = sparse[..., k, :1]  # left edge holds
    return out


def interpolate_channel(sparse: np.ndarray, cfg: FrameConfig) -> np.ndarray:
    """Full-band channel estimate, shape (N_sc, M, K), from comb estimates."""
    full = interpolate_comb(sparse, cfg.used_subcarriers)  # (M, K, N)
    return np.ascontiguousarray(full.transpose(2, 0, 1))


@lru_cache(maxsize=32)
def _block_interp_weights(num_users: int, num_antennas: int):
    """Per-residue interpolation weights against the previous/current/next comb
    block, expanded over antennas so the elementwise kernels run wide."""
    K, M = num_users, num_antennas
    wm = np.zeros((K, M, K))
    w0 = np.zeros((K, M, K))
    wp = np.zeros((K, M, K))
    for r in range(K):
        for k in range(K):
            if r >= k:
                w = (r - k) / K
                w0[r, :, k] = 1.0 - w
                wp[r, :, k] = w
            else:
                w = (r - k + K) / K
                wm[r, :, k] = 1.0 - w
                w0[r, :, k] = w
    return wm, w0, wp


class BatchInterpWorkspace:
    """Scratch for interpolate_comb_batched (one per worker)."""

    def __init__(self, slots: int, num_antennas: int, num_users: int, comb_points: int):
        M, K, P = num_antennas, num_users, comb_points
        self.slots, self.m, self.k, self.p = slots, M, K, P
        self.padded = np.empty((slots, P + 2, M, K), dtype=np.complex128)
        self.tmp = np.empty((slots, P, K, M, K), dtype=np.complex128)
        self.weights = _block_interp_weights(K, M)


def interpolate_comb_batched(
    sparse: np.ndarray, ws: BatchInterpWorkspace, out: np.ndarray
) -> np.ndarray:
    """Same interpolation as interpolate_comb, written straight into the
    subcarrier-major batch layout the detector consumes.

    sparse: (slots, M, K, P); out: (slots * N_sc, M, K) with N_sc = K * P.
    Subcarrier n = b*K + r of user k reads comb blocks b-1/b/b+1 with fixed
    per-(r, k) weights; edge blocks hold via index clamping.
    """
    slots, M, K, P = ws.slots, ws.m, ws.k, ws.p
    padded, tmp = ws.padded, ws.tmp
    wm, w0, wp = ws.weights
    padded[:, 1 : P + 1] = sparse.transpose(0, 3, 1, 2)
    padded[:, 0] = padded[:, 1]
    padded[:, P + 1] = padded[:, P]
    out_v = out.reshape(slots, P, K, M, K)
    np.multiply(padded[:, 0:P, None], wm, out=out_v)
    np.multiply(padded[:, 1 : P + 1, None], w0, out=tmp)
    out_v += tmp
    np.multiply(padded[:, 2 : P + 2, None], wp, out=tmp)
    out_v += tmp
    return out


def estimate_noise_variance(
    rx_pilot: np.ndarray,
    h_est: np.ndarray,
    pilot_values: np.ndarray,
    cfg: FrameConfig,
    floor: float = 1e-6,
) -> float:
    """Mean squared pilot residual |Y - H_hat * P|^2, floored at ``floor``.

    h_est is a full-band estimate of shape (N_sc, M, K); pilot_values has
    shape (K, P). The residual is taken over every antenna and every pilot
    subcarrier. Meaningful only when h_est is independent of this pilot
    reception (e.g. the other slot's estimate, or known truth): the residual
    of an estimate against its own pilots is identically zero.
    """
    K = cfg.num_users
    total = 0.0
    count = 0
    for k in range(K):
        comb = comb_subcarriers(cfg, k)
        predicted = h_est[comb, :, k].T * pilot_values[k]
        res = rx_pilot[:, comb] - predicted
        total += float(np.sum(res.real**2 + res.imag**2))
        count += res.size
    return max(float(floor), total / count)


def cross_slot_noise_estimate(
    comb_a: np.ndarray, comb_b: np.ndarray, floor: float = 1e-6
) -> float:
    """Noise variance from two LS estimates of the same (block-constant) channel.

    With unit-magnitude pilots the comb estimates differ by the two slots'
    independent noise, so E|a - b|^2 = 2 sigma^2.
    """
    diff = comb_b - comb_a
    return max(float(floor), float(np.mean(diff.real**2 + diff.imag**2)) / 2.0)


# -- LMMSE detection -------------------------------------------------------


def _cholesky_solve_batched(
    a: np.ndarray, rhs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Solve Hermitian positive-definite batched systems a @ x = rhs.

    a: (B, K, K), rhs: (B, K, T). Returns (x, bad) where bad marks batch
    members whose matrix was singular to working precision; their x rows are
    zeroed. Cholesky without pivoting is numerically stable for the HPD
    matrices produced by Gram + diagonal loading.
    """
    B, K, _ = a.shape
    L = np.zeros_like(a)
    bad = np.zeros(B, dtype=bool)
    diag_scale = np.max(a[:, np.arange(K), np.arange(K)].real, axis=1)
    tol = np.maximum(diag_scale * 1e-10, 1e-300)
    for j in range(K):
        v = a[:, j, j].real.copy()
        if j:
            v -= np.sum(L[:, j, :j].real**2 + L[:, j, :j].imag**2, axis=1)
        bad |= ~(v > tol)
        d = np.sqrt(np.where(v > tol, v, 1.0))
        L[:, j, j] = d
        for i in range(j + 1, K):
            s = a[:, i, j]
            if j:
                s = s - np.sum(L[:, i, :j] * L[:, j, :j].conj(), axis=1)
            L[:, i, j] = s / d
    x = rhs.astype(np.complex128, copy=True)
    for i in range(K):  # forward: L z = rhs
        for j in range(i):
            x[:, i, :] -= L[:, i, j][:, None] * x[:, j, :]
        x[:, i, :] /= L[:, i, i].real[:, None]
    for i in range(K - 1, -1, -1):  # backward: L^H x = z
        for j in range(i + 1, K):
            x[:, i, :] -= L[:, j, i].conj()[:, None] * x[:, j, :]
        x[:, i, :] /= L[:, i, i].real[:, None]
    if np.any(bad):
        x[bad] = 0.0
    return x, bad


def lmmse_detect(y: np.ndarray, h: np.ndarray, noise_var: float) -> np.ndarray:
    """LMMSE estimate of the transmitted symbols on one subcarrier.

    x_hat = (H^H H + sigma^2 I)^-1 H^H y with a unit-power symbol prior,
    computed by a linear solve (never an explicit inverse).
    """
    y = np.asarray(y, dtype=np.complex128)
    h = np.asarray(h, dtype=np.complex128)
    if noise_var < 0:
        raise PhyError("noise_var must be >= 0")
    if h.ndim != 2 or y.shape != (h.shape[0],):
        raise PhyError(f"shape mismatch: y {y.shape}, H {h.shape}")
    hh = h.conj().T
    a = hh @ h + noise_var * np.eye(h.shape[1])
    try:
        return np.linalg.solve(a, hh @ y)
    except np.linalg.LinAlgError:
        raise SingularMatrixError(
            "H^H H + sigma^2 I singular to working precision"
        ) from None


def lmmse_detect_grid(
    y: np.ndarray, h: np.ndarray, noise_var: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier LMMSE over a batch: y (B, M, T), h (B, M, K).

    Returns (x_hat (B, K, T), erased (B,)) where erased flags subcarriers
    whose detection matrix was singular (possible only at sigma^2 = 0 with
    rank-deficient H); their outputs are zeroed.
    """
    hh = h.conj().transpose(0, 2, 1)
    a = hh @ h
    k = h.shape[2]
    a[:, np.arange(k), np.arange(k)] += noise_var
    return _cholesky_solve_batched(a, hh @ y)


# -- quality metrics -----------------------------------------------------------


def compute_evm(est, ref) -> float:
    """Error vector magnitude in percent: 100 * sqrt(sum|e-r|^2 / sum|r|^2)."""
    est = np.asarray(est, dtype=np.complex128).ravel()
    ref = np.asarray(ref, dtype=np.complex128).ravel()
    if est.size != ref.size or est.size == 0:
        raise PhyError(f"length mismatch: est {est.size}, ref {ref.size}")
    ref_power = float(np.sum(ref.real**2 + ref.imag**2))
    if ref_power == 0.0:
        raise PhyError("all-zero reference")
    err = est - ref
    return 100.0 * float(
        np.sqrt(np.sum(err.real**2 + err.imag**2) / ref_power)
    )


def compute_ber(bits, ref_bits) -> float:
    """Bit error rate: Hamming distance / length."""
    bits = np.asarray(bits).ravel()
    ref_bits = np.asarray(ref_bits).ravel()
    if bits.size != ref_bits.size or bits.size == 0:
        raise PhyError(f"length mismatch: {bits.size} vs {ref_bits.size}")
    return float(np.count_nonzero(bits != ref_bits)) / bits.size


# -- shared result containers ---------------------------------------------------


@dataclass
class ResourceGrid:
    """Frequency-domain samples, shape (num_streams, num_symbols, N_sc)."""

    samples: np.ndarray

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 3:
            raise PhyError(f"grid must be 3-d, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise PhyError("grid contains non-finite samples")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.samples.shape


@dataclass
class ChannelEstimate:
    """Per-subcarrier estimated channel, h[n] an (M, K) matrix."""

    h: np.ndarray  # (N_sc, M, K) complex
    source_subframe: int
    noise_var: float

    def __post_init__(self) -> None:
        if self.noise_var < 0:
            raise PhyError("noise_var must be >= 0")
        if not np.all(np.isfinite(self.h)):
            raise PhyError("channel estimate contains non-finite entries")


@dataclass
class DetectionResult:
    """Outcome of processing one subframe."""

    frame_seq: int
    subframe_idx: int
    equalized: np.ndarray  # (K, data_symbols, N_sc) complex
    bits: list[np.ndarray]  # per user, uint8 0/1 in (slot, data symbol, subcarrier, bit) order
    evm_per_user: np.ndarray  # percent, decision-directed
    noise_var: float
    erased_subcarriers: int = 0
    processing_time: float = 0.0
    processing_cycles: int = 0
    timestamps: dict = field(default_factory=dict)
