"""Ground-truth MIMO channel emulation between the users and the antenna array.

Channels are block-constant over one 10 ms frame and fully determined by
(model, config, seed), so a run can be re-scored offline from seeds alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ChannelSpec, ConfigError, FrameConfig


@dataclass
class ChannelRealization:
    """Per-subcarrier channel matrices H[n], shape (N_sc, M, K)."""

    h: np.ndarray
    model: str
    seed: int

    def __post_init__(self) -> None:
        if self.h.ndim != 3:
            raise ConfigError(f"channel must be (N_sc, M, K), got {self.h.shape}")
        if not np.all(np.isfinite(self.h)):
            raise ConfigError("channel realization contains non-finite entries")


def tap_power_profile(spec: ChannelSpec) -> np.ndarray:
    """Tap powers, normalized to sum to one."""
    if spec.tap_powers is not None:
        p = np.asarray(spec.tap_powers, dtype=np.float64)
        if np.any(p < 0) or p.sum() <= 0:
            raise ConfigError("tap_powers must be non-negative with positive sum")
    else:
        p = np.ones(spec.num_taps)
    return p / p.sum()


def tdl_frequency_response(
    taps: np.ndarray, num_subcarriers: int, fft_size: int
) -> np.ndarray:
    """H[n] = sum_l g_l exp(-2j pi n l / fft_size) for n in [0, num_subcarriers)."""
    num_taps = taps.shape[-1]
    n = np.arange(num_subcarriers)[:, None]
    ell = np.arange(num_taps)[None, :]
    phases = np.exp(-2j * np.pi * n * ell / fft_size)  # (N, L)
    return np.tensordot(phases, taps, axes=([1], [-1]))  # (N, ...)


def gen_channel(
    spec: ChannelSpec,
    cfg: FrameConfig,
    seed: int,
    num_subcarriers: int | None = None,
) -> ChannelRealization:
    """Draw one frame's channel realization, deterministic in the seed.

    num_subcarriers overrides the evaluation grid (debug: pass cfg.fft_size
    to evaluate the tapped-delay-line response on the full FFT grid).
    """
    M, K = cfg.num_bs_antennas, cfg.num_users
    N = cfg.used_subcarriers if num_subcarriers is None else num_subcarriers
    rng = np.random.default_rng(seed)
    if spec.model == "identity":
        if M != K:
            raise ConfigError("identity channel requires num_bs_antennas == num_users")
        h = np.broadcast_to(np.eye(M, dtype=np.complex128), (N, M, M)).copy()
    elif spec.model == "flat_rayleigh":
        flat = (rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K)))
        flat /= np.sqrt(2.0)
        h = np.broadcast_to(flat, (N, M, K)).copy()
    elif spec.model == "tdl":
        powers = tap_power_profile(spec)
        shape = (M, K, spec.num_taps)
        taps = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        taps *= np.sqrt(powers / 2.0)
        h = np.ascontiguousarray(
            tdl_frequency_response(taps, N, cfg.fft_size)
        )  # (N, M, K)
    else:  # pragma: no cover - ChannelSpec validates
        raise ConfigError(f"unknown channel model {spec.model!r}")
    return ChannelRealization(h=h, model=spec.model, seed=seed)


def apply_channel(
    tx_grids: np.ndarray,
    channel: ChannelRealization,
    noise_var: float,
    noise_seed: int,
    data_noise_only: bool = False,
    pilot_symbol_stride: int | None = None,
) -> np.ndarray:
    """Receive tx_grids (K, S, N_sc) through the channel: y = H x + w.

    Noise is CN(0, noise_var I) per resource element, deterministic in
    noise_seed. With data_noise_only, symbols at multiples of
    pilot_symbol_stride (the per-slot pilot positions) stay noiseless - a
    debug knob for separating detector noise from channel-estimation noise.
    Returns the received grid over the antennas, shape (M, S, N_sc).
    """
    K_g, S, N = tx_grids.shape
    N_h, M, K = channel.h.shape
    if K_g != K or N_h != N:
        raise ConfigError(
            f"tx grid {tx_grids.shape} does not match channel {channel.h.shape}"
        )
    # y[m, s, n] = sum_k H[n, m, k] x[k, s, n]
    rx = np.einsum("nmk,ksn->msn", channel.h, tx_grids, optimize=True)
    if noise_var > 0:
        rng = np.random.default_rng(noise_seed)
        w = rng.standard_normal((M, S, N)) + 1j * rng.standard_normal((M, S, N))
        w *= np.sqrt(noise_var / 2.0)
        if data_noise_only:
            if not pilot_symbol_stride:
                raise ConfigError("data_noise_only requires pilot_symbol_stride")
            w[:, ::pilot_symbol_stride, :] = 0.0
        rx += w
    return rx
