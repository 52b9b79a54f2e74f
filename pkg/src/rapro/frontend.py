"""Uplink traffic source: builds frames, applies the channel, streams UDP.

Emulates everything on the far side of the Ethernet boundary: the users'
modulators, the propagation channel, and the coprocessor that quantizes and
packetizes subcarrier samples. Content is fully determined by the master
seed, so a receiver's output can be scored offline against reconstructed
ground truth (see ground_truth_bits / ground_truth_symbols).
"""
from __future__ import annotations

import json
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import apply_channel, gen_channel
from .config import FrameConfig, RunConfig, run_config_to_dict
from .phy import PhyError, gen_pilot_grid, qam_modulate
from .wire import encode_packets, make_marker_packet

DOMAIN_PAYLOAD = 0
DOMAIN_CHANNEL = 1
DOMAIN_NOISE = 2


def derive_seed(master_seed: int, domain: int, *indices: int) -> int:
    """Deterministic per-(domain, indices) sub-seed of the master seed."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(domain, *indices))
    return int(ss.generate_state(1, np.uint64)[0])


def payload_bits(
    cfg: FrameConfig, master_seed: int, frame_seq: int, user: int
) -> np.ndarray:
    """The PRBS payload bits user carries in one frame."""
    count = cfg.payload_bits_per_frame(user)
    rng = np.random.default_rng(derive_seed(master_seed, DOMAIN_PAYLOAD, frame_seq, user))
    return rng.integers(0, 2, size=count, dtype=np.uint8)


def ground_truth_bits(
    cfg: FrameConfig, master_seed: int, frame_seq: int, subframe_idx: int, user: int
) -> np.ndarray:
    """Payload bits of one (frame, subframe, user), in transmission order."""
    per_sf = cfg.payload_bits_per_subframe(user)
    bits = payload_bits(cfg, master_seed, frame_seq, user)
    return bits[(subframe_idx - 1) * per_sf : subframe_idx * per_sf]


def ground_truth_symbols(
    cfg: FrameConfig, master_seed: int, frame_seq: int, subframe_idx: int, user: int
) -> np.ndarray:
    """Modulated data symbols of one subframe, shape (data_symbols, N_sc)."""
    bits = ground_truth_bits(cfg, master_seed, frame_seq, subframe_idx, user)
    sym = qam_modulate(bits, cfg.modulation_per_user[user])
    return sym.reshape(cfg.data_symbols_per_subframe, cfg.used_subcarriers)


def build_uplink_frame(
    cfg: FrameConfig, payload_bits_per_user, pilot_seeds
) -> np.ndarray:
    """Per-user transmit grids for one frame, shape (K, symbols_per_frame, N_sc).

    Symbol 0 of each slot is the user's pilot comb; the remaining symbols of
    the slot carry modulated payload on every subcarrier, consumed in
    (subframe, slot, data symbol, subcarrier, bit) order.
    """
    K, N = cfg.num_users, cfg.used_subcarriers
    grid = np.zeros((K, cfg.symbols_per_frame, N), dtype=np.complex128)
    for user in range(K):
        bits = np.asarray(payload_bits_per_user[user])
        expected = cfg.payload_bits_per_frame(user)
        if bits.size != expected:
            raise PhyError(
                f"user {user} payload has {bits.size} bits, expected {expected}"
            )
        pilot = gen_pilot_grid(cfg, user, pilot_seeds[user])
        if bits.size:
            data = qam_modulate(bits, cfg.modulation_per_user[user]).reshape(
                cfg.active_subframes,
                cfg.slots_per_subframe,
                cfg.data_symbols_per_slot,
                N,
            )
        for sf in range(cfg.active_subframes):
            for slot in range(cfg.slots_per_subframe):
                base = sf * cfg.symbols_per_subframe + slot * cfg.symbols_per_slot
                grid[user, base] = pilot
                for d in range(cfg.data_symbols_per_slot):
                    grid[user, base + 1 + d] = data[sf, slot, d]
    return grid


def build_frame_datagrams(
    run: RunConfig, master_seed: int, frame_seq: int, num_dests: int
) -> list[list[bytes]]:
    """All datagrams of one frame, split by antenna parity across destinations.

    Element d is the ordered datagram list for destination d; the marker
    packet is replicated to every destination and leads each list.
    """
    cfg = run.frame
    pilot_seeds = run.wire.pilot_seeds(cfg.num_users)
    bits = [payload_bits(cfg, master_seed, frame_seq, u) for u in range(cfg.num_users)]
    tx = build_uplink_frame(cfg, bits, pilot_seeds)
    realization = gen_channel(
        run.channel, cfg, derive_seed(master_seed, DOMAIN_CHANNEL, frame_seq)
    )
    rx = apply_channel(
        tx,
        realization,
        run.channel.noise_var,
        derive_seed(master_seed, DOMAIN_NOISE, frame_seq),
        data_noise_only=run.channel.data_noise_only,
        pilot_symbol_stride=cfg.symbols_per_slot,
    )
    marker = make_marker_packet(frame_seq)
    out: list[list[bytes]] = [[marker] for _ in range(num_dests)]
    per_antenna = cfg.symbols_per_subframe * (
        cfg.used_subcarriers // run.wire.samples_per_packet
    )
    for sf in range(1, cfg.num_subframes):
        sym0 = (sf - 1) * cfg.symbols_per_subframe
        packets = encode_packets(
            rx[:, sym0 : sym0 + cfg.symbols_per_subframe, :],
            frame_seq,
            sf,
            cfg,
            samples_per_packet=run.wire.samples_per_packet,
            wire_scale=run.wire.wire_scale,
        )
        for i, pkt in enumerate(packets):
            antenna = i // per_antenna
            out[antenna % num_dests].append(pkt)
    return out


@dataclass
class StreamReport:
    """Everything needed to account for and re-score one emulator run."""

    frames_sent: int = 0
    datagrams_sent: int = 0
    bytes_sent: int = 0
    payload_bytes_sent: int = 0
    markers_sent: int = 0
    duration_s: float = 0.0
    master_seed: int = 0
    first_frame_seq: int = 0
    realtime_factor: float = 1.0
    destinations: list = field(default_factory=list)
    pilot_seeds: list = field(default_factory=list)
    pacing: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "frames_sent": self.frames_sent,
            "datagrams_sent": self.datagrams_sent,
            "bytes_sent": self.bytes_sent,
            "payload_bytes_sent": self.payload_bytes_sent,
            "markers_sent": self.markers_sent,
            "duration_s": self.duration_s,
            "master_seed": self.master_seed,
            "first_frame_seq": self.first_frame_seq,
            "realtime_factor": self.realtime_factor,
            "destinations": self.destinations,
            "pilot_seeds": self.pilot_seeds,
            "pacing": self.pacing,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _percentile(values: list[float], q: float) -> float:
    return float(np.percentile(values, q)) if values else 0.0


def stream_frames(
    run: RunConfig,
    destinations: list[tuple[str, int]],
    num_frames: int,
    master_seed: int,
    first_frame_seq: int = 0,
    socket_factory=None,
) -> StreamReport:
    """Stream num_frames over UDP with real-time pacing; returns the report.

    Frame f's marker is due at f * period and subframe i's packets at
    i * period / num_subframes into the frame; packets are sent when due,
    never early. A frame-construction worker runs ahead of the sender with a
    bounded queue (depth 2). Pacing overruns are reported, not fatal.
    """
    cfg = run.frame
    period = run.frame_period
    subframe_slot = period / cfg.num_subframes
    ndest = len(destinations)
    if ndest < 1:
        raise ValueError("need at least one destination")

    report = StreamReport(
        master_seed=master_seed,
        first_frame_seq=first_frame_seq,
        realtime_factor=run.realtime_factor,
        destinations=[f"{h}:{p}" for h, p in destinations],
        pilot_seeds=list(run.wire.pilot_seeds(cfg.num_users)),
        config=run_config_to_dict(run),
    )
    if num_frames <= 0:
        report.pacing = {"mean_s": 0.0, "p50_s": 0.0, "p95_s": 0.0, "p99_s": 0.0,
                         "max_s": 0.0, "mean_frac_of_period": 0.0, "overruns": 0}
        return report

    prepared: queue.Queue = queue.Queue(maxsize=2)
    build_error: list[BaseException] = []

    def builder():
        try:
            for f in range(num_frames):
                prepared.put(
                    build_frame_datagrams(run, master_seed, first_frame_seq + f, ndest)
                )
        except BaseException as exc:  # surfaced by the sender
            build_error.append(exc)
            prepared.put(None)

    worker = threading.Thread(target=builder, name="frame-builder", daemon=True)
    worker.start()

    if socket_factory is None:
        socket_factory = lambda: socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    socks = []
    pacing_errors: list[float] = []
    overruns = 0
    try:
        for dest in destinations:
            s = socket_factory()
            s.connect(dest)
            socks.append(s)
        t0 = time.perf_counter()
        for f in range(num_frames):
            per_dest = prepared.get()
            if per_dest is None:
                raise build_error[0]
            frame_start = t0 + f * period
            # marker first, then each subframe within its slot of the frame
            for d in range(ndest):
                _wait_until(frame_start)
                socks[d].send(per_dest[d][0])
                report.datagrams_sent += 1
                report.bytes_sent += len(per_dest[d][0])
                report.markers_sent += 1
            cursor = [1] * ndest
            chunk = [(len(per_dest[d]) - 1 + cfg.active_subframes - 1) // cfg.active_subframes
                     for d in range(ndest)]
            for sf in range(1, cfg.num_subframes):
                due = frame_start + sf * subframe_slot
                _wait_until(due)
                err = time.perf_counter() - due
                pacing_errors.append(max(0.0, err))
                if err > subframe_slot:
                    overruns += 1
                for d in range(ndest):
                    end = min(cursor[d] + chunk[d], len(per_dest[d]))
                    for pkt in per_dest[d][cursor[d] : end]:
                        socks[d].send(pkt)
                        report.datagrams_sent += 1
                        report.bytes_sent += len(pkt)
                        report.payload_bytes_sent += len(pkt) - 24
                    cursor[d] = end
            report.frames_sent += 1
        report.duration_s = time.perf_counter() - t0
    finally:
        for s in socks:
            s.close()
        worker.join(timeout=5.0)

    report.pacing = {
        "mean_s": float(np.mean(pacing_errors)) if pacing_errors else 0.0,
        "p50_s": _percentile(pacing_errors, 50),
        "p95_s": _percentile(pacing_errors, 95),
        "p99_s": _percentile(pacing_errors, 99),
        "max_s": max(pacing_errors) if pacing_errors else 0.0,
        "mean_frac_of_period": (
            float(np.mean(pacing_errors)) / period if pacing_errors else 0.0
        ),
        "overruns": overruns,
    }
    return report


def _wait_until(deadline: float) -> None:
    while True:
        remaining = deadline - time.perf_counter()
        if remaining <= 0:
            return
        time.sleep(min(remaining, 0.01))
