"""Budget math and offline scoring of loopback runs.

The rate and duty calculators reproduce the deployment's capacity arithmetic;
score_run joins a server run against the emitter's ground-truth record
(seeds) and reports BER/EVM/loss/latency without any hidden aggregation.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .config import FrameConfig, RunConfig, run_config_from_dict
from .frontend import ground_truth_bits, ground_truth_symbols
from .phy import compute_ber, compute_evm
from .wire import decode_result_datagram, iter_capture


class ProvenanceError(ValueError):
    """Reports being joined do not belong to the same run/configuration."""


def rate_budget(
    cfg: FrameConfig, num_ports: int = 2, num_antennas: int | None = None
) -> dict:
    """Ethernet throughput needed to stream every uplink symbol, in bytes
    per frame, MB/s, and per-port Gb/s.

    bytes/frame = N_sc * symbols_per_frame * antennas * 4 (I and Q, 2 bytes
    each); MB/s divides by the 10 ms frame; Gb/s multiplies by 8/1000.
    """
    if num_ports < 1:
        raise ValueError("num_ports must be >= 1")
    m = cfg.num_bs_antennas if num_antennas is None else num_antennas
    bytes_per_frame = cfg.used_subcarriers * cfg.symbols_per_frame * m * 4
    mb_per_s = bytes_per_frame / cfg.frame_duration / 1e6
    total_gbps = mb_per_s * 8.0 / 1000.0
    return {
        "num_antennas": m,
        "num_ports": num_ports,
        "bytes_per_frame": bytes_per_frame,
        "mb_per_s": mb_per_s,
        "total_gbps": total_gbps,
        "per_port_gbps": total_gbps / num_ports,
    }


def duty_cycle(cycles: float, clock_hz: float, frame_duration: float = 10e-3) -> dict:
    """Core time and duty fraction for a per-subframe cycle count."""
    if clock_hz <= 0:
        raise ValueError("clock_hz must be positive")
    if frame_duration <= 0:
        raise ValueError("frame_duration must be positive")
    time_s = cycles / clock_hz
    duty = time_s / frame_duration
    return {"time_s": time_s, "duty_fraction": duty, "duty_percent": 100.0 * duty}


# -- scoring -------------------------------------------------------------------


@dataclass
class UserSubframeRecord:
    """Receiver output for one (frame, subframe, user)."""

    frame_seq: int
    subframe_idx: int
    user: int
    bits: np.ndarray
    symbols: np.ndarray | None = None


def records_from_capture(capture_path: str) -> list[UserSubframeRecord]:
    records = []
    for datagram in iter_capture(capture_path):
        r = decode_result_datagram(datagram)
        records.append(
            UserSubframeRecord(
                frame_seq=r.frame_seq,
                subframe_idx=r.subframe_idx,
                user=r.user,
                bits=r.bits,
                symbols=r.symbols,
            )
        )
    return records


def _check_provenance(stream_report: dict, cfg: FrameConfig) -> None:
    frame_cfg = stream_report.get("config", {}).get("frame", {})
    checks = {
        "num_bs_antennas": cfg.num_bs_antennas,
        "num_users": cfg.num_users,
        "used_subcarriers": cfg.used_subcarriers,
        "num_subframes": cfg.num_subframes,
        "modulation_per_user": [m.value for m in cfg.modulation_per_user],
    }
    for key, expected in checks.items():
        got = frame_cfg.get(key)
        if got != expected:
            raise ProvenanceError(
                f"stream report frame.{key}={got!r} does not match scored "
                f"configuration {expected!r}"
            )


def score_records(
    records: list[UserSubframeRecord], stream_report: dict, cfg: FrameConfig
) -> dict:
    """Join receiver output with reconstructed ground truth, per user.

    BER is compute_ber over the raw concatenated streams; EVM (when symbol
    dumps exist) is against the true transmitted symbols.
    """
    _check_provenance(stream_report, cfg)
    seed = int(stream_report["master_seed"])
    first = int(stream_report.get("first_frame_seq", 0))
    frames_sent = int(stream_report["frames_sent"])
    per_user: dict[int, dict] = {
        u: {"rx": [], "tx": [], "sym_rx": [], "sym_tx": [], "subframes": 0}
        for u in range(cfg.num_users)
    }
    for rec in records:
        if not first <= rec.frame_seq < first + frames_sent:
            raise ProvenanceError(
                f"frame {rec.frame_seq} outside streamed range "
                f"[{first}, {first + frames_sent})"
            )
        truth = ground_truth_bits(cfg, seed, rec.frame_seq, rec.subframe_idx, rec.user)
        if truth.size != rec.bits.size:
            raise ProvenanceError(
                f"bit count {rec.bits.size} != expected {truth.size} for user "
                f"{rec.user} (modulation mismatch?)"
            )
        acc = per_user[rec.user]
        acc["rx"].append(np.asarray(rec.bits, dtype=np.uint8))
        acc["tx"].append(truth)
        acc["subframes"] += 1
        if rec.symbols is not None:
            acc["sym_rx"].append(np.asarray(rec.symbols, dtype=np.complex128))
            acc["sym_tx"].append(
                ground_truth_symbols(
                    cfg, seed, rec.frame_seq, rec.subframe_idx, rec.user
                ).ravel()
            )
    out = {}
    for u, acc in per_user.items():
        if not acc["subframes"]:
            out[str(u)] = {"subframes": 0, "bits": 0, "bit_errors": 0,
                           "ber": None, "evm_percent": None}
            continue
        rx = np.concatenate(acc["rx"])
        tx = np.concatenate(acc["tx"])
        errors = int(np.count_nonzero(rx != tx))
        entry = {
            "subframes": acc["subframes"],
            "bits": int(rx.size),
            "bit_errors": errors,
            "ber": compute_ber(rx, tx),
            "evm_percent": None,
        }
        if acc["sym_rx"]:
            entry["evm_percent"] = compute_evm(
                np.concatenate(acc["sym_rx"]), np.concatenate(acc["sym_tx"])
            )
        out[str(u)] = entry
    return out


def score_run(
    server_report: dict,
    stream_report: dict,
    capture_path: str | None = None,
) -> dict:
    """Full offline score: per-user BER/EVM, loss, latency, duty consistency."""
    run_cfg = run_config_from_dict(stream_report["config"])
    cfg = run_cfg.frame
    if capture_path is not None:
        records = records_from_capture(capture_path)
        per_user = score_records(records, stream_report, cfg)
        seen = {(r.frame_seq, r.subframe_idx) for r in records}
    else:
        per_user = server_report.get("per_user")
        if per_user is None:
            raise ProvenanceError(
                "no capture given and the server report carries no in-run scores"
            )
        seen = None

    first = int(stream_report.get("first_frame_seq", 0))
    frames_sent = int(stream_report["frames_sent"])
    lost = []
    if seen is not None:
        for f in range(first, first + frames_sent):
            for sf in range(1, cfg.num_subframes):
                if (f, sf) not in seen:
                    lost.append([f, sf])

    duty = []
    period = server_report.get("measured_frame_period_s") or run_cfg.frame_period
    for w in server_report.get("workers", []):
        expected = w["proc_time_mean_s"] / period if period else 0.0
        duty.append(
            {
                "worker": w["worker"],
                "busy_fraction": w["busy_fraction"],
                "proc_over_period": expected,
                "consistency_ratio": (
                    w["busy_fraction"] / expected if expected else None
                ),
            }
        )

    return {
        "per_user": per_user,
        "subframes_expected": frames_sent * cfg.active_subframes,
        "subframes_scored": (
            sum(v["subframes"] for v in per_user.values()) // max(1, cfg.num_users)
            if per_user else 0
        ),
        "lost_subframes": lost,
        "frames": {
            "in": server_report.get("frames_in"),
            "completed": server_report.get("frames_completed"),
            "with_misses": server_report.get("frames_with_misses"),
            "incomplete": server_report.get("frames_incomplete"),
        },
        "deadline_misses": server_report.get("deadline_misses"),
        "latency": server_report.get("latency"),
        "measured_frame_period_s": server_report.get("measured_frame_period_s"),
        "duty_consistency": duty,
    }


def dump_constellation(capture_path: str, user: int, out_path: str) -> int:
    """Write the equalized symbols of one user as CSV rows of i,q.

    Rows are ordered by (frame_seq, subframe_idx) and, inside one subframe,
    by (slot, data symbol, subcarrier) - the dump order of the datagrams.
    Returns the number of rows written.
    """
    if user < 0:
        raise ValueError("user index must be >= 0")
    records = records_from_capture(capture_path)
    users_seen = {r.user for r in records}
    if records and user not in users_seen:
        raise ValueError(
            f"user {user} out of range; capture has users {sorted(users_seen)}"
        )
    mine = [r for r in records if r.user == user]
    if any(r.symbols is None for r in mine):
        raise ValueError("capture has no symbol dumps (enable capture_symbols)")
    mine.sort(key=lambda r: (r.frame_seq, r.subframe_idx))
    rows = 0
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "q"])
        for rec in mine:
            for s in rec.symbols:
                writer.writerow([repr(float(s.real)), repr(float(s.imag))])
                rows += 1
    return rows


def load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
