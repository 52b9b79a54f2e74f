"""Bit-exact packet formats and subframe reassembly.

Byte layouts here are normative and documented in docs/wire.md. Sample
packets carry one fragment of one (antenna, symbol) row of a subframe as
little-endian Q1.15 I/Q pairs; reassembly is order-free because every packet
is fully addressed by its header.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, FrameConfig, Modulation

MAGIC = 0x5250
OUT_MAGIC = 0x5251
VERSION = 1
HEADER_LEN = 24
FLAG_FRAME_START = 0x01
OUT_FLAG_SYMBOLS = 0x01

_HEADER = struct.Struct("<HBBIBBBBHH8s")
_OUT_HEADER = struct.Struct("<HBBIBBBBI")
OUT_HEADER_LEN = _OUT_HEADER.size

MOD_CODES = {
    Modulation.QPSK: 0,
    Modulation.QAM16: 1,
    Modulation.QAM64: 2,
    Modulation.QAM256: 3,
}
MOD_FROM_CODE = {v: k for k, v in MOD_CODES.items()}


class WireError(ValueError):
    """Base class for packet-level errors."""


class MalformedPacketError(WireError):
    """Bad magic, version, or impossible structure."""


class TruncatedPacketError(WireError):
    """Payload shorter or longer than the header promises."""


class RangeError(WireError):
    """Header indices outside the configured dimensions."""


# -- Q1.15 quantization ---------------------------------------------------------

_Q15 = 32768.0


def quantize_samples(values: np.ndarray) -> np.ndarray:
    """Complex array -> int16 (..., 2) Q1.15, round half away from zero,
    saturating to [-1, 1 - 2**-15]."""
    values = np.asarray(values, dtype=np.complex128)
    parts = np.empty(values.shape + (2,), dtype=np.float64)
    parts[..., 0] = values.real
    parts[..., 1] = values.imag
    parts *= _Q15
    rounded = np.sign(parts) * np.floor(np.abs(parts) + 0.5)
    return np.clip(rounded, -32768, 32767).astype(np.int16)


def dequantize_samples(raw: np.ndarray) -> np.ndarray:
    """int16 (..., 2) -> complex array, value / 2**15 per component."""
    raw = np.asarray(raw, dtype=np.int16)
    f = raw.astype(np.float64) / _Q15
    return f[..., 0] + 1j * f[..., 1]


def quantize_q15(value: complex) -> bytes:
    """One complex sample -> 4 bytes (real int16 LE, imag int16 LE)."""
    return quantize_samples(np.asarray(value)).tobytes()


def dequantize_q15(data: bytes) -> complex:
    if len(data) != 4:
        raise TruncatedPacketError(f"Q1.15 sample needs 4 bytes, got {len(data)}")
    return complex(dequantize_samples(np.frombuffer(data, dtype="<i2").reshape(2)))


# -- sample packet header --------------------------------------------------------


@dataclass(frozen=True)
class SampleHeader:
    """24-byte little-endian label header of one sample packet."""

    frame_seq: int
    subframe_idx: int
    slot_idx: int
    symbol_idx: int
    antenna_idx: int
    subcarrier_start: int
    sample_count: int
    flags: int = 0

    @property
    def is_marker(self) -> bool:
        return bool(self.flags & FLAG_FRAME_START)

    def pack(self) -> bytes:
        return _HEADER.pack(
            MAGIC,
            VERSION,
            self.flags,
            self.frame_seq,
            self.subframe_idx,
            self.slot_idx,
            self.symbol_idx,
            self.antenna_idx,
            self.subcarrier_start,
            self.sample_count,
            b"\x00" * 8,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "SampleHeader":
        if len(data) < HEADER_LEN:
            raise MalformedPacketError(
                f"packet too short for header: {len(data)} < {HEADER_LEN}"
            )
        magic, version, flags, frame_seq, sf, slot, sym, ant, start, count, _ = (
            _HEADER.unpack_from(data)
        )
        if magic != MAGIC:
            raise MalformedPacketError(f"bad magic 0x{magic:04x}")
        if version != VERSION:
            raise MalformedPacketError(f"unsupported version {version}")
        return cls(
            frame_seq=frame_seq,
            subframe_idx=sf,
            slot_idx=slot,
            symbol_idx=sym,
            antenna_idx=ant,
            subcarrier_start=start,
            sample_count=count,
            flags=flags,
        )


def make_marker_packet(frame_seq: int) -> bytes:
    """Frame-start marker: flags bit0 set, subframe 0, no payload."""
    return SampleHeader(
        frame_seq=frame_seq,
        subframe_idx=0,
        slot_idx=0,
        symbol_idx=0,
        antenna_idx=0,
        subcarrier_start=0,
        sample_count=0,
        flags=FLAG_FRAME_START,
    ).pack()


def encode_packets(
    grid: np.ndarray,
    frame_seq: int,
    subframe_idx: int,
    cfg: FrameConfig,
    samples_per_packet: int = 300,
    wire_scale: float = 1.0,
) -> list[bytes]:
    """Serialize one subframe grid (M, symbols_per_subframe, N_sc) to packets.

    Emission order is antenna-major, then symbol, then fragment. Samples are
    divided by wire_scale before quantization (see docs/wire.md).
    """
    n_sc = cfg.used_subcarriers
    if n_sc % samples_per_packet != 0:
        raise ConfigError(
            f"samples_per_packet ({samples_per_packet}) must divide "
            f"used_subcarriers ({n_sc})"
        )
    grid = np.asarray(grid)
    expected = (cfg.num_bs_antennas, cfg.symbols_per_subframe, n_sc)
    if grid.shape != expected:
        raise ConfigError(f"grid shape {grid.shape} != {expected}")
    if wire_scale != 1.0:
        grid = grid / wire_scale
    q = quantize_samples(grid)  # (M, S, N, 2) int16
    packets = []
    fragments = n_sc // samples_per_packet
    per_slot = cfg.symbols_per_slot
    for ant in range(cfg.num_bs_antennas):
        for sym in range(cfg.symbols_per_subframe):
            row = q[ant, sym]
            for frag in range(fragments):
                start = frag * samples_per_packet
                header = SampleHeader(
                    frame_seq=frame_seq,
                    subframe_idx=subframe_idx,
                    slot_idx=sym // per_slot,
                    symbol_idx=sym % per_slot,
                    antenna_idx=ant,
                    subcarrier_start=start,
                    sample_count=samples_per_packet,
                )
                packets.append(
                    header.pack() + row[start : start + samples_per_packet].tobytes()
                )
    return packets


def decode_packet_raw(data: bytes) -> tuple[SampleHeader, np.ndarray]:
    """Parse header and return the payload as an int16 (n, 2) view (no copy)."""
    header = SampleHeader.unpack(data)
    payload_len = len(data) - HEADER_LEN
    if payload_len != 4 * header.sample_count:
        raise TruncatedPacketError(
            f"payload {payload_len} bytes, header promises {4 * header.sample_count}"
        )
    raw = np.frombuffer(data, dtype="<i2", offset=HEADER_LEN).reshape(-1, 2)
    return header, raw


def decode_packet(
    data: bytes, cfg: FrameConfig | None = None
) -> tuple[SampleHeader, np.ndarray]:
    """Parse and dequantize one packet; optionally range-check against cfg."""
    header, raw = decode_packet_raw(data)
    if cfg is not None:
        _check_ranges(header, cfg)
    return header, dequantize_samples(raw)


def _check_ranges(header: SampleHeader, cfg: FrameConfig) -> None:
    if header.is_marker:
        return
    if not 1 <= header.subframe_idx < cfg.num_subframes:
        raise RangeError(f"subframe_idx {header.subframe_idx} out of range")
    if header.slot_idx >= cfg.slots_per_subframe:
        raise RangeError(f"slot_idx {header.slot_idx} out of range")
    if header.symbol_idx >= cfg.symbols_per_slot:
        raise RangeError(f"symbol_idx {header.symbol_idx} out of range")
    if header.antenna_idx >= cfg.num_bs_antennas:
        raise RangeError(f"antenna_idx {header.antenna_idx} out of range")
    if header.subcarrier_start + header.sample_count > cfg.used_subcarriers:
        raise RangeError(
            f"subcarriers [{header.subcarrier_start}, "
            f"{header.subcarrier_start + header.sample_count}) exceed "
            f"{cfg.used_subcarriers}"
        )


# -- subframe reassembly ----------------------------------------------------------


class FeedEvent(enum.Enum):
    ACCEPTED = "accepted"
    SUBFRAME_COMPLETE = "subframe_complete"
    DUPLICATE = "duplicate"
    STALE = "stale"
    MARKER_SEEN = "marker_seen"


class SubframeBuffer:
    """Reassembly target for one (frame_seq, subframe_idx).

    Stores raw Q1.15 words; grid() materializes complex samples once, on the
    processing side. After seal() the buffer belongs to exactly one processing
    worker and any further write is a programming error.
    """

    def __init__(
        self,
        cfg: FrameConfig,
        frame_seq: int,
        subframe_idx: int,
        samples_per_packet: int,
        expected_antennas: frozenset[int],
    ):
        self.cfg = cfg
        self.frame_seq = frame_seq
        self.subframe_idx = subframe_idx
        self.samples_per_packet = samples_per_packet
        self.expected_antennas = expected_antennas
        self.fragments_per_row = cfg.used_subcarriers // samples_per_packet
        self.iq = np.zeros(
            (cfg.num_bs_antennas, cfg.symbols_per_subframe, cfg.used_subcarriers, 2),
            dtype=np.int16,
        )
        self.filled = np.zeros(
            (cfg.num_bs_antennas, cfg.symbols_per_subframe, self.fragments_per_row),
            dtype=bool,
        )
        self.expected_fragments = (
            len(expected_antennas) * cfg.symbols_per_subframe * self.fragments_per_row
        )
        self.filled_count = 0
        self.first_arrival: float | None = None
        self.last_arrival: float | None = None
        self._sealed = False

    def write(self, antenna: int, symbol: int, fragment: int, raw: np.ndarray, now: float) -> bool:
        """Store one fragment; returns False if it was already present."""
        if self._sealed:
            raise RuntimeError(
                f"write to sealed buffer ({self.frame_seq},{self.subframe_idx}): "
                "ownership was handed off"
            )
        if self.filled[antenna, symbol, fragment]:
            return False
        start = fragment * self.samples_per_packet
        self.iq[antenna, symbol, start : start + self.samples_per_packet] = raw
        self.filled[antenna, symbol, fragment] = True
        self.filled_count += 1
        if self.first_arrival is None:
            self.first_arrival = now
        self.last_arrival = now
        return True

    @property
    def complete(self) -> bool:
        return self.filled_count == self.expected_fragments

    def seal(self) -> None:
        self._sealed = True

    def missing_fragments(self) -> list[tuple[int, int, int]]:
        """(antenna, symbol, fragment) triples still unfilled, expected antennas only."""
        missing = []
        for ant in sorted(self.expected_antennas):
            rows, frags = np.nonzero(~self.filled[ant])
            missing.extend((ant, int(s), int(f)) for s, f in zip(rows, frags))
        return missing

    def payload_bytes(self) -> int:
        return self.filled_count * self.samples_per_packet * 4

    def grid(self) -> np.ndarray:
        """Dequantized complex grid (M, symbols_per_subframe, N_sc)."""
        return dequantize_samples(self.iq)

    def merge_from(self, other: "SubframeBuffer") -> None:
        """Absorb another receiver's disjoint antenna rows of the same subframe."""
        if (other.frame_seq, other.subframe_idx) != (self.frame_seq, self.subframe_idx):
            raise ValueError("merging buffers of different subframes")
        if self.expected_antennas & other.expected_antennas:
            raise ValueError("merging buffers with overlapping antenna ownership")
        for ant in other.expected_antennas:
            self.iq[ant] = other.iq[ant]
            self.filled[ant] = other.filled[ant]
        self.filled_count += other.filled_count
        self.expected_antennas = self.expected_antennas | other.expected_antennas
        self.expected_fragments += other.expected_fragments
        for t in (other.first_arrival, other.last_arrival):
            if t is not None:
                if self.first_arrival is None or t < self.first_arrival:
                    self.first_arrival = t
                if self.last_arrival is None or t > self.last_arrival:
                    self.last_arrival = t


@dataclass
class AssemblerStats:
    accepted: int = 0
    duplicates: int = 0
    stale: int = 0
    markers: int = 0
    completed: int = 0
    evicted_incomplete: int = 0
    accepted_payload_bytes: int = 0


class SubframeAssembler:
    """Single-writer reassembly state for one packet stream.

    Exactly one receive worker owns an assembler. When a subframe completes,
    the buffer is handed off (sealed reference returned) and the assembler
    never touches it again; re-received fragments of a completed subframe
    report Duplicate. Frames older than the 2-frame active window are Stale.
    """

    WINDOW = 2

    def __init__(
        self,
        cfg: FrameConfig,
        samples_per_packet: int = 300,
        expected_antennas=None,
    ):
        if cfg.used_subcarriers % samples_per_packet != 0:
            raise ConfigError(
                f"samples_per_packet ({samples_per_packet}) must divide "
                f"used_subcarriers ({cfg.used_subcarriers})"
            )
        self.cfg = cfg
        self.samples_per_packet = samples_per_packet
        if expected_antennas is None:
            expected_antennas = range(cfg.num_bs_antennas)
        self.expected_antennas = frozenset(int(a) for a in expected_antennas)
        self.current_frame: int | None = None
        self.buffers: dict[tuple[int, int], SubframeBuffer] = {}
        self.completed_keys: set[tuple[int, int]] = set()
        self.incomplete: list[SubframeBuffer] = []
        self.stats = AssemblerStats()

    def _window_low(self) -> int:
        if self.current_frame is None:
            return 0
        return self.current_frame - (self.WINDOW - 1)

    def _advance(self, frame_seq: int) -> None:
        if self.current_frame is not None and frame_seq <= self.current_frame:
            return
        self.current_frame = frame_seq
        low = self._window_low()
        for key in [k for k in self.buffers if k[0] < low]:
            buf = self.buffers.pop(key)
            self.incomplete.append(buf)
            self.stats.evicted_incomplete += 1
        self.completed_keys = {k for k in self.completed_keys if k[0] >= low}

    def feed(
        self, header: SampleHeader, raw: np.ndarray, now: float
    ) -> tuple[FeedEvent, SubframeBuffer | None]:
        """Route one decoded packet; returns (event, completed buffer or None)."""
        if header.is_marker:
            if (
                self.current_frame is not None
                and header.frame_seq < self._window_low()
            ):
                self.stats.stale += 1
                return FeedEvent.STALE, None
            self._advance(header.frame_seq)
            self.stats.markers += 1
            return FeedEvent.MARKER_SEEN, None
        _check_ranges(header, self.cfg)
        if header.antenna_idx not in self.expected_antennas:
            raise RangeError(
                f"antenna {header.antenna_idx} not expected on this stream"
            )
        if header.sample_count != self.samples_per_packet:
            raise RangeError(
                f"sample_count {header.sample_count} != configured "
                f"{self.samples_per_packet}"
            )
        if header.subcarrier_start % self.samples_per_packet != 0:
            raise RangeError(
                f"subcarrier_start {header.subcarrier_start} not fragment-aligned"
            )
        if self.current_frame is not None and header.frame_seq < self._window_low():
            self.stats.stale += 1
            return FeedEvent.STALE, None
        self._advance(header.frame_seq)
        key = (header.frame_seq, header.subframe_idx)
        if key in self.completed_keys:
            self.stats.duplicates += 1
            return FeedEvent.DUPLICATE, None
        buf = self.buffers.get(key)
        if buf is None:
            buf = SubframeBuffer(
                self.cfg,
                header.frame_seq,
                header.subframe_idx,
                self.samples_per_packet,
                self.expected_antennas,
            )
            self.buffers[key] = buf
        symbol = header.slot_idx * self.cfg.symbols_per_slot + header.symbol_idx
        fragment = header.subcarrier_start // self.samples_per_packet
        if not buf.write(header.antenna_idx, symbol, fragment, raw, now):
            self.stats.duplicates += 1
            return FeedEvent.DUPLICATE, None
        self.stats.accepted += 1
        self.stats.accepted_payload_bytes += header.sample_count * 4
        if buf.complete:
            del self.buffers[key]
            self.completed_keys.add(key)
            self.stats.completed += 1
            buf.seal()
            return FeedEvent.SUBFRAME_COMPLETE, buf
        return FeedEvent.ACCEPTED, None

    def feed_datagram(
        self, data: bytes, now: float
    ) -> tuple[FeedEvent, SubframeBuffer | None]:
        header, raw = decode_packet_raw(data)
        return self.feed(header, raw, now)

    def flush_incomplete(self) -> list[SubframeBuffer]:
        """Evict all in-progress buffers (shutdown / timeout query)."""
        out = self.incomplete + list(self.buffers.values())
        self.stats.evicted_incomplete += len(self.buffers)
        self.incomplete = []
        self.buffers = {}
        return out


# -- detector output datagrams -----------------------------------------------------


@dataclass
class ResultRecord:
    """Decoded detector-output datagram for one (frame, subframe, user)."""

    frame_seq: int
    subframe_idx: int
    user: int
    modulation: Modulation
    bits: np.ndarray  # uint8 0/1
    symbols: np.ndarray | None = None  # complex64 equalized dump, if enabled


def encode_result_datagram(
    frame_seq: int,
    subframe_idx: int,
    user: int,
    modulation: Modulation,
    bits: np.ndarray,
    symbols: np.ndarray | None = None,
) -> bytes:
    bits = np.asarray(bits, dtype=np.uint8)
    flags = OUT_FLAG_SYMBOLS if symbols is not None else 0
    head = _OUT_HEADER.pack(
        OUT_MAGIC,
        VERSION,
        flags,
        frame_seq,
        subframe_idx,
        user,
        MOD_CODES[modulation],
        0,
        bits.size,
    )
    body = np.packbits(bits).tobytes()
    if symbols is not None:
        sym = np.asarray(symbols, dtype=np.complex64)
        body += struct.pack("<I", sym.size)
        parts = np.empty((sym.size, 2), dtype="<f4")
        parts[:, 0] = sym.real
        parts[:, 1] = sym.imag
        body += parts.tobytes()
    return head + body


def decode_result_datagram(data: bytes) -> ResultRecord:
    if len(data) < OUT_HEADER_LEN:
        raise MalformedPacketError("result datagram too short")
    magic, version, flags, frame_seq, sf, user, mod_code, _, bit_count = (
        _OUT_HEADER.unpack_from(data)
    )
    if magic != OUT_MAGIC:
        raise MalformedPacketError(f"bad result magic 0x{magic:04x}")
    if version != VERSION:
        raise MalformedPacketError(f"unsupported result version {version}")
    if mod_code not in MOD_FROM_CODE:
        raise MalformedPacketError(f"unknown modulation code {mod_code}")
    nbytes = (bit_count + 7) // 8
    offset = OUT_HEADER_LEN
    if len(data) < offset + nbytes:
        raise TruncatedPacketError("result bits truncated")
    packed = np.frombuffer(data, dtype=np.uint8, count=nbytes, offset=offset)
    bits = np.unpackbits(packed)[:bit_count]
    offset += nbytes
    symbols = None
    if flags & OUT_FLAG_SYMBOLS:
        if len(data) < offset + 4:
            raise TruncatedPacketError("symbol count truncated")
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        if len(data) < offset + 8 * count:
            raise TruncatedPacketError("symbol dump truncated")
        parts = np.frombuffer(data, dtype="<f4", count=2 * count, offset=offset)
        parts = parts.reshape(-1, 2)
        symbols = (parts[:, 0] + 1j * parts[:, 1]).astype(np.complex64)
    return ResultRecord(
        frame_seq=frame_seq,
        subframe_idx=sf,
        user=user,
        modulation=MOD_FROM_CODE[mod_code],
        bits=bits,
        symbols=symbols,
    )


# -- capture files ------------------------------------------------------------------


def write_capture_record(fh, datagram: bytes) -> None:
    """Append one datagram to a capture stream: u32 LE length + bytes."""
    fh.write(struct.pack("<I", len(datagram)))
    fh.write(datagram)


def iter_capture(path: str):
    """Yield datagrams from a capture file."""
    with open(path, "rb") as fh:
        while True:
            head = fh.read(4)
            if not head:
                return
            if len(head) != 4:
                raise TruncatedPacketError("capture length field truncated")
            (length,) = struct.unpack("<I", head)
            data = fh.read(length)
            if len(data) != length:
                raise TruncatedPacketError("capture record truncated")
            yield data
