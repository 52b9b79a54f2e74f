"""Static configuration: air-interface dimensioning, wire constants, run parameters.

All tools (emulate / serve / budget / score) consume the same YAML document,
versioned with ``config_version: 1``. See ``example_config()`` for the schema.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

import yaml

CONFIG_VERSION = 1


class Modulation(enum.Enum):
    """Square QAM constellations available per user."""

    QPSK = "qpsk"
    QAM16 = "qam16"
    QAM64 = "qam64"
    QAM256 = "qam256"

    @property
    def bits_per_symbol(self) -> int:
        return {"qpsk": 2, "qam16": 4, "qam64": 6, "qam256": 8}[self.value]

    @classmethod
    def parse(cls, name: str) -> "Modulation":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigError(
                f"unknown modulation {name!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class FrameConfig:
    """Dimensioning of the radio frame and the deployment.

    The frame is 10 ms of ``num_subframes`` subframes; subframe 0 is reserved
    for the frame-start marker and subframes 1.. carry uplink traffic. Each
    subframe holds ``slots_per_subframe`` slots of ``symbols_per_slot`` OFDM
    symbols, the first symbol of every slot being the pilot.
    """

    num_bs_antennas: int = 16
    num_users: int = 4
    fft_size: int = 2048
    used_subcarriers: int = 1200
    sample_rate: float = 30.72e6
    frame_duration: float = 10e-3
    num_subframes: int = 10
    slots_per_subframe: int = 2
    symbols_per_slot: int = 3
    modulation_per_user: tuple[Modulation, ...] = (
        Modulation.QPSK,
        Modulation.QAM16,
        Modulation.QAM16,
        Modulation.QAM16,
    )
    cpu_clock_hz: float = 2.8e9

    def __post_init__(self) -> None:
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        if self.num_bs_antennas < self.num_users:
            raise ConfigError(
                f"num_bs_antennas ({self.num_bs_antennas}) must be >= "
                f"num_users ({self.num_users})"
            )
        if self.used_subcarriers > self.fft_size:
            raise ConfigError("used_subcarriers must not exceed fft_size")
        if self.used_subcarriers % self.num_users != 0:
            raise ConfigError(
                f"used_subcarriers ({self.used_subcarriers}) must be divisible "
                f"by num_users ({self.num_users}) for the orthogonal pilot comb"
            )
        if self.num_subframes < 2:
            raise ConfigError("num_subframes must be >= 2 (subframe 0 is the marker)")
        if self.slots_per_subframe < 1 or self.symbols_per_slot < 1:
            raise ConfigError("slots_per_subframe and symbols_per_slot must be >= 1")
        if len(self.modulation_per_user) != self.num_users:
            raise ConfigError(
                f"modulation_per_user has {len(self.modulation_per_user)} entries, "
                f"expected {self.num_users}"
            )
        if self.sample_rate <= 0 or self.frame_duration <= 0 or self.cpu_clock_hz <= 0:
            raise ConfigError("rates and durations must be positive")

    # -- derived dimensioning -------------------------------------------------

    @property
    def active_subframes(self) -> int:
        """Subframes that carry uplink symbols (all but the marker slot 0)."""
        return self.num_subframes - 1

    @property
    def symbols_per_subframe(self) -> int:
        return self.slots_per_subframe * self.symbols_per_slot

    @property
    def symbols_per_frame(self) -> int:
        """Uplink OFDM symbols streamed per frame (pilots included): 54 at defaults."""
        return self.active_subframes * self.symbols_per_subframe

    @property
    def data_symbols_per_slot(self) -> int:
        return self.symbols_per_slot - 1

    @property
    def data_symbols_per_subframe(self) -> int:
        return self.slots_per_subframe * self.data_symbols_per_slot

    @property
    def data_symbols_per_frame(self) -> int:
        return self.active_subframes * self.data_symbols_per_subframe

    @property
    def samples_per_frame(self) -> int:
        return round(self.sample_rate * self.frame_duration)

    @property
    def comb_points(self) -> int:
        """Pilot comb length per user: subcarriers / users."""
        return self.used_subcarriers // self.num_users

    def payload_bits_per_frame(self, user: int) -> int:
        """Data-bit capacity of one frame for a given user."""
        bps = self.modulation_per_user[user].bits_per_symbol
        return self.used_subcarriers * self.data_symbols_per_frame * bps

    def payload_bits_per_subframe(self, user: int) -> int:
        bps = self.modulation_per_user[user].bits_per_symbol
        return self.used_subcarriers * self.data_symbols_per_subframe * bps


@dataclass(frozen=True)
class WireConfig:
    """Deployment constants of the packet boundary.

    ``wire_scale`` is the linear factor samples are divided by before Q1.15
    quantization so multi-user sums stay inside [-1, 1). The receive chain is
    scale invariant (the channel estimate absorbs the factor), so only the
    emitter applies it. ``pilot_seed_base`` makes pilot sequences a shared
    constant: user k's pilot PRBS seed is ``pilot_seed_base + k``.
    """

    samples_per_packet: int = 300
    wire_scale: float = 8.0
    pilot_seed_base: int = 1000

    def __post_init__(self) -> None:
        if self.samples_per_packet < 1:
            raise ConfigError("samples_per_packet must be >= 1")
        if self.wire_scale <= 0:
            raise ConfigError("wire_scale must be positive")

    def pilot_seeds(self, num_users: int) -> tuple[int, ...]:
        return tuple(self.pilot_seed_base + k for k in range(num_users))


@dataclass(frozen=True)
class PipelineConfig:
    """Baseband-server worker layout and policies."""

    num_receive_workers: int = 2
    deadline: float | None = None  # per-subframe deadline; None -> frame period
    core_affinity: str = "none"  # "none" | "one-core-per-worker"
    sigma2_policy: str = "estimate"  # "estimate" | "fixed"
    sigma2_fixed: float = 0.0
    sigma2_min: float = 1e-6
    idle_timeout: float = 5.0
    capture_symbols: bool = False

    def __post_init__(self) -> None:
        if self.num_receive_workers < 1:
            raise ConfigError("num_receive_workers must be >= 1")
        if self.core_affinity not in ("none", "one-core-per-worker"):
            raise ConfigError("core_affinity must be 'none' or 'one-core-per-worker'")
        if self.sigma2_policy not in ("estimate", "fixed"):
            raise ConfigError("sigma2_policy must be 'estimate' or 'fixed'")
        if self.sigma2_min < 0 or self.sigma2_fixed < 0:
            raise ConfigError("noise variances must be >= 0")


@dataclass(frozen=True)
class ChannelSpec:
    """Channel-emulator selection shared through the config file."""

    model: str = "tdl"  # "identity" | "flat_rayleigh" | "tdl"
    num_taps: int = 4
    tap_powers: tuple[float, ...] | None = None  # None -> equal power
    noise_var: float = 0.0
    data_noise_only: bool = False  # debug: keep pilot symbols noiseless

    def __post_init__(self) -> None:
        if self.model not in ("identity", "flat_rayleigh", "tdl"):
            raise ConfigError(f"unknown channel model {self.model!r}")
        if self.num_taps < 1:
            raise ConfigError("num_taps must be >= 1")
        if self.noise_var < 0:
            raise ConfigError("noise_var must be >= 0")
        if self.tap_powers is not None and len(self.tap_powers) != self.num_taps:
            raise ConfigError("tap_powers length must equal num_taps")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, loadable from one YAML document."""

    frame: FrameConfig = field(default_factory=FrameConfig)
    wire: WireConfig = field(default_factory=WireConfig)
    channel: ChannelSpec = field(default_factory=ChannelSpec)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    realtime_factor: float = 1.0

    def __post_init__(self) -> None:
        if self.realtime_factor <= 0:
            raise ConfigError("realtime_factor must be positive")

    @property
    def frame_period(self) -> float:
        """Wall-clock duration of one frame at the configured pacing."""
        return self.frame.frame_duration / self.realtime_factor


# -- (de)serialization --------------------------------------------------------


def _dataclass_from_mapping(cls, data: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{name}' section: {sorted(unknown)}")
    return cls(**data)


def run_config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    version = doc.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config_version {version!r} not supported (expected {CONFIG_VERSION})"
        )
    frame_raw = dict(doc.get("frame", {}))
    if "modulation_per_user" in frame_raw:
        frame_raw["modulation_per_user"] = tuple(
            Modulation.parse(m) for m in frame_raw["modulation_per_user"]
        )
    channel_raw = dict(doc.get("channel", {}))
    if channel_raw.get("tap_powers") is not None:
        channel_raw["tap_powers"] = tuple(float(p) for p in channel_raw["tap_powers"])
    return RunConfig(
        frame=_dataclass_from_mapping(FrameConfig, frame_raw, "frame"),
        wire=_dataclass_from_mapping(WireConfig, dict(doc.get("wire", {})), "wire"),
        channel=_dataclass_from_mapping(ChannelSpec, channel_raw, "channel"),
        pipeline=_dataclass_from_mapping(
            PipelineConfig, dict(doc.get("pipeline", {})), "pipeline"
        ),
        realtime_factor=float(doc.get("realtime_factor", 1.0)),
    )


def run_config_to_dict(cfg: RunConfig) -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "frame": {
            "num_bs_antennas": cfg.frame.num_bs_antennas,
            "num_users": cfg.frame.num_users,
            "fft_size": cfg.frame.fft_size,
            "used_subcarriers": cfg.frame.used_subcarriers,
            "sample_rate": cfg.frame.sample_rate,
            "frame_duration": cfg.frame.frame_duration,
            "num_subframes": cfg.frame.num_subframes,
            "slots_per_subframe": cfg.frame.slots_per_subframe,
            "symbols_per_slot": cfg.frame.symbols_per_slot,
            "modulation_per_user": [m.value for m in cfg.frame.modulation_per_user],
            "cpu_clock_hz": cfg.frame.cpu_clock_hz,
        },
        "wire": {
            "samples_per_packet": cfg.wire.samples_per_packet,
            "wire_scale": cfg.wire.wire_scale,
            "pilot_seed_base": cfg.wire.pilot_seed_base,
        },
        "channel": {
            "model": cfg.channel.model,
            "num_taps": cfg.channel.num_taps,
            "tap_powers": list(cfg.channel.tap_powers)
            if cfg.channel.tap_powers is not None
            else None,
            "noise_var": cfg.channel.noise_var,
            "data_noise_only": cfg.channel.data_noise_only,
        },
        "pipeline": {
            "num_receive_workers": cfg.pipeline.num_receive_workers,
            "deadline": cfg.pipeline.deadline,
            "core_affinity": cfg.pipeline.core_affinity,
            "sigma2_policy": cfg.pipeline.sigma2_policy,
            "sigma2_fixed": cfg.pipeline.sigma2_fixed,
            "sigma2_min": cfg.pipeline.sigma2_min,
            "idle_timeout": cfg.pipeline.idle_timeout,
            "capture_symbols": cfg.pipeline.capture_symbols,
        },
        "realtime_factor": cfg.realtime_factor,
    }


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return run_config_from_dict(doc)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(run_config_to_dict(cfg), fh, sort_keys=False)


def example_config() -> str:
    """The default configuration rendered as YAML (the documented schema)."""
    return yaml.safe_dump(run_config_to_dict(RunConfig()), sort_keys=False)
