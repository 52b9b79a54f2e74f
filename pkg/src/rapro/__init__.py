"""Multi-user MIMO-OFDM uplink over UDP: emulator, baseband server, analytics."""

from .analytics import duty_cycle, rate_budget, score_run
from .channel import ChannelRealization, apply_channel, gen_channel
from .config import (
    ChannelSpec,
    ConfigError,
    FrameConfig,
    Modulation,
    PipelineConfig,
    RunConfig,
    WireConfig,
    load_config,
)
from .frontend import build_uplink_frame, stream_frames
from .phy import (
    ChannelEstimate,
    DetectionResult,
    ResourceGrid,
    compute_ber,
    compute_evm,
    estimate_noise_variance,
    gen_pilot_grid,
    interpolate_channel,
    lmmse_detect,
    ls_estimate,
    qam_demodulate,
    qam_modulate,
)
from .server import BasebandServer, process_subframe
from .wire import (
    SampleHeader,
    SubframeAssembler,
    decode_packet,
    dequantize_q15,
    encode_packets,
    quantize_q15,
)

__version__ = "0.1.0"

__all__ = [
    "BasebandServer",
    "ChannelEstimate",
    "ChannelRealization",
    "ChannelSpec",
    "ConfigError",
    "DetectionResult",
    "FrameConfig",
    "Modulation",
    "PipelineConfig",
    "ResourceGrid",
    "RunConfig",
    "SampleHeader",
    "SubframeAssembler",
    "WireConfig",
    "apply_channel",
    "build_uplink_frame",
    "compute_ber",
    "compute_evm",
    "decode_packet",
    "dequantize_q15",
    "duty_cycle",
    "encode_packets",
    "estimate_noise_variance",
    "gen_channel",
    "gen_pilot_grid",
    "interpolate_channel",
    "lmmse_detect",
    "load_config",
    "ls_estimate",
    "process_subframe",
    "qam_demodulate",
    "qam_modulate",
    "quantize_q15",
    "rate_budget",
    "score_run",
    "stream_frames",
    "__version__",
]
