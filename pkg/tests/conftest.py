import numpy as np
import pytest

from rapro.config import (
    ChannelSpec,
    FrameConfig,
    Modulation,
    PipelineConfig,
    RunConfig,
    WireConfig,
)


@pytest.fixture
def default_cfg():
    return FrameConfig()


@pytest.fixture
def small_cfg():
    """Fast configuration for pipeline and socket tests."""
    return FrameConfig(
        num_bs_antennas=4,
        num_users=2,
        fft_size=256,
        used_subcarriers=120,
        num_subframes=4,
        modulation_per_user=(Modulation.QPSK, Modulation.QAM16),
    )


@pytest.fixture
def small_run(small_cfg):
    return RunConfig(
        frame=small_cfg,
        wire=WireConfig(samples_per_packet=60),
        channel=ChannelSpec(model="tdl", num_taps=4, noise_var=0.0),
        pipeline=PipelineConfig(num_receive_workers=1, idle_timeout=1.0),
        realtime_factor=0.5,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def free_udp_port() -> int:
    import socket

    s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


@pytest.fixture
def udp_port():
    return free_udp_port()
