import numpy as np
import pytest

from neurocomm.channel import ChannelConfig
from neurocomm.system import SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_system():
    """Small link used wherever a full pipeline is needed quickly."""
    return SystemConfig(
        D_u=(4,), D_v=2, L=8, L_b=2, scheme="LTH",
        enc_hidden=3, dec_hidden=3, hyper_hidden=3, L_p=2,
        channel=ChannelConfig(K=1, N_T=2, N_R=2),
    )
