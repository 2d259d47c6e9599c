import numpy as np
import pytest
import torch
from hypothesis import settings

from codesep.atsp import ATSPConfig, ATSPModule
from codesep.btd import BTDConfig, BTDModel
from codesep.codec import CodecConfig, CodecModel

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")
torch.set_num_threads(1)

TINY_CODEC = CodecConfig(sample_rate_hz=8000, mdct_frame_length=32, latent_dim=4, num_stages=3,
                         codebook_size=8, hidden=16, depth=1)
TINY_BTD = BTDConfig(sample_rate_hz=8000, n_mels=12, mel_shift=8, num_down=1, stride=2, d_model=16,
                     n_heads=2, codebook_size=8)
TINY_ATSP = ATSPConfig(latent_dim=4, num_stages=3, codebook_size=8, d_model=16, n_lstm=1,
                       n_conformer=1, n_heads=2, conv_kernel=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_codec():
    torch.manual_seed(0)
    return CodecModel(TINY_CODEC).eval()


@pytest.fixture
def tiny_btd():
    torch.manual_seed(1)
    return BTDModel(TINY_BTD).eval()


@pytest.fixture
def tiny_atsp():
    torch.manual_seed(2)
    return ATSPModule(TINY_ATSP).eval()
