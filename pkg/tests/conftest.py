"""Shared fixtures: miniature network configs and small synthetic corpora."""

import pytest
import torch

from src.corpus import default_speaker_specs, generate_synthetic_corpus
from src.speaker_encoder import SpeakerEncoderConfig, SpeakerEncoderNet
from src.vc_model import VcModelConfig


def tiny_se_config(**overrides) -> SpeakerEncoderConfig:
    values = dict(
        mel_bins=80,
        chunk_len=4,
        kernel_sizes=(1, 3),
        bank_channels=8,
        pool_width=2,
        hidden_dim=16,
        embedding_dim=8,
    )
    values.update(overrides)
    return SpeakerEncoderConfig(**values)


def tiny_vc_config(**overrides) -> VcModelConfig:
    values = dict(
        mel_bins=80,
        bottleneck=8,
        downsample_factor=4,
        enc_channels=16,
        enc_kernel=3,
        enc_layers=2,
        dim_emb=8,
        dec_rnn=16,
        dec_channels=16,
        dec_kernel=3,
        dec_layers=1,
        postnet_channels=16,
        postnet_kernel=3,
        postnet_layers=2,
    )
    values.update(overrides)
    return VcModelConfig(**values)


class IdentityNet:
    """Stand-in conversion net whose codes are the input and whose decoder returns the codes."""

    downsample_factor = 1
    dtype = torch.float32

    def encode(self, mel: torch.Tensor) -> torch.Tensor:
        return mel

    def decode(self, codes: torch.Tensor, emb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return codes, codes

    def eval(self):
        return self


@pytest.fixture
def identity_net():
    return IdentityNet()


@pytest.fixture
def tiny_se():
    torch.manual_seed(0)
    return SpeakerEncoderNet(tiny_se_config()).eval()


@pytest.fixture(scope="session")
def small_corpus():
    """3 speakers x 5 utterances of 0.5 s (40 frames); 3 train / 2 test per speaker."""
    return generate_synthetic_corpus(default_speaker_specs(3), utts_per_speaker=5, utt_seconds=0.5, train_ratio=0.6)


@pytest.fixture(scope="session")
def probe_corpus():
    """4 speakers x 6 utterances; 3 test utterances per speaker, 108 cross-speaker pairs."""
    return generate_synthetic_corpus(default_speaker_specs(4), utts_per_speaker=6, utt_seconds=0.5, train_ratio=0.5)
