"""Unit tests for the conversion network."""

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from src.dsp import LOG_FLOOR, MelSpectrogram
from src.errors import FrameAlignmentError
from src.speaker_encoder import SpeakerEmbedding
from src.vc_model import (
    ContentCode,
    InstanceNorm,
    VcModelConfig,
    VcNet,
    convert,
    decode,
    encode_content,
    instance_norm,
    pad_to_multiple,
)
from tests.conftest import tiny_vc_config


def random_mel(frames: int, mel_bins: int = 80, seed: int = 0) -> MelSpectrogram:
    return MelSpectrogram(np.random.default_rng(seed).normal(-4.0, 2.0, size=(frames, mel_bins)))


def unit_embedding(dim: int = 8, seed: int = 0) -> SpeakerEmbedding:
    values = np.random.default_rng(seed).normal(size=dim)
    return SpeakerEmbedding(values / np.linalg.norm(values))


@pytest.fixture
def tiny_net():
    torch.manual_seed(0)
    return VcNet(tiny_vc_config()).eval()


class TestInstanceNorm:
    """Test cases for parameter-free instance normalization."""

    def test_two_values(self):
        """Test that [1, 3] normalizes to [-1, 1] as epsilon vanishes."""
        out = instance_norm(np.array([[1.0], [3.0]]), epsilon=1e-12)
        np.testing.assert_allclose(out[:, 0], [-1.0, 1.0], atol=1e-9)

    def test_constant_channel(self):
        """Test that a constant channel becomes zeros."""
        out = instance_norm(np.array([[5.0], [5.0], [5.0]]), epsilon=1e-5)
        assert out[:, 0].tolist() == [0.0, 0.0, 0.0]

    def test_standardized_input_is_fixed_point(self):
        """Test that zero-mean unit-variance channels pass through up to O(epsilon)."""
        x = np.random.default_rng(0).normal(size=(50, 4))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        np.testing.assert_allclose(instance_norm(x), x, atol=1e-4)

    def test_moments_on_random_inputs(self):
        """Test per-channel mean and variance of the output."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = rng.normal(rng.uniform(-10, 10), rng.uniform(0.5, 5), size=(int(rng.integers(8, 64)), 6))
            out = instance_norm(x)
            assert np.all(np.abs(out.mean(axis=0)) < 1e-6)
            assert np.all(np.abs(out.var(axis=0) - 1.0) < 1e-3)

    def test_invariant_to_channel_affine_corruption(self):
        """Test that x * a + b per channel (a > 0) gives the same output."""
        rng = np.random.default_rng(2)
        x = rng.normal(size=(40, 5))
        a = rng.uniform(0.5, 3.0, size=5)
        b = rng.uniform(-4.0, 4.0, size=5)
        np.testing.assert_allclose(instance_norm(x * a + b, 1e-12), instance_norm(x, 1e-12), atol=1e-6)

    def test_module_matches_numpy(self):
        """Test that the torch module agrees with the numpy function."""
        x = np.random.default_rng(3).normal(size=(30, 7))
        module_out = InstanceNorm()(torch.from_numpy(x.T).unsqueeze(0))[0].numpy().T
        np.testing.assert_allclose(module_out, instance_norm(x), atol=1e-10)

    def test_rejects_bad_shape(self):
        """Test that a 1-D input is rejected."""
        with pytest.raises(ValueError, match="instance_norm"):
            instance_norm(np.zeros(5))


class TestConfig:
    """Test cases for architecture validation."""

    def test_odd_bottleneck_rejected(self):
        """Test that the bottleneck must split evenly across LSTM directions."""
        with pytest.raises(ValidationError, match="even"):
            VcModelConfig(bottleneck=7)

    def test_even_kernel_rejected(self):
        """Test that conv kernels must be odd."""
        with pytest.raises(ValidationError, match="odd"):
            VcModelConfig(enc_kernel=4)

    def test_unknown_norm_rejected(self):
        """Test that only instance and batch normalization are accepted."""
        with pytest.raises(ValidationError):
            VcModelConfig(content_norm="layer")


class TestEncode:
    """Test cases for content encoding."""

    def test_default_code_shape(self):
        """Test that 64 frames at factor 16 give a (4, 128) code."""
        torch.manual_seed(0)
        net = VcNet(VcModelConfig())
        code = encode_content(net, random_mel(64))

        assert isinstance(code, ContentCode)
        assert (code.steps, code.dim) == (4, 128)

    def test_unaligned_frames(self, tiny_net):
        """Test that the frame count must be a multiple of the downsample factor."""
        with pytest.raises(FrameAlignmentError, match="frames not aligned to downsample factor"):
            encode_content(tiny_net, random_mel(30))

    def test_repeated_calls_identical(self, tiny_net):
        """Test that encoding is deterministic with fixed weights."""
        mel = random_mel(32)
        assert np.array_equal(encode_content(tiny_net, mel).values, encode_content(tiny_net, mel).values)

    def test_gain_shift_removed_after_first_norm(self):
        """Test that a constant log-gain offset vanishes at the first normalized activation."""
        torch.manual_seed(0)
        net = VcNet(tiny_vc_config()).double().eval()
        x = torch.from_numpy(random_mel(32).values.astype(np.float64)).unsqueeze(0)

        with torch.no_grad():
            base = net.content_encoder.first_normalized(x)
            shifted = net.content_encoder.first_normalized(x + 3.7)
        np.testing.assert_allclose(shifted.numpy(), base.numpy(), atol=1e-8)

    def test_batch_norm_variant(self):
        """Test that the batch-norm encoder produces codes of the same shape."""
        torch.manual_seed(0)
        net = VcNet(tiny_vc_config(content_norm="batch")).eval()
        assert encode_content(net, random_mel(32)).values.shape == (8, 8)


class TestDecode:
    """Test cases for decoding and the postnet."""

    def test_output_shapes(self, tiny_net):
        """Test that both outputs have steps * factor frames and 80 bins."""
        code = encode_content(tiny_net, random_mel(32))
        pre, post = decode(tiny_net, code, unit_embedding())

        assert pre.values.shape == (32, 80)
        assert post.values.shape == (32, 80)

    def test_zero_postnet_is_identity_refinement(self, tiny_net):
        """Test that a postnet with zero weights leaves the decoder output unchanged."""
        with torch.no_grad():
            for conv in tiny_net.postnet.convs:
                conv.weight.zero_()
                conv.bias.zero_()
        pre, post = decode(tiny_net, encode_content(tiny_net, random_mel(16)), unit_embedding())
        assert np.array_equal(pre.values, post.values)

    def test_code_width_mismatch(self, tiny_net):
        """Test that a code of the wrong width is rejected."""
        with pytest.raises(ValueError, match="bottleneck"):
            decode(tiny_net, ContentCode(np.zeros((4, 6))), unit_embedding())

    def test_embedding_width_mismatch(self, tiny_net):
        """Test that an embedding of the wrong width is rejected."""
        with pytest.raises(ValueError, match="dim_emb"):
            decode(tiny_net, ContentCode(np.zeros((4, 8))), unit_embedding(dim=5))

    def test_forward_returns_codes(self, tiny_net):
        """Test the batched forward pass."""
        pre, post, codes = tiny_net(torch.zeros(2, 16, 80), torch.zeros(2, 8))
        assert pre.shape == post.shape == (2, 16, 80)
        assert codes.shape == (2, 4, 8)


class TestConvert:
    """Test cases for end-to-end conversion of one spectrogram."""

    def test_untrained_output_is_finite_and_source_length(self, tiny_net, tiny_se):
        """Test that an untrained net converts unaligned inputs to the source's frame count."""
        out = convert(tiny_net, tiny_se, random_mel(37), random_mel(40, seed=1))

        assert out.frames == 37
        assert out.mel_bins == 80
        assert np.all(np.isfinite(out.values))

    def test_pad_to_multiple(self):
        """Test right-padding with the log floor."""
        padded = pad_to_multiple(np.zeros((5, 2), dtype=np.float32), 4)
        assert padded.shape == (8, 2)
        assert np.all(padded[5:] == np.float32(LOG_FLOOR))
        assert pad_to_multiple(np.zeros((8, 2)), 4).shape == (8, 2)


class TestCheckpoint:
    """Test cases for saving and restoring the conversion network."""

    def test_roundtrip(self, tmp_path, tiny_net):
        """Test that a restored network encodes identically."""
        tiny_net.save(tmp_path / "vc.ckpt", meta={"iteration": 3})
        restored = VcNet.from_checkpoint(tmp_path / "vc.ckpt")

        mel = random_mel(16)
        assert restored.config == tiny_net.config
        assert np.array_equal(encode_content(restored, mel).values, encode_content(tiny_net, mel).values)

    def test_missing(self, tmp_path):
        """Test that a missing checkpoint raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError, match="Checkpoint not found"):
            VcNet.from_checkpoint(tmp_path / "none.ckpt")
