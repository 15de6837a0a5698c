"""Conversion network: content encoder, speaker-conditioned decoder, postnet.

The content encoder is an AutoVC-style conv + BiLSTM stack whose conv
outputs pass through parameter-free instance normalization, which strips
per-channel offsets and scales (global speaker traits) before the
bottleneck. Codes are sampled every ``downsample_factor`` frames, copied
back up in the decoder, concatenated with the broadcast speaker embedding
and decoded to a mel-spectrogram that the postnet refines residually.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Literal, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .checkpoint import load_checkpoint, save_checkpoint
from .dsp import LOG_FLOOR, MelSpectrogram
from .errors import FrameAlignmentError
from .speaker_encoder import SpeakerEmbedding, SpeakerEncoderNet, embed


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "vc_model"
NORM_EPSILON = 1e-5


class VcModelConfig(BaseModel):
    """Architecture of the conversion network.

    ``bottleneck`` and ``downsample_factor`` are independent so a bottleneck
    sweep changes the code width only.
    """
    model_config = ConfigDict(extra="forbid")

    mel_bins: Annotated[int, Field(ge=1)] = 80
    bottleneck: Annotated[int, Field(ge=2, description="Content code width (even: split across BiLSTM directions)")] = 128
    downsample_factor: Annotated[int, Field(ge=1, description="Frames per content code step")] = 16
    enc_channels: Annotated[int, Field(ge=1)] = 512
    enc_kernel: Annotated[int, Field(ge=1)] = 5
    enc_layers: Annotated[int, Field(ge=1)] = 3
    enc_rnn_layers: Annotated[int, Field(ge=1)] = 1
    dim_emb: Annotated[int, Field(ge=1, description="Speaker embedding width")] = 256
    dec_rnn: Annotated[int, Field(ge=1)] = 1024
    dec_channels: Annotated[int, Field(ge=1)] = 512
    dec_kernel: Annotated[int, Field(ge=1)] = 5
    dec_layers: Annotated[int, Field(ge=0)] = 3
    postnet_channels: Annotated[int, Field(ge=1)] = 512
    postnet_kernel: Annotated[int, Field(ge=1)] = 5
    postnet_layers: Annotated[int, Field(ge=1)] = 5
    content_norm: Annotated[
        Literal["instance", "batch"],
        Field(description="Normalization after each content-encoder conv"),
    ] = "instance"
    norm_epsilon: Annotated[float, Field(gt=0)] = NORM_EPSILON

    @field_validator("bottleneck")
    @classmethod
    def _even_bottleneck(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"bottleneck must be even, got {value}")
        return value

    @field_validator("enc_kernel", "dec_kernel", "postnet_kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {value}")
        return value


@dataclass(frozen=True, eq=False)
class ContentCode:
    """Bottleneck content representation, shape (steps, dim)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or not np.all(np.isfinite(values)):
            raise ValueError(f"content code must be a finite 2-D array, got shape {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def instance_norm(features: np.ndarray, epsilon: float = NORM_EPSILON) -> np.ndarray:
    """Normalize each channel of a (time, channels) array over time.

    ``out[:, c] = (x[:, c] - mean) / sqrt(var + epsilon)`` with the biased
    variance and no learned affine.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"instance_norm expects a (time, channels) array with time >= 1, got {x.shape}")
    mean = x.mean(axis=0, keepdims=True)
    var = x.var(axis=0, keepdims=True)
    return (x - mean) / np.sqrt(var + epsilon)


class InstanceNorm(nn.Module):
    """Parameter-free instance normalization over time for (batch, channels, time)."""

    def __init__(self, epsilon: float = NORM_EPSILON):
        super().__init__()
        self.epsilon = epsilon

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=-1, keepdim=True)
        var = x.var(dim=-1, unbiased=False, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.epsilon)


class ContentEncoder(nn.Module):
    """Conv stack with per-layer normalization, then a BiLSTM sampled at the downsample rate."""

    def __init__(self, config: VcModelConfig):
        super().__init__()
        self.config = config
        self.convs = nn.ModuleList()
        self.norms = nn.ModuleList()
        for i in range(config.enc_layers):
            # Replicate padding keeps a constant input offset constant over time,
            # so instance normalization removes it exactly.
            self.convs.append(nn.Conv1d(
                config.mel_bins if i == 0 else config.enc_channels,
                config.enc_channels,
                kernel_size=config.enc_kernel,
                padding=config.enc_kernel // 2,
                padding_mode="replicate",
            ))
            if config.content_norm == "instance":
                self.norms.append(InstanceNorm(config.norm_epsilon))
            else:
                self.norms.append(nn.BatchNorm1d(config.enc_channels, eps=config.norm_epsilon))
        self.lstm = nn.LSTM(
            config.enc_channels,
            config.bottleneck // 2,
            num_layers=config.enc_rnn_layers,
            batch_first=True,
            bidirectional=True,
        )

    def first_normalized(self, mel: torch.Tensor) -> torch.Tensor:
        """Output of the first conv after normalization, (batch, channels, frames)."""
        return self.norms[0](self.convs[0](mel.transpose(1, 2)))

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = mel.transpose(1, 2)
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(norm(conv(x)))
        outputs, _ = self.lstm(x.transpose(1, 2))

        half = self.config.bottleneck // 2
        freq = self.config.downsample_factor
        forward_out = outputs[:, freq - 1::freq, :half]
        backward_out = outputs[:, ::freq, half:]
        return torch.cat([forward_out, backward_out], dim=-1)


class Decoder(nn.Module):
    """LSTM over (upsampled code ⊕ speaker embedding), conv layers, linear projection to mel bins."""

    def __init__(self, config: VcModelConfig):
        super().__init__()
        self.lstm = nn.LSTM(config.bottleneck + config.dim_emb, config.dec_rnn, batch_first=True)
        self.convs = nn.ModuleList([
            nn.Conv1d(
                config.dec_rnn if i == 0 else config.dec_channels,
                config.dec_channels,
                kernel_size=config.dec_kernel,
                padding=config.dec_kernel // 2,
            )
            for i in range(config.dec_layers)
        ])
        out_width = config.dec_channels if config.dec_layers > 0 else config.dec_rnn
        self.projection = nn.Linear(out_width, config.mel_bins)

    def forward(self, codes_up: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        emb = emb.unsqueeze(1).expand(-1, codes_up.size(1), -1)
        x, _ = self.lstm(torch.cat([codes_up, emb], dim=-1))
        x = x.transpose(1, 2)
        for conv in self.convs:
            x = F.relu(conv(x))
        return self.projection(x.transpose(1, 2))


class Postnet(nn.Module):
    """Conv stack predicting a residual correction; tanh on every layer but the last."""

    def __init__(self, config: VcModelConfig):
        super().__init__()
        n = config.postnet_layers
        self.convs = nn.ModuleList([
            nn.Conv1d(
                config.mel_bins if i == 0 else config.postnet_channels,
                config.mel_bins if i == n - 1 else config.postnet_channels,
                kernel_size=config.postnet_kernel,
                padding=config.postnet_kernel // 2,
            )
            for i in range(n)
        ])

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        x = mel.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = torch.tanh(x)
        return x.transpose(1, 2)


class VcNet(nn.Module):
    """Content encoder + decoder + postnet."""

    def __init__(self, config: VcModelConfig):
        super().__init__()
        self.config = config
        self.content_encoder = ContentEncoder(config)
        self.decoder = Decoder(config)
        self.postnet = Postnet(config)

    @property
    def downsample_factor(self) -> int:
        return self.config.downsample_factor

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode(self, mel: torch.Tensor) -> torch.Tensor:
        """Content codes of a (batch, frames, mel_bins) tensor, (batch, frames / factor, bottleneck).

        Raises:
            FrameAlignmentError: If frames is not a multiple of the downsample factor
        """
        frames = mel.size(1)
        if frames == 0 or frames % self.downsample_factor:
            raise FrameAlignmentError(frames, self.downsample_factor)
        if mel.size(2) != self.config.mel_bins:
            raise ValueError(f"expected {self.config.mel_bins} mel bins, got {mel.size(2)}")
        return self.content_encoder(mel)

    def decode(self, codes: torch.Tensor, emb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Decode codes with a speaker embedding; returns (pre-postnet, post-postnet) mels."""
        if codes.size(-1) != self.config.bottleneck:
            raise ValueError(f"content code width {codes.size(-1)} does not match bottleneck {self.config.bottleneck}")
        if emb.size(-1) != self.config.dim_emb:
            raise ValueError(f"speaker embedding width {emb.size(-1)} does not match dim_emb {self.config.dim_emb}")
        codes_up = codes.repeat_interleave(self.downsample_factor, dim=1)
        pre = self.decoder(codes_up, emb)
        return pre, pre + self.postnet(pre)

    def forward(self, mel: torch.Tensor, emb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        codes = self.encode(mel)
        pre, post = self.decode(codes, emb)
        return pre, post, codes

    def save(self, path: str | Path, meta: Optional[dict] = None) -> str:
        """Persist weights and architecture; returns the file sha256."""
        return save_checkpoint(path, CHECKPOINT_KIND, self.config.model_dump(mode="json"), self.state_dict(), meta)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "VcNet":
        header, state_dict = load_checkpoint(path, kind=CHECKPOINT_KIND)
        net = cls(VcModelConfig.model_validate(header["hparams"]))
        net.load_state_dict(state_dict)
        net.eval()
        return net


def pad_to_multiple(values: np.ndarray, factor: int, fill: float = LOG_FLOOR) -> np.ndarray:
    """Right-pad a (frames, bins) array with ``fill`` rows up to a multiple of ``factor``."""
    remainder = values.shape[0] % factor
    if remainder == 0:
        return values
    pad = np.full((factor - remainder, values.shape[1]), fill, dtype=values.dtype)
    return np.concatenate([values, pad], axis=0)


def _as_batch(mel: MelSpectrogram, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(mel.values).to(dtype).unsqueeze(0)


def encode_content(net: VcNet, mel: MelSpectrogram) -> ContentCode:
    """Content code of one spectrogram (eval mode).

    Raises:
        FrameAlignmentError: If frames is not a multiple of the downsample factor
    """
    net.eval()
    with torch.no_grad():
        codes = net.encode(_as_batch(mel, net.dtype))[0]
    return ContentCode(codes.cpu().numpy())


def decode(net: VcNet, code: ContentCode, spk: SpeakerEmbedding) -> tuple[MelSpectrogram, MelSpectrogram]:
    """Decode a content code with a speaker embedding.

    Returns:
        Tuple of (decoder output, postnet-refined output), each with
        ``code.steps * downsample_factor`` frames

    Raises:
        ValueError: If code or embedding width does not match the network
    """
    if code.dim != net.config.bottleneck:
        raise ValueError(f"content code width {code.dim} does not match bottleneck {net.config.bottleneck}")
    if spk.dim != net.config.dim_emb:
        raise ValueError(f"speaker embedding width {spk.dim} does not match dim_emb {net.config.dim_emb}")

    net.eval()
    with torch.no_grad():
        codes = torch.from_numpy(code.values).to(net.dtype).unsqueeze(0)
        emb = torch.from_numpy(spk.values).to(net.dtype).unsqueeze(0)
        pre, post = net.decode(codes, emb)
    return MelSpectrogram(pre[0].cpu().numpy()), MelSpectrogram(post[0].cpu().numpy())


def convert(
    net: VcNet,
    se: SpeakerEncoderNet,
    source_mel: MelSpectrogram,
    target_mel: MelSpectrogram,
) -> MelSpectrogram:
    """Speak the content of ``source_mel`` with the voice of ``target_mel``.

    The source is right-padded with the log floor to a multiple of the
    downsample factor and the pad is cropped from the output, so the result
    has the source's frame count.
    """
    spk = embed(se, target_mel)
    padded = pad_to_multiple(source_mel.values, net.downsample_factor)

    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(padded).to(net.dtype).unsqueeze(0)
        emb = torch.from_numpy(spk.values).to(net.dtype).unsqueeze(0)
        _, post = net.decode(net.encode(x), emb)
    values = post[0, : source_mel.frames].cpu().numpy()
    return source_mel.with_values(values)
