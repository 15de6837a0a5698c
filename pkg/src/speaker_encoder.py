"""ConvBank speaker encoder.

A bank of parallel 1-D convolutions with different kernel widths, ReLU,
max-pooling and linear layers turns a shuffled-and-stacked spectrogram into
one time-pooled, L2-normalized speaker embedding. The encoder is trained as
a K-way speaker classifier against label-smoothed targets, then frozen.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import CorpusHandle, Utterance
from .dsp import LOG_FLOOR, MelSpectrogram
from .errors import TrainingDivergedError
from .metrics import TrainLog
from .perturb import PerturbConfig, shuffle_stack, stack_chunks


logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "speaker_encoder"
EPOCH_LOG_COLUMNS = ("loss", "train_accuracy", "heldout_accuracy")


class SpeakerEncoderConfig(BaseModel):
    """Architecture of the ConvBank speaker encoder."""
    model_config = ConfigDict(extra="forbid")

    mel_bins: Annotated[int, Field(ge=1, description="Mel bins of the input spectrogram")] = 80
    chunk_len: Annotated[int, Field(ge=1, description="Frames stacked per input row")] = 8
    kernel_sizes: Annotated[tuple[int, ...], Field(min_length=1, description="ConvBank kernel widths (odd)")] = (1, 3, 5, 7)
    bank_channels: Annotated[int, Field(ge=1, description="Output channels per ConvBank kernel")] = 128
    pool_width: Annotated[int, Field(ge=1, description="Max-pool width over time (1 disables pooling)")] = 2
    hidden_dim: Annotated[int, Field(ge=1, description="Width of the first linear layer")] = 256
    embedding_dim: Annotated[int, Field(ge=1, description="Speaker embedding size")] = 256
    num_classes: Annotated[int, Field(ge=0, description="Classifier head size K (0 = no head)")] = 0

    @field_validator("kernel_sizes")
    @classmethod
    def _odd_kernels(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        for k in value:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"kernel sizes must be odd and positive, got {k}")
        return value

    @property
    def in_channels(self) -> int:
        return self.chunk_len * self.mel_bins


class SpeakerTrainConfig(BaseModel):
    """Speaker-encoder training run.

    The perturbation chunk length is the network's ``model.chunk_len``;
    ``perturb.chunk_len`` is accepted in config files as another spelling.
    """
    model_config = ConfigDict(extra="forbid")

    epochs: Annotated[int, Field(ge=0)] = 15
    lr: Annotated[float, Field(gt=0)] = 0.001
    alpha: Annotated[float, Field(ge=0, lt=1, description="Label smoothing strength")] = 0.1
    batch_size: Annotated[int, Field(ge=1)] = 16
    segment_frames: Annotated[int, Field(ge=1, description="Random crop length per training example")] = 128
    seed: int = 0
    shuffle: Annotated[bool, Field(description="Shuffle chunks of training inputs")] = True
    log_every: Annotated[int, Field(ge=1)] = 1
    model: SpeakerEncoderConfig = SpeakerEncoderConfig()

    @model_validator(mode="before")
    @classmethod
    def _perturb_chunk_len(cls, data: Any) -> Any:
        """Read ``{"perturb": {"chunk_len": n}}`` as ``model.chunk_len``."""
        if not isinstance(data, dict) or "perturb" not in data:
            return data
        data = dict(data)
        perturb = data.pop("perturb")
        if not isinstance(perturb, dict) or set(perturb) - {"chunk_len"}:
            raise ValueError('"perturb" accepts only a "chunk_len" key')
        if "chunk_len" in perturb:
            model = data.get("model", {})
            model = model.model_dump() if isinstance(model, BaseModel) else dict(model)
            if model.get("chunk_len", perturb["chunk_len"]) != perturb["chunk_len"]:
                raise ValueError(
                    f"perturb.chunk_len ({perturb['chunk_len']}) disagrees with model.chunk_len ({model['chunk_len']})"
                )
            model["chunk_len"] = perturb["chunk_len"]
            data["model"] = model
        return data

    @model_validator(mode="after")
    def _segment_fits_chunk(self) -> "SpeakerTrainConfig":
        if self.segment_frames < self.model.chunk_len:
            raise ValueError(
                f"segment_frames ({self.segment_frames}) must be >= model.chunk_len ({self.model.chunk_len})"
            )
        return self


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    """Unit-norm speaker embedding."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("speaker embedding must be a finite 1-D vector")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class SmoothedLabel:
    """Label-smoothed classification target."""
    num_classes: int
    alpha: float
    values: np.ndarray


def smooth_labels(class_index: int, num_classes: int, alpha: float) -> SmoothedLabel:
    """Mix a one-hot target with the uniform distribution.

    The correct class gets ``(1 - alpha) + alpha / K`` and every other class
    ``alpha / K``.

    Raises:
        ValueError: If the index or alpha is out of range
    """
    if num_classes < 1:
        raise ValueError(f"num_classes must be >= 1, got {num_classes}")
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class_index {class_index} out of range for {num_classes} classes")
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must be in [0, 1), got {alpha}")

    values = np.full(num_classes, alpha / num_classes, dtype=np.float64)
    values[class_index] = (1.0 - alpha) + alpha / num_classes
    return SmoothedLabel(num_classes, alpha, values)


def soft_cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of softmax(logits) against probability targets."""
    return -(targets * F.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    return float(np.dot(a.values, b.values) / (np.linalg.norm(a.values) * np.linalg.norm(b.values)))


class SpeakerEncoderNet(nn.Module):
    """ConvBank -> ReLU -> max-pool -> linear layers -> time mean -> L2 norm."""

    def __init__(self, config: SpeakerEncoderConfig):
        super().__init__()
        self.config = config
        self.speakers: tuple[str, ...] = ()

        self.conv_bank = nn.ModuleList([
            nn.Conv1d(config.in_channels, config.bank_channels, kernel_size=k, padding=k // 2)
            for k in config.kernel_sizes
        ])
        bank_out = config.bank_channels * len(config.kernel_sizes)
        self.projection = nn.Sequential(
            nn.Linear(bank_out, config.hidden_dim),
            nn.ReLU(),
            nn.Linear(config.hidden_dim, config.embedding_dim),
        )
        self.classifier = nn.Linear(config.embedding_dim, config.num_classes) if config.num_classes > 0 else None

    def bank_features(self, stacked: torch.Tensor) -> torch.Tensor:
        """ConvBank activations, (batch, rows, C') -> (batch, rows', bank_out)."""
        x = stacked.transpose(1, 2)
        x = torch.cat([F.relu(conv(x)) for conv in self.conv_bank], dim=1)
        if self.config.pool_width > 1 and x.size(-1) >= self.config.pool_width:
            x = F.max_pool1d(x, self.config.pool_width)
        return x.transpose(1, 2)

    def pooled(self, stacked: torch.Tensor) -> torch.Tensor:
        """Unnormalized time-mean embedding, (batch, embedding_dim)."""
        return self.projection(self.bank_features(stacked)).mean(dim=1)

    def forward(self, stacked: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.pooled(stacked), dim=-1)

    def logits(self, stacked: torch.Tensor) -> torch.Tensor:
        if self.classifier is None:
            raise RuntimeError("speaker encoder has no classifier head (num_classes = 0)")
        return self.classifier(self.pooled(stacked))

    def stack(self, mels: torch.Tensor) -> torch.Tensor:
        """Deterministic stacking of a (batch, frames, mel_bins) tensor, no shuffling."""
        chunk = self.config.chunk_len
        rows = mels.size(1) // chunk
        if rows == 0:
            raise ValueError(f"{mels.size(1)} frames cannot fill one chunk of {chunk}")
        return mels[:, : rows * chunk].reshape(mels.size(0), rows, chunk * mels.size(2))

    def embed_batch(self, mels: torch.Tensor) -> torch.Tensor:
        """Eval-mode embeddings of a batch of spectrograms."""
        return self(self.stack(mels))

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def save(self, path: str | Path, meta: Optional[dict] = None) -> str:
        """Persist weights and architecture; returns the file sha256."""
        meta = dict(meta or {})
        meta["speakers"] = list(self.speakers)
        return save_checkpoint(path, CHECKPOINT_KIND, self.config.model_dump(mode="json"), self.state_dict(), meta)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "SpeakerEncoderNet":
        header, state_dict = load_checkpoint(path, kind=CHECKPOINT_KIND)
        net = cls(SpeakerEncoderConfig.model_validate(header["hparams"]))
        net.load_state_dict(state_dict)
        net.speakers = tuple(header.get("meta", {}).get("speakers", ()))
        net.eval()
        return net


def embed(
    net: SpeakerEncoderNet,
    mel: MelSpectrogram,
    cfg: Optional[PerturbConfig] = None,
    eval_mode: bool = True,
) -> SpeakerEmbedding:
    """Speaker embedding of one spectrogram.

    In eval mode the chunks keep their order (stacking only), so repeated
    calls return identical embeddings. Otherwise chunks are shuffled with
    ``cfg.rng_seed``.

    Raises:
        InputTooShortError: If the spectrogram is shorter than one chunk
        ValueError: If chunk length or mel bins do not match the network
    """
    if cfg is None:
        cfg = PerturbConfig(chunk_len_frames=net.config.chunk_len)
    if cfg.chunk_len_frames != net.config.chunk_len:
        raise ValueError(
            f"perturbation chunk length {cfg.chunk_len_frames} does not match "
            f"the network's chunk_len {net.config.chunk_len}"
        )
    if mel.mel_bins != net.config.mel_bins:
        raise ValueError(f"expected {net.config.mel_bins} mel bins, got {mel.mel_bins}")

    if eval_mode:
        cfg = cfg.model_copy(update={"shuffle": False})
    stacked = shuffle_stack(mel, cfg)

    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(stacked.values).to(net.dtype).unsqueeze(0)
        values = net(x)[0].double().numpy()
    return SpeakerEmbedding(values / np.linalg.norm(values))


def pad_frames(mel: MelSpectrogram, frames: int) -> MelSpectrogram:
    """Right-pad with log-floor rows up to ``frames``; longer mels are returned as is."""
    if mel.frames >= frames:
        return mel
    pad = np.full((frames - mel.frames, mel.mel_bins), LOG_FLOOR, dtype=mel.values.dtype)
    return mel.with_values(np.concatenate([mel.values, pad], axis=0))


def _training_example(values: np.ndarray, cfg: SpeakerTrainConfig, rng: np.random.Generator) -> np.ndarray:
    """Random crop of ``segment_frames`` frames, then shuffle-and-stack."""
    segment = cfg.segment_frames
    values = pad_frames(MelSpectrogram(values), segment).values
    start = int(rng.integers(0, values.shape[0] - segment + 1))
    crop = MelSpectrogram(values[start:start + segment])

    perturb_cfg = PerturbConfig(
        chunk_len_frames=cfg.model.chunk_len,
        rng_seed=int(rng.integers(0, 2**31 - 1)),
        shuffle=cfg.shuffle,
    )
    return shuffle_stack(crop, perturb_cfg).values


def classification_accuracy(net: SpeakerEncoderNet, examples: Sequence[tuple[MelSpectrogram, int]]) -> float:
    """Fraction of whole utterances whose argmax class matches the label (eval mode).

    Utterances shorter than one chunk are padded with the log floor.
    """
    if not examples:
        return math.nan

    net.eval()
    correct = 0
    with torch.no_grad():
        for mel, label in examples:
            stacked = stack_chunks(pad_frames(mel, net.config.chunk_len).values, net.config.chunk_len)
            x = torch.from_numpy(stacked).to(net.dtype).unsqueeze(0)
            correct += int(net.logits(x).argmax(dim=-1).item() == label)
    return correct / len(examples)


def _labelled(utterances: Sequence[Utterance], speaker_index: dict[str, int]) -> list[tuple[MelSpectrogram, int]]:
    return [(utt.mel, speaker_index[utt.speaker]) for utt in utterances]


def train_speaker_encoder(
    corpus: CorpusHandle,
    cfg: SpeakerTrainConfig,
    out_path: Optional[str | Path] = None,
    log_path: Optional[str | Path] = None,
) -> tuple[SpeakerEncoderNet, TrainLog]:
    """Train the speaker classifier with label-smoothed cross-entropy.

    Args:
        corpus: Labelled corpus; train split is used for updates, test split
            for the held-out accuracy column
        cfg: Training configuration
        out_path: Checkpoint destination (written after the last epoch)
        log_path: Optional CSV mirror of the per-epoch log

    Returns:
        Tuple of (trained network with classifier head, per-epoch TrainLog)

    Raises:
        ValueError: If the corpus has fewer than two speakers
        TrainingDivergedError: If the loss becomes non-finite
    """
    speakers = corpus.training_speakers
    if len(speakers) < 2:
        raise ValueError("classification requires ≥2 speakers")

    speaker_index = {speaker: i for i, speaker in enumerate(speakers)}
    train_set = _labelled(corpus.train_utterances(), speaker_index)
    heldout_set = _labelled(corpus.test_utterances(), speaker_index)
    if not train_set:
        raise ValueError("corpus has no training utterances")

    mel_bins = train_set[0][0].mel_bins
    model_cfg = cfg.model.model_copy(update={"num_classes": len(speakers), "mel_bins": mel_bins})

    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    rng = np.random.default_rng(cfg.seed)
    net = SpeakerEncoderNet(model_cfg)
    net.speakers = speakers

    targets = torch.from_numpy(
        np.stack([smooth_labels(i, len(speakers), cfg.alpha).values for i in range(len(speakers))])
    ).to(net.dtype)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    log = TrainLog(EPOCH_LOG_COLUMNS, index_name="epoch", csv_path=log_path)

    logger.info(
        f"Training speaker encoder: {len(speakers)} speakers, {len(train_set)} train / "
        f"{len(heldout_set)} held-out utterances, {cfg.epochs} epochs, alpha={cfg.alpha}"
    )

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        order = rng.permutation(len(train_set))
        loss_sum = 0.0
        correct = 0

        for start in range(0, len(order), cfg.batch_size):
            batch_idx = order[start:start + cfg.batch_size]
            x = torch.from_numpy(np.stack([_training_example(train_set[i][0].values, cfg, rng) for i in batch_idx]))
            labels = torch.tensor([train_set[i][1] for i in batch_idx], dtype=torch.long)

            logits = net.logits(x.to(net.dtype))
            loss = soft_cross_entropy(logits, targets[labels])
            step += 1
            if not torch.isfinite(loss):
                raise TrainingDivergedError(step, f"speaker encoder loss {loss.item()}")

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

            loss_sum += loss.item() * len(batch_idx)
            correct += int((logits.argmax(dim=-1) == labels).sum().item())

        row = {
            "loss": loss_sum / len(train_set),
            "train_accuracy": correct / len(train_set),
            "heldout_accuracy": classification_accuracy(net, heldout_set),
        }
        log.record(epoch, row)
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            logger.info(
                f"SE epoch {epoch}/{cfg.epochs}: loss={row['loss']:.4f} "
                f"train_acc={row['train_accuracy']:.3f} heldout_acc={row['heldout_accuracy']:.3f}"
            )

    net.eval()
    if out_path is not None:
        digest = net.save(out_path, meta={"seed": cfg.seed, "epoch": cfg.epochs, "alpha": cfg.alpha})
        logger.info(f"Speaker encoder checkpoint written to {out_path} (sha256 {digest[:12]})")
    return net, log
