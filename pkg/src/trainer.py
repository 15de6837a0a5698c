"""Cycle-consistency training of the conversion network.

Every step draws utterance pairs from two distinct speakers and runs two
paths through the network with the speaker encoder frozen:

- reconstruction, x1 -> x1, scored by ``l_id`` (decoder output) and
  ``l_psnt`` (postnet output);
- cycle, x1 -> x2 -> x1, scored by ``l_cycle`` (squared error),
  ``l_mfcc`` (absolute error between DCT-II cepstra) and ``l_code``
  (absolute error between the content codes of x1 and of the cycle output).

The objective is
``l_id + l_psnt + lambda_code*l_code + lambda_cycle*l_cycle + lambda_mfcc*l_mfcc``.
"""

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Iterator, Optional

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .corpus import CorpusHandle
from .dsp import LOG_FLOOR, MelSpectrogram, dct2_basis
from .errors import TrainingDivergedError
from .metrics import TrainLog
from .speaker_encoder import SpeakerEncoderNet
from .vc_model import VcModelConfig, VcNet


logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("l_id", "l_psnt", "l_code", "l_cycle", "l_mfcc", "total")
CHECKPOINT_NAME = "vc.ckpt"
LOSS_LOG_NAME = "loss_log.csv"


class LossWeights(BaseModel):
    """Weights of the code, cycle and cepstral terms."""
    model_config = ConfigDict(extra="forbid")

    lambda_code: Annotated[float, Field(ge=0)] = 1.0
    lambda_cycle: Annotated[float, Field(ge=0)] = 1.0
    lambda_mfcc: Annotated[float, Field(ge=0)] = 0.1

    @property
    def cycle_enabled(self) -> bool:
        return self.lambda_cycle > 0 or self.lambda_mfcc > 0


def weighted_total(l_id: float, l_psnt: float, l_code: float, l_cycle: float, l_mfcc: float, w: LossWeights) -> float:
    return l_id + l_psnt + w.lambda_code * l_code + w.lambda_cycle * l_cycle + w.lambda_mfcc * l_mfcc


@dataclass(frozen=True)
class LossBreakdown:
    """The five loss terms of one step and their weighted total."""
    l_id: float
    l_psnt: float
    l_code: float
    l_cycle: float
    l_mfcc: float
    total: float

    @classmethod
    def from_terms(cls, l_id: float, l_psnt: float, l_code: float, l_cycle: float, l_mfcc: float, w: LossWeights) -> "LossBreakdown":
        terms = (l_id, l_psnt, l_code, l_cycle, l_mfcc)
        for name, value in zip(LOSS_COLUMNS, terms):
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"loss term {name} must be finite and non-negative, got {value}")
        return cls(*terms, total=weighted_total(*terms, w))

    def recomputed_total(self, w: LossWeights) -> float:
        return weighted_total(self.l_id, self.l_psnt, self.l_code, self.l_cycle, self.l_mfcc, w)

    def as_row(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in LOSS_COLUMNS}


class VcTrainConfig(BaseModel):
    """Conversion-network training run."""
    model_config = ConfigDict(extra="forbid")

    iterations: Annotated[int, Field(ge=1)] = 2000
    lr: Annotated[float, Field(gt=0)] = 0.0001
    adam_beta1: Annotated[float, Field(ge=0, lt=1)] = 0.9
    adam_beta2: Annotated[float, Field(ge=0, lt=1)] = 0.999
    batch_size: Annotated[int, Field(ge=1)] = 2
    crop_frames: Annotated[int, Field(ge=1, description="Random crop length; multiple of model.downsample_factor")] = 128
    weights: LossWeights = LossWeights()
    seed: int = 0
    model: VcModelConfig = VcModelConfig()
    mfcc_coeffs: Annotated[Optional[int], Field(ge=1, description="Cepstral coefficients in l_mfcc (None = all)")] = None
    checkpoint_every: Annotated[int, Field(ge=0, description="Iterations between checkpoints (0 = only at the end)")] = 500
    log_every: Annotated[int, Field(ge=1)] = 100

    @model_validator(mode="after")
    def _crop_aligned(self) -> "VcTrainConfig":
        factor = self.model.downsample_factor
        if self.crop_frames % factor:
            raise ValueError(f"crop_frames ({self.crop_frames}) must be a multiple of model.downsample_factor ({factor})")
        return self


@dataclass
class GradientCheckReport:
    """Outcome of comparing autograd gradients with central finite differences.

    Attributes:
        checked: Parameter entries compared
        passed: Entries within the relative tolerance
        skipped: Entries whose gradients were both below ``min_grad``
        worst: Largest relative errors as (parameter, index, analytic, numeric, rel_err)
    """
    checked: int = 0
    passed: int = 0
    skipped: int = 0
    worst: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def pass_fraction(self) -> float:
        return self.passed / self.checked if self.checked else 1.0


def mfcc_basis(mel_bins: int, num_coeffs: Optional[int], dtype: torch.dtype) -> torch.Tensor:
    """DCT-II matrix as a tensor, so cepstra of a batch are ``mel @ basis``."""
    return torch.from_numpy(dct2_basis(mel_bins, num_coeffs)).to(dtype)


def compute_cycle_terms(
    net: VcNet,
    se: SpeakerEncoderNet,
    x1: torch.Tensor,
    x2: torch.Tensor,
    weights: LossWeights,
    basis: Optional[torch.Tensor] = None,
) -> dict[str, torch.Tensor]:
    """Differentiable loss terms for a batch of (batch, frames, mel_bins) crops.

    With both cycle weights at zero the cycle path is evaluated without
    gradients (for logging only) and ``l_code`` compares x1's code with the
    code of its own reconstruction, which is the plain autoencoder objective.

    Returns:
        Mapping of each loss column (including "total") to a scalar tensor
    """
    if x1.shape != x2.shape:
        raise ValueError(f"x1 and x2 must have the same shape, got {tuple(x1.shape)} and {tuple(x2.shape)}")
    if basis is None:
        basis = mfcc_basis(x1.size(-1), None, x1.dtype)

    with torch.no_grad():
        e1 = se.embed_batch(x1).to(x1.dtype)
        e2 = se.embed_batch(x2).to(x1.dtype)

    codes1 = net.encode(x1)
    pre, post = net.decode(codes1, e1)
    l_id = F.mse_loss(pre, x1)
    l_psnt = F.mse_loss(post, x1)

    with torch.set_grad_enabled(torch.is_grad_enabled() and weights.cycle_enabled):
        _, x12 = net.decode(codes1, e2)
        _, x121 = net.decode(net.encode(x12), e1)
        l_cycle = F.mse_loss(x121, x1)
        l_mfcc = F.l1_loss(x121 @ basis, x1 @ basis)

    if weights.cycle_enabled:
        l_code = F.l1_loss(net.encode(x121), codes1)
    else:
        l_code = F.l1_loss(net.encode(post), codes1)

    total = (
        l_id + l_psnt
        + weights.lambda_code * l_code
        + weights.lambda_cycle * l_cycle
        + weights.lambda_mfcc * l_mfcc
    )
    return {"l_id": l_id, "l_psnt": l_psnt, "l_code": l_code, "l_cycle": l_cycle, "l_mfcc": l_mfcc, "total": total}


def _breakdown(terms: dict[str, torch.Tensor], weights: LossWeights, step: int) -> LossBreakdown:
    values = {name: float(terms[name].detach()) for name in LOSS_COLUMNS[:-1]}
    bad = [f"{name}={value}" for name, value in values.items() if not math.isfinite(value)]
    if bad or not torch.isfinite(terms["total"].detach()):
        raise TrainingDivergedError(step, ", ".join(bad) or "non-finite total")
    return LossBreakdown.from_terms(w=weights, **values)


def cycle_losses(
    net: VcNet,
    se: SpeakerEncoderNet,
    x1: MelSpectrogram,
    x2: MelSpectrogram,
    w: LossWeights,
    mfcc_coeffs: Optional[int] = None,
) -> LossBreakdown:
    """Loss terms for one pair of equally sized crops, without updating anything.

    Raises:
        ValueError: If the crops differ in shape
        FrameAlignmentError: If the crop length is not a multiple of the downsample factor
        TrainingDivergedError: If a term is not finite
    """
    if x1.values.shape != x2.values.shape:
        raise ValueError(f"x1 and x2 must have the same shape, got {x1.values.shape} and {x2.values.shape}")
    dtype = net.dtype
    a = torch.from_numpy(x1.values).to(dtype).unsqueeze(0)
    b = torch.from_numpy(x2.values).to(dtype).unsqueeze(0)
    with torch.no_grad():
        terms = compute_cycle_terms(net, se, a, b, w, mfcc_basis(x1.mel_bins, mfcc_coeffs, dtype))
    return _breakdown(terms, w, step=0)


def random_crop(values: np.ndarray, frames: int, rng: np.random.Generator) -> np.ndarray:
    """``frames`` consecutive rows at a random offset; short inputs are padded with the log floor."""
    if values.shape[0] < frames:
        pad = np.full((frames - values.shape[0], values.shape[1]), LOG_FLOOR, dtype=values.dtype)
        return np.concatenate([values, pad], axis=0)
    start = int(rng.integers(0, values.shape[0] - frames + 1))
    return values[start:start + frames]


def _sample_batch(
    pools: list[list[np.ndarray]],
    cfg: VcTrainConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Pairs of crops from two distinct speakers, drawn from one seeded generator."""
    x1, x2 = [], []
    for _ in range(cfg.batch_size):
        s1, s2 = rng.choice(len(pools), size=2, replace=False)
        u1 = pools[s1][int(rng.integers(len(pools[s1])))]
        u2 = pools[s2][int(rng.integers(len(pools[s2])))]
        x1.append(random_crop(u1, cfg.crop_frames, rng))
        x2.append(random_crop(u2, cfg.crop_frames, rng))
    return np.stack(x1), np.stack(x2)


@contextmanager
def frozen(se: SpeakerEncoderNet) -> Iterator[SpeakerEncoderNet]:
    """Hold ``se`` in eval mode with gradients off; its previous flags and mode come back on exit."""
    flags = [param.requires_grad for param in se.parameters()]
    was_training = se.training
    for param in se.parameters():
        param.requires_grad_(False)
    se.eval()
    try:
        yield se
    finally:
        for param, flag in zip(se.parameters(), flags):
            param.requires_grad_(flag)
        se.train(was_training)


def train_vc(
    corpus: CorpusHandle,
    se_ckpt: str | Path,
    cfg: VcTrainConfig,
    out_dir: Optional[str | Path] = None,
) -> tuple[VcNet, TrainLog]:
    """Train a conversion network against a frozen speaker encoder checkpoint.

    Raises:
        FileNotFoundError: If the speaker-encoder checkpoint does not exist
    """
    se_path = Path(se_ckpt)
    if not se_path.exists():
        raise FileNotFoundError(f"Speaker encoder checkpoint not found: {se_path}")
    se = SpeakerEncoderNet.from_checkpoint(se_path)
    return train_vc_with_encoder(corpus, se, cfg, out_dir)


def train_vc_with_encoder(
    corpus: CorpusHandle,
    se: SpeakerEncoderNet,
    cfg: VcTrainConfig,
    out_dir: Optional[str | Path] = None,
) -> tuple[VcNet, TrainLog]:
    """Train a conversion network against an in-memory speaker encoder.

    Args:
        corpus: Corpus whose train split supplies the crops
        se: Speaker encoder; frozen for the run, then its flags and mode are restored
        cfg: Training configuration
        out_dir: Receives ``loss_log.csv`` and ``vc.ckpt`` (rewritten every
            ``checkpoint_every`` iterations and at the end)

    Returns:
        Tuple of (trained network, per-iteration TrainLog)

    Raises:
        ValueError: If fewer than two speakers have training utterances
        TrainingDivergedError: If a loss becomes non-finite; the last
            checkpoint written stays in place
    """
    pools = [
        [utt.mel.values for utt in corpus.train_utterances(speaker)]
        for speaker in corpus.training_speakers
    ]
    pools = [pool for pool in pools if pool]
    if len(pools) < 2:
        raise ValueError("training requires ≥2 speakers with training utterances")

    mel_bins = pools[0][0].shape[1]
    model_cfg = cfg.model.model_copy(update={"mel_bins": mel_bins, "dim_emb": se.config.embedding_dim})

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    with frozen(se):
        torch.manual_seed(cfg.seed)
        torch.use_deterministic_algorithms(True, warn_only=True)
        rng = np.random.default_rng(cfg.seed)
        net = VcNet(model_cfg)
        optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2))
        basis = mfcc_basis(mel_bins, cfg.mfcc_coeffs, net.dtype)
        log = TrainLog(LOSS_COLUMNS, csv_path=out_path / LOSS_LOG_NAME if out_path else None)

        logger.info(
            f"Training VC net: {len(pools)} speakers, {cfg.iterations} iterations, batch {cfg.batch_size}, "
            f"crop {cfg.crop_frames} frames, bottleneck {model_cfg.bottleneck}, norm {model_cfg.content_norm}, "
            f"weights code={cfg.weights.lambda_code} cycle={cfg.weights.lambda_cycle} mfcc={cfg.weights.lambda_mfcc}"
        )

        for iteration in range(1, cfg.iterations + 1):
            a, b = _sample_batch(pools, cfg, rng)
            x1 = torch.from_numpy(a).to(net.dtype)
            x2 = torch.from_numpy(b).to(net.dtype)

            net.train()
            terms = compute_cycle_terms(net, se, x1, x2, cfg.weights, basis)
            try:
                breakdown = _breakdown(terms, cfg.weights, iteration)
            except TrainingDivergedError:
                if out_path is not None:
                    logger.error(f"Training diverged at iteration {iteration}; last good checkpoint kept in {out_path}")
                raise

            optimizer.zero_grad()
            terms["total"].backward()
            optimizer.step()

            log.record(iteration, breakdown.as_row())
            logger.debug(f"iteration {iteration}: {breakdown}")
            if iteration % cfg.log_every == 0 or iteration == cfg.iterations:
                logger.info(
                    f"VC iteration {iteration}/{cfg.iterations}: total={breakdown.total:.4f} "
                    f"id={breakdown.l_id:.4f} psnt={breakdown.l_psnt:.4f} code={breakdown.l_code:.4f} "
                    f"cycle={breakdown.l_cycle:.4f} mfcc={breakdown.l_mfcc:.4f}"
                )

            last = iteration == cfg.iterations
            if out_path is not None and (last or (cfg.checkpoint_every and iteration % cfg.checkpoint_every == 0)):
                net.save(out_path / CHECKPOINT_NAME, meta={"seed": cfg.seed, "iteration": iteration})

        net.eval()
        return net, log


def gradient_check(
    net: VcNet,
    se: SpeakerEncoderNet,
    x1: torch.Tensor,
    x2: torch.Tensor,
    weights: LossWeights,
    h: float = 1e-4,
    rel_tol: float = 1e-3,
    min_grad: float = 1e-8,
    basis: Optional[torch.Tensor] = None,
    worst_count: int = 5,
) -> GradientCheckReport:
    """Compare autograd gradients of the total loss with central differences.

    Meant for float64 miniature models: every parameter entry costs two
    full forward passes. Entries whose analytic and numeric gradients are
    both below ``min_grad`` are skipped.
    """
    net.zero_grad()
    compute_cycle_terms(net, se, x1, x2, weights, basis)["total"].backward()

    report = GradientCheckReport()
    errors: list[tuple[str, int, float, float, float]] = []
    with torch.no_grad():
        for name, param in net.named_parameters():
            if param.grad is None:
                continue
            grad = param.grad.detach().reshape(-1).clone()
            flat = param.data.view(-1)
            for index in range(flat.numel()):
                original = flat[index].item()
                flat[index] = original + h
                plus = compute_cycle_terms(net, se, x1, x2, weights, basis)["total"].item()
                flat[index] = original - h
                minus = compute_cycle_terms(net, se, x1, x2, weights, basis)["total"].item()
                flat[index] = original

                numeric = (plus - minus) / (2 * h)
                analytic = grad[index].item()
                if abs(analytic) < min_grad and abs(numeric) < min_grad:
                    report.skipped += 1
                    continue
                rel_err = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
                report.checked += 1
                if rel_err <= rel_tol:
                    report.passed += 1
                errors.append((name, index, analytic, numeric, rel_err))

    report.worst = sorted(errors, key=lambda e: e[4], reverse=True)[:worst_count]
    logger.info(
        f"Gradient check: {report.passed}/{report.checked} within {rel_tol} "
        f"({report.skipped} skipped below {min_grad})"
    )
    return report
