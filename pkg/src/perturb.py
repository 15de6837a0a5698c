"""Speaker-encoder input perturbation: chunk shuffling plus channel-axis stacking.

The spectrogram is cut into chunks of ``chunk_len_frames`` consecutive
frames, the chunk order is permuted, and the frames inside each chunk are
concatenated along the channel axis. Word order is destroyed while the set
of frame vectors, and with it every global statistic, is kept.
"""

import logging
from typing import Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .dsp import MelSpectrogram
from .errors import InputTooShortError


logger = logging.getLogger(__name__)


class PerturbConfig(BaseModel):
    """Chunking and seeding for :func:`shuffle_stack`."""
    model_config = ConfigDict(extra="forbid")

    chunk_len_frames: Annotated[int, Field(ge=1, description="Frames per shuffled chunk")] = 8
    rng_seed: Annotated[int, Field(description="Seed of the chunk permutation")] = 0
    shuffle: Annotated[bool, Field(description="Permute chunks; False keeps stacking only")] = True


def chunk_permutation(num_chunks: int, seed: int) -> np.ndarray:
    """Uniformly random permutation of ``range(num_chunks)`` drawn from ``seed``."""
    return np.random.default_rng(seed).permutation(num_chunks)


def stack_chunks(values: np.ndarray, chunk_len: int, order: np.ndarray | None = None) -> np.ndarray:
    """Group frames into chunks, reorder them, and stack each chunk's frames.

    Args:
        values: Array of shape (frames, mel_bins)
        chunk_len: Frames per chunk; trailing frames that do not fill a chunk are dropped
        order: Chunk order; identity when None

    Returns:
        Array of shape (frames // chunk_len, chunk_len * mel_bins)
    """
    num_chunks = values.shape[0] // chunk_len
    chunks = values[: num_chunks * chunk_len].reshape(num_chunks, chunk_len * values.shape[1])
    if order is not None:
        chunks = chunks[order]
    return np.ascontiguousarray(chunks)


def shuffle_stack(mel: MelSpectrogram, cfg: PerturbConfig) -> MelSpectrogram:
    """Shuffle chunks of a spectrogram and stack their frames along channels.

    Output row ``i`` is the concatenation of the ``chunk_len`` frames of the
    chunk placed at position ``i``; the result has shape
    ``(frames // chunk_len, chunk_len * mel_bins)``.

    Raises:
        InputTooShortError: If there are fewer frames than one chunk
    """
    chunk_len = cfg.chunk_len_frames
    if mel.frames < chunk_len:
        raise InputTooShortError(
            f"input too short to perturb: {mel.frames} frames, chunk length {chunk_len}"
        )

    num_chunks = mel.frames // chunk_len
    order = chunk_permutation(num_chunks, cfg.rng_seed) if cfg.shuffle else None
    stacked = stack_chunks(mel.values, chunk_len, order)
    return mel.with_values(stacked)
