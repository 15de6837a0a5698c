"""Signal-processing math for AutoCycle-VC.

Log-mel front end, DCT-II cepstral coefficients computed exactly as the
unnormalized transform ``C_k = 2 * sum_n S_n cos(pi k (2n + 1) / 2N)``, and
mel-cepstral distortion as the root mean of per-frame squared Euclidean
distances. Also owns the binary mel-spectrogram file format shared by the
corpus and the command line tool.

Every function here is a pure function of its inputs.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import librosa
import numpy as np
import scipy.fft
import scipy.signal

from .errors import InputTooShortError, UnalignedSequencesError


logger = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 22050
MEL_BINS = 80
WIN_LENGTH = 1024
HOP_LENGTH = 256
FLOOR_EPSILON = 1e-5
LOG_FLOOR = math.log(FLOOR_EPSILON)

# Conventional dB scaling for MCD; off unless explicitly requested.
MCD_DB_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)

MEL_MAGIC = b"MELS"
MEL_FORMAT_VERSION = 1
# magic, version u16, frames u32, mel_bins u16, 4 reserved bytes
_MEL_HEADER = struct.Struct("<4sHIH4x")


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio samples in [-1, 1].

    Attributes:
        samples: 1-D float64 array
        sample_rate_hz: Sampling rate in Hz
    """
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError(f"waveform must be a non-empty 1-D array, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0:
            raise ValueError("waveform samples must lie within [-1, 1]")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.shape[0] / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Log mel energies, one row per frame.

    Values are held as float32 so that the on-disk format round-trips
    bit-exactly.

    Attributes:
        values: Array of shape (frames, mel_bins), natural-log scale
        sample_rate_hz: Sampling rate of the source audio
        hop_length_samples: Frame hop in samples
    """
    values: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ
    hop_length_samples: int = HOP_LENGTH

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise ValueError(f"mel-spectrogram must have shape (frames, mel_bins), got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("mel-spectrogram contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def mel_bins(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "MelSpectrogram":
        """Return a spectrogram with new values and the same timing metadata."""
        return MelSpectrogram(values, self.sample_rate_hz, self.hop_length_samples)


@dataclass(frozen=True, eq=False)
class MfccSequence:
    """Cepstral coefficient vectors, one row per frame."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"MFCC sequence must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("MFCC sequence contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_coeffs(self) -> int:
        return self.values.shape[1]


def mel_filterbank(
    sample_rate_hz: int = SAMPLE_RATE_HZ,
    win: int = WIN_LENGTH,
    mel_bins: int = MEL_BINS,
) -> np.ndarray:
    """Slaney-normalized triangular mel filters, shape (mel_bins, win // 2 + 1)."""
    return librosa.filters.mel(sr=sample_rate_hz, n_fft=win, n_mels=mel_bins, fmin=0.0, fmax=sample_rate_hz / 2.0)


def mel_center_frequencies(sample_rate_hz: int = SAMPLE_RATE_HZ, mel_bins: int = MEL_BINS) -> np.ndarray:
    """Center frequency in Hz of each mel filter."""
    edges = librosa.mel_frequencies(n_mels=mel_bins + 2, fmin=0.0, fmax=sample_rate_hz / 2.0)
    return edges[1:-1]


def melspectrogram(
    wave: Waveform,
    mel_bins: int = MEL_BINS,
    hop: int = HOP_LENGTH,
    win: int = WIN_LENGTH,
) -> MelSpectrogram:
    """Compute a natural-log mel-spectrogram without padding.

    Frames are ``floor((len(samples) - win) / hop) + 1`` Hann-windowed power
    spectra projected on the mel filterbank; the log is taken as
    ``ln(max(energy, FLOOR_EPSILON))``.

    Args:
        wave: Input waveform
        mel_bins: Number of mel filters
        hop: Frame hop in samples
        win: Window (and FFT) length in samples

    Returns:
        MelSpectrogram with shape (frames, mel_bins)

    Raises:
        InputTooShortError: If the waveform is shorter than one window
        ValueError: If mel_bins < 1 or hop is not in [1, win]
    """
    if mel_bins < 1:
        raise ValueError(f"mel_bins must be >= 1, got {mel_bins}")
    if hop < 1 or hop > win:
        raise ValueError(f"hop must be in [1, win={win}], got {hop}")

    samples = wave.samples
    if samples.shape[0] < win:
        raise InputTooShortError(
            f"input too short: {samples.shape[0]} samples, need at least {win}"
        )

    frames = librosa.util.frame(samples, frame_length=win, hop_length=hop, axis=0)
    window = scipy.signal.get_window("hann", win, fftbins=True)
    power = np.abs(np.fft.rfft(frames * window, n=win, axis=1)) ** 2
    energy = power @ mel_filterbank(wave.sample_rate_hz, win, mel_bins).T
    values = np.log(np.maximum(energy, FLOOR_EPSILON))

    return MelSpectrogram(values, wave.sample_rate_hz, hop)


def dct2_basis(num_filters: int, num_coeffs: Optional[int] = None) -> np.ndarray:
    """Matrix D with ``S @ D`` equal to the unnormalized DCT-II of each row of S.

    Returns:
        Array of shape (num_filters, num_coeffs), ``D[n, k] = 2 cos(pi k (2n+1) / 2N)``
    """
    if num_coeffs is None:
        num_coeffs = num_filters
    n = np.arange(num_filters)[:, None]
    k = np.arange(num_coeffs)[None, :]
    return 2.0 * np.cos(np.pi * k * (2 * n + 1) / (2 * num_filters))


def dct2_mfcc(mel: MelSpectrogram | np.ndarray, num_coeffs: Optional[int] = None) -> MfccSequence:
    """Cepstral coefficients of every frame.

    Uses the unnormalized type-II transform (no orthonormal rescaling), so
    a constant frame of ones over N filters gives ``[2N, 0, ..., 0]``.

    Args:
        mel: Spectrogram, or a raw (frames, mel_bins) array
        num_coeffs: Coefficients kept per frame; defaults to all mel_bins

    Returns:
        MfccSequence of shape (frames, num_coeffs)

    Raises:
        ValueError: If num_coeffs is outside [1, mel_bins]
    """
    values = mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)
    values = np.atleast_2d(values).astype(np.float64)
    num_filters = values.shape[1]
    if num_coeffs is None:
        num_coeffs = num_filters
    if not 1 <= num_coeffs <= num_filters:
        raise ValueError(f"num_coeffs must be in [1, {num_filters}], got {num_coeffs}")

    coeffs = scipy.fft.dct(values, type=2, axis=1, norm=None)
    return MfccSequence(coeffs[:, :num_coeffs])


def mcd(
    reference: MfccSequence | np.ndarray,
    synthesized: MfccSequence | np.ndarray,
    db_scale: bool = False,
) -> float:
    """Mel-cepstral distortion between two frame-aligned sequences.

    ``sqrt(mean_i ||C_i - C'_i||^2)``; with ``db_scale`` the result is
    multiplied by ``10 sqrt(2) / ln 10``.

    Raises:
        UnalignedSequencesError: If frame or coefficient counts differ
    """
    ref = reference.values if isinstance(reference, MfccSequence) else np.asarray(reference, dtype=np.float64)
    syn = synthesized.values if isinstance(synthesized, MfccSequence) else np.asarray(synthesized, dtype=np.float64)
    if ref.shape != syn.shape or ref.ndim != 2:
        raise UnalignedSequencesError(f"unaligned sequences: {ref.shape} vs {syn.shape}")

    diff = ref - syn
    value = math.sqrt(float(np.mean(np.sum(diff * diff, axis=1))))
    if db_scale:
        value *= MCD_DB_CONSTANT
    return value


def truncate_to_common_length(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crop two frame-major arrays to the shorter frame count."""
    frames = min(a.shape[0], b.shape[0])
    return a[:frames], b[:frames]


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def write_mel(path: str | Path, mel: MelSpectrogram, metadata: Optional[dict[str, Any]] = None) -> Path:
    """Write a mel file and its JSON sidecar.

    Args:
        path: Destination ``.mel`` path (parent directories are created)
        mel: Spectrogram to store
        metadata: Extra sidecar fields such as speaker and group

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if mel.frames > 0xFFFFFFFF or mel.mel_bins > 0xFFFF:
        raise ValueError(f"mel-spectrogram too large for file format: {mel.values.shape}")

    header = _MEL_HEADER.pack(MEL_MAGIC, MEL_FORMAT_VERSION, mel.frames, mel.mel_bins)
    with open(path, "wb") as f:
        f.write(header)
        f.write(mel.values.astype("<f4").tobytes(order="C"))

    sidecar = {
        "sample_rate_hz": mel.sample_rate_hz,
        "hop_length_samples": mel.hop_length_samples,
    }
    sidecar.update(metadata or {})
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_mel_metadata(path: str | Path) -> dict[str, Any]:
    """Sidecar metadata of a mel file, or an empty dict if there is none."""
    sidecar = _sidecar_path(Path(path))
    if not sidecar.exists():
        return {}
    try:
        data = json.loads(sidecar.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in mel sidecar {sidecar}: {e.msg}")
    if not isinstance(data, dict):
        raise ValueError(f"Mel sidecar {sidecar} must be a JSON object, got {type(data).__name__}")
    return data


def read_mel(path: str | Path) -> MelSpectrogram:
    """Read a mel file written by :func:`write_mel`.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If the header or payload size is invalid
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Mel file not found: {path}")

    data = path.read_bytes()
    if len(data) < _MEL_HEADER.size:
        raise ValueError(f"{path}: truncated mel header")
    magic, version, frames, mel_bins = _MEL_HEADER.unpack_from(data)
    if magic != MEL_MAGIC:
        raise ValueError(f"{path}: not a mel file (magic {magic!r})")
    if version != MEL_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported mel format version {version}")
    expected = _MEL_HEADER.size + frames * mel_bins * 4
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {frames}x{mel_bins}, found {len(data)}")

    values = np.frombuffer(data, dtype="<f4", count=frames * mel_bins, offset=_MEL_HEADER.size)
    values = values.reshape(frames, mel_bins).astype(np.float32)

    metadata = read_mel_metadata(path)
    return MelSpectrogram(
        values,
        int(metadata.get("sample_rate_hz", SAMPLE_RATE_HZ)),
        int(metadata.get("hop_length_samples", HOP_LENGTH)),
    )
