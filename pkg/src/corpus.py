"""Corpora: synthetic multi-speaker generation, audio ingestion, on-disk layout.

A corpus directory holds ``manifest.txt`` (one tab-separated line per
utterance: speaker id, mel path relative to the directory, split, frames),
the referenced mel files under ``mels/<speaker>/`` and, optionally, an
``audio/<speaker>/`` tree of wav/flac files that are ingested on load.

The split is ``train``, ``test`` or ``unseen``; unseen speakers are held out
of training entirely and only serve any-to-any evaluation.
"""

import logging
import math
import zlib
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Annotated, Iterable, Optional, Sequence

import librosa
import numpy as np
import scipy.signal
import soundfile as sf
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .dsp import (
    HOP_LENGTH,
    SAMPLE_RATE_HZ,
    WIN_LENGTH,
    MelSpectrogram,
    Waveform,
    melspectrogram,
    read_mel,
    read_mel_metadata,
    write_mel,
)
from .errors import CorpusFormatError, InputTooShortError, NoSpeechError


logger = logging.getLogger(__name__)

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLIT_UNSEEN = "unseen"
SPLITS = (SPLIT_TRAIN, SPLIT_TEST, SPLIT_UNSEEN)
MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "# speaker_id\tmel_path\tsplit\tframes"
AUDIO_SUFFIXES = (".wav", ".flac")
DEFAULT_GROUP = "default"

# Reference vowel formants (F1, F2) in Hz; each group scales its own copy.
_REFERENCE_VOWELS = np.array([
    [730.0, 1090.0],
    [270.0, 2290.0],
    [300.0, 870.0],
    [530.0, 1840.0],
    [570.0, 840.0],
    [440.0, 1020.0],
])
_DEFAULT_PITCHES_HZ = (110.0, 150.0, 210.0, 280.0)
_DEFAULT_TILTS_DB = (-6.0, -9.0, -4.0, -12.0)


class SynthSpeakerSpec(BaseModel):
    """Voice parameters of one synthetic speaker."""
    model_config = ConfigDict(extra="forbid")

    base_pitch_hz: Annotated[float, Field(ge=60, le=400)]
    pitch_jitter: Annotated[float, Field(ge=0, lt=0.5, description="Max relative pitch excursion of the jitter walk")] = 0.05
    formant_tilt: Annotated[float, Field(description="Spectral slope of harmonic amplitudes, dB/octave")] = -6.0
    harmonic_count: Annotated[int, Field(ge=1)] = 30
    noise_floor: Annotated[float, Field(ge=0, le=0.1, description="Std of additive white noise")] = 0.003
    rng_seed: int
    group: Annotated[str, Field(min_length=1, description="Accent group; selects the vowel inventory")] = DEFAULT_GROUP
    name: Annotated[Optional[str], Field(description="Speaker id (default spkNN by position)")] = None


class TrimConfig(BaseModel):
    """Silence trimming and pitch detection parameters."""
    model_config = ConfigDict(extra="forbid")

    energy_threshold_db: Annotated[float, Field(gt=0, description="Keep segments within this many dB of the loudest")] = 40.0
    voicing_threshold: Annotated[float, Field(gt=0, lt=1)] = 0.3
    segment_samples: Annotated[int, Field(ge=1)] = HOP_LENGTH
    pitch_window_samples: Annotated[int, Field(ge=16)] = 3 * HOP_LENGTH
    min_pitch_hz: Annotated[float, Field(gt=0)] = 60.0
    max_pitch_hz: Annotated[float, Field(gt=0)] = 400.0


class SyntheticCorpusConfig(BaseModel):
    """Settings of ``make-corpus``; explicit ``specs`` replace the default speaker set."""
    model_config = ConfigDict(extra="forbid")

    speakers: Annotated[int, Field(ge=2)] = 4
    utts_per_speaker: Annotated[int, Field(ge=1)] = 50
    utt_seconds: Annotated[float, Field(gt=0)] = 2.0
    groups: Annotated[int, Field(ge=1, description="Accent groups the default speakers are spread over")] = 1
    train_ratio: Annotated[float, Field(gt=0, le=1)] = 0.9
    seed: int = 0
    specs: Optional[list[SynthSpeakerSpec]] = None
    held_out_speakers: Annotated[int, Field(ge=0, description="Trailing speakers kept out of training for any-to-any evaluation")] = 0

    @model_validator(mode="after")
    def _check_held_out(self) -> "SyntheticCorpusConfig":
        count = len(self.specs) if self.specs else self.speakers
        if count - self.held_out_speakers < 2:
            raise ValueError(f"held_out_speakers={self.held_out_speakers} leaves fewer than 2 of {count} speakers for training")
        return self

    def speaker_specs(self) -> list[SynthSpeakerSpec]:
        return list(self.specs) if self.specs else default_speaker_specs(self.speakers, self.groups, self.seed)


@dataclass(frozen=True, eq=False)
class Utterance:
    """One spectrogram with its speaker, split and group."""
    utt_id: str
    speaker: str
    mel: MelSpectrogram
    split: str = SPLIT_TRAIN
    group: str = DEFAULT_GROUP

    @property
    def frames(self) -> int:
        return self.mel.frames


@dataclass(frozen=True, eq=False)
class CorpusHandle:
    """Immutable set of utterances grouped by speaker.

    A speaker is either held out (every utterance ``unseen``) or has at
    least one training utterance.

    Raises:
        ValueError: On duplicate utterance ids, unknown split labels, a
            speaker without training utterances or a partly held-out speaker
    """
    utterances: tuple[Utterance, ...]

    def __post_init__(self):
        ordered = tuple(sorted(self.utterances, key=lambda u: (u.speaker, u.utt_id)))
        object.__setattr__(self, "utterances", ordered)

        seen: set[str] = set()
        for utt in ordered:
            if utt.utt_id in seen:
                raise ValueError(f"duplicate utterance id {utt.utt_id!r}")
            seen.add(utt.utt_id)
            if utt.split not in SPLITS:
                raise ValueError(f"utterance {utt.utt_id!r} has invalid split {utt.split!r}")

        for speaker, utts in self.by_speaker.items():
            unseen = sum(u.split == SPLIT_UNSEEN for u in utts)
            if unseen == len(utts):
                continue
            if unseen:
                raise ValueError(f"speaker {speaker!r} mixes unseen and train/test utterances")
            if not any(u.split == SPLIT_TRAIN for u in utts):
                raise ValueError(f"speaker {speaker!r} has no training utterances")

    @cached_property
    def by_speaker(self) -> dict[str, tuple[Utterance, ...]]:
        grouped: dict[str, list[Utterance]] = {}
        for utt in self.utterances:
            grouped.setdefault(utt.speaker, []).append(utt)
        return {speaker: tuple(utts) for speaker, utts in grouped.items()}

    @property
    def speakers(self) -> tuple[str, ...]:
        return tuple(self.by_speaker)

    @property
    def training_speakers(self) -> tuple[str, ...]:
        return tuple(s for s, utts in self.by_speaker.items() if utts[0].split != SPLIT_UNSEEN)

    @property
    def unseen_speakers(self) -> tuple[str, ...]:
        return tuple(s for s, utts in self.by_speaker.items() if utts[0].split == SPLIT_UNSEEN)

    @property
    def split(self) -> dict[str, str]:
        return {utt.utt_id: utt.split for utt in self.utterances}

    @property
    def groups(self) -> dict[str, str]:
        """Speaker id to group."""
        return {speaker: utts[0].group for speaker, utts in self.by_speaker.items()}

    @property
    def mel_bins(self) -> int:
        return self.utterances[0].mel.mel_bins

    def train_utterances(self, speaker: Optional[str] = None) -> list[Utterance]:
        return self._select(SPLIT_TRAIN, speaker)

    def test_utterances(self, speaker: Optional[str] = None) -> list[Utterance]:
        return self._select(SPLIT_TEST, speaker)

    def unseen_utterances(self, speaker: Optional[str] = None) -> list[Utterance]:
        return self._select(SPLIT_UNSEEN, speaker)

    def with_held_out(self, speakers: Iterable[str]) -> "CorpusHandle":
        """Copy with every utterance of ``speakers`` relabelled ``unseen``.

        Raises:
            ValueError: If a speaker is unknown or fewer than two would remain for training
        """
        held_out = set(speakers)
        unknown = sorted(held_out - set(self.speakers))
        if unknown:
            raise ValueError(f"cannot hold out unknown speakers: {', '.join(unknown)}")
        if len(set(self.training_speakers) - held_out) < 2:
            raise ValueError("holding out these speakers leaves fewer than 2 training speakers")
        return CorpusHandle(tuple(
            replace(utt, split=SPLIT_UNSEEN) if utt.speaker in held_out else utt for utt in self.utterances
        ))

    def _select(self, split: str, speaker: Optional[str]) -> list[Utterance]:
        pool = self.by_speaker.get(speaker, ()) if speaker is not None else self.utterances
        return [utt for utt in pool if utt.split == split]

    def __len__(self) -> int:
        return len(self.utterances)


def assign_split(utt_ids: Sequence[str], train_ratio: float, seed: int) -> dict[str, str]:
    """Seeded train/test assignment for one speaker's utterances.

    ``round(n * (1 - train_ratio))`` utterances go to test, capped at
    ``n - 1`` so at least one stays in train.
    """
    if not 0.0 < train_ratio <= 1.0:
        raise ValueError(f"train_ratio must be in (0, 1], got {train_ratio}")
    n = len(utt_ids)
    n_test = min(max(n - 1, 0), int(round(n * (1.0 - train_ratio))))
    order = np.random.default_rng(seed).permutation(n)
    test = {utt_ids[i] for i in order[:n_test]}
    return {utt_id: SPLIT_TEST if utt_id in test else SPLIT_TRAIN for utt_id in utt_ids}


def _split_seed(seed: int, speaker: str) -> list[int]:
    return [seed, zlib.crc32(speaker.encode("utf-8"))]


def _autocorrelation_peak(frame: np.ndarray, sample_rate_hz: int, cfg: TrimConfig) -> tuple[float, int]:
    """Best normalized autocorrelation over the pitch lag range, as (r, lag)."""
    energy = float(np.dot(frame, frame))
    min_lag = max(1, int(sample_rate_hz / cfg.max_pitch_hz))
    max_lag = min(frame.shape[0] - 1, int(math.ceil(sample_rate_hz / cfg.min_pitch_hz)))
    if energy <= 0.0 or max_lag < min_lag:
        return 0.0, 0
    corr = scipy.signal.correlate(frame, frame, mode="full", method="fft")[frame.shape[0] - 1:]
    lags = corr[min_lag:max_lag + 1] / energy
    best = int(np.argmax(lags))
    return float(lags[best]), min_lag + best


def trim_silence(wave: Waveform, cfg: Optional[TrimConfig] = None) -> Waveform:
    """Drop segments that are neither energetic nor voiced.

    The waveform is cut into ``segment_samples`` pieces. A piece is kept if
    its mean-square energy is within ``energy_threshold_db`` of the loudest
    piece, or if the normalized autocorrelation of a
    ``pitch_window_samples`` window centered on it peaks above
    ``voicing_threshold`` within the pitch lag range. Pieces with no
    signal at all are always dropped. Kept pieces are concatenated.

    Raises:
        NoSpeechError: If nothing is kept
    """
    cfg = cfg or TrimConfig()
    samples = wave.samples
    seg = cfg.segment_samples
    starts = range(0, samples.shape[0], seg)
    energies = np.array([float(np.mean(samples[s:s + seg] ** 2)) for s in starts])
    peak = float(energies.max())
    if peak <= 0.0:
        raise NoSpeechError("no speech content: waveform is silent")

    floor = peak * 10.0 ** (-cfg.energy_threshold_db / 10.0)
    half_window = cfg.pitch_window_samples // 2
    keep = []
    for start, energy in zip(starts, energies):
        if energy <= 0.0:
            keep.append(False)
            continue
        if energy >= floor:
            keep.append(True)
            continue
        center = start + seg // 2
        window = samples[max(0, center - half_window):center + half_window]
        r, _ = _autocorrelation_peak(window, wave.sample_rate_hz, cfg)
        keep.append(r >= cfg.voicing_threshold)

    if not any(keep):
        raise NoSpeechError("no speech content: every segment is below the energy and voicing thresholds")
    if all(keep):
        return wave

    kept = np.concatenate([samples[s:s + seg] for s, k in zip(starts, keep) if k])
    logger.debug(f"Trimmed {samples.shape[0] - kept.shape[0]} of {samples.shape[0]} samples")
    return Waveform(kept, wave.sample_rate_hz)


def estimate_pitch(wave: Waveform, cfg: Optional[TrimConfig] = None) -> float:
    """Median autocorrelation pitch in Hz over voiced, energetic frames.

    Raises:
        NoSpeechError: If no frame is voiced
    """
    cfg = cfg or TrimConfig()
    samples = wave.samples
    if samples.shape[0] < WIN_LENGTH:
        samples = np.pad(samples, (0, WIN_LENGTH - samples.shape[0]))
    frames = librosa.util.frame(samples, frame_length=WIN_LENGTH, hop_length=HOP_LENGTH, axis=0)
    energies = np.mean(frames ** 2, axis=1)
    floor = energies.max() * 10.0 ** (-cfg.energy_threshold_db / 10.0)

    pitches = []
    for frame, energy in zip(frames, energies):
        if energy <= 0.0 or energy < floor:
            continue
        r, lag = _autocorrelation_peak(frame, wave.sample_rate_hz, cfg)
        if r >= cfg.voicing_threshold and lag > 0:
            pitches.append(wave.sample_rate_hz / lag)

    if not pitches:
        raise NoSpeechError("no speech content: no voiced frames")
    return float(np.median(pitches))


def default_speaker_specs(count: int = 4, groups: int = 1, seed: int = 0) -> list[SynthSpeakerSpec]:
    """Well separated synthetic speakers.

    The first four use base pitches 110, 150, 210 and 280 Hz with distinct
    tilts; larger sets spread pitches geometrically over 100-300 Hz.
    """
    if count < 2:
        raise ValueError(f"need at least 2 speakers, got {count}")
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")

    if count <= len(_DEFAULT_PITCHES_HZ):
        pitches = list(_DEFAULT_PITCHES_HZ[:count])
    else:
        pitches = [float(p) for p in np.geomspace(100.0, 300.0, count)]

    specs = []
    for i, pitch in enumerate(pitches):
        specs.append(SynthSpeakerSpec(
            base_pitch_hz=pitch,
            formant_tilt=_DEFAULT_TILTS_DB[i % len(_DEFAULT_TILTS_DB)],
            harmonic_count=max(1, min(40, int(5000.0 / pitch))),
            rng_seed=seed * 1000 + i + 1,
            group=f"group{i % groups}" if groups > 1 else DEFAULT_GROUP,
            name=f"spk{i:02d}",
        ))
    return specs


def vowel_inventory(group: str) -> np.ndarray:
    """Group-specific (F1, F2) formant pairs, shape (vowels, 2)."""
    rng = np.random.default_rng(zlib.crc32(group.encode("utf-8")))
    return _REFERENCE_VOWELS * rng.uniform(0.85, 1.15, size=_REFERENCE_VOWELS.shape)


def _formant_gain(freqs: np.ndarray, formants: np.ndarray, bandwidth_hz: float = 90.0) -> np.ndarray:
    gain = np.ones_like(freqs)
    for k in range(formants.shape[-1]):
        gain += 4.0 / (1.0 + ((freqs - formants[..., k]) / bandwidth_hz) ** 2)
    return gain


def synthesize_utterance(
    spec: SynthSpeakerSpec,
    index: int,
    seconds: float,
    sample_rate_hz: int = SAMPLE_RATE_HZ,
) -> Waveform:
    """Harmonic-plus-noise "speech" for one speaker, deterministic per (seed, index).

    Syllables of random length each carry one vowel from the group's
    inventory under a raised-cosine envelope. Pitch follows a smoothed random
    walk around ``base_pitch_hz``; harmonic ``h`` is attenuated by
    ``formant_tilt * log2(h)`` dB and boosted near the vowel formants.
    """
    rng = np.random.default_rng([spec.rng_seed, index])
    n = int(round(seconds * sample_rate_hz))
    if n < WIN_LENGTH:
        raise ValueError(f"utterance of {seconds} s is shorter than one analysis window")

    # Pitch: random walk at the hop rate, scaled into +/- pitch_jitter
    control = max(2, n // HOP_LENGTH + 1)
    walk = np.cumsum(rng.normal(size=control))
    walk -= walk.mean()
    walk /= max(1.0, float(np.max(np.abs(walk))))
    f0 = spec.base_pitch_hz * (1.0 + spec.pitch_jitter * np.interp(
        np.arange(n), np.linspace(0, n - 1, control), walk
    ))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate_hz

    # Syllables: vowel id per sample and an amplitude envelope
    vowels = vowel_inventory(spec.group)
    formants = np.zeros((n, 2))
    envelope = np.zeros(n)
    pos = int(rng.integers(0, int(0.05 * sample_rate_hz)))
    while pos < n:
        length = int(rng.uniform(0.12, 0.30) * sample_rate_hz)
        end = min(n, pos + length)
        formants[pos:end] = vowels[int(rng.integers(len(vowels)))]
        envelope[pos:end] = rng.uniform(0.6, 1.0) * np.hanning(length)[: end - pos]
        pos = end + int(rng.uniform(0.0, 0.06) * sample_rate_hz)

    voiced = np.zeros(n)
    nyquist = sample_rate_hz / 2.0
    for h in range(1, spec.harmonic_count + 1):
        freqs = h * f0
        audible = freqs < nyquist
        if not audible.any():
            break
        amplitude = 10.0 ** (spec.formant_tilt * math.log2(h) / 20.0) * _formant_gain(freqs, formants)
        voiced += np.where(audible, amplitude * np.sin(h * phase), 0.0)

    voiced *= envelope
    peak = float(np.max(np.abs(voiced)))
    if peak > 0:
        voiced *= 0.5 / peak
    signal = voiced + spec.noise_floor * rng.normal(size=n)
    return Waveform(np.clip(signal, -1.0, 1.0), sample_rate_hz)


def generate_synthetic_corpus(
    specs: Sequence[SynthSpeakerSpec],
    utts_per_speaker: int,
    utt_seconds: float,
    train_ratio: float = 0.9,
    split_seed: int = 0,
    held_out_speakers: int = 0,
) -> CorpusHandle:
    """Synthesize, analyze and split a multi-speaker corpus.

    The last ``held_out_speakers`` specs are marked ``unseen`` instead of
    being split.

    Raises:
        ValueError: With fewer than two training specs, duplicate seeds or duplicate names
    """
    if len(specs) < 2:
        raise ValueError("a corpus needs at least 2 speaker specs")
    if not 0 <= held_out_speakers <= len(specs) - 2:
        raise ValueError(f"held_out_speakers must be in [0, {len(specs) - 2}], got {held_out_speakers}")
    if utts_per_speaker < 1:
        raise ValueError(f"utts_per_speaker must be >= 1, got {utts_per_speaker}")
    seeds = [spec.rng_seed for spec in specs]
    if len(set(seeds)) != len(seeds):
        raise ValueError(f"duplicate speaker seeds: {seeds}")
    names = [spec.name or f"spk{i:02d}" for i, spec in enumerate(specs)]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate speaker names: {names}")

    utterances = []
    unseen = set(names[len(names) - held_out_speakers:])
    for speaker, spec in zip(names, specs):
        ids = [f"{speaker}_{k:03d}" for k in range(utts_per_speaker)]
        if speaker in unseen:
            splits = dict.fromkeys(ids, SPLIT_UNSEEN)
        else:
            splits = assign_split(ids, train_ratio, _split_seed(split_seed, speaker))
        for k, utt_id in enumerate(ids):
            mel = melspectrogram(synthesize_utterance(spec, k, utt_seconds))
            utterances.append(Utterance(utt_id, speaker, mel, splits[utt_id], spec.group))
        logger.debug(f"Synthesized {utts_per_speaker} utterances for {speaker} ({spec.base_pitch_hz} Hz)")

    corpus = CorpusHandle(tuple(utterances))
    logger.info(
        f"Generated corpus: {len(corpus.speakers)} speakers, {len(corpus.train_utterances())} train / "
        f"{len(corpus.test_utterances())} test / {len(corpus.unseen_utterances())} unseen utterances"
    )
    return corpus


def save_corpus(handle: CorpusHandle, directory: str | Path) -> Path:
    """Write mel files, sidecars and ``manifest.txt``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    lines = [MANIFEST_HEADER]
    for utt in handle.utterances:
        rel = Path("mels") / utt.speaker / f"{utt.utt_id}.mel"
        write_mel(directory / rel, utt.mel, {
            "utt_id": utt.utt_id,
            "speaker": utt.speaker,
            "group": utt.group,
        })
        lines.append("\t".join([utt.speaker, rel.as_posix(), utt.split, str(utt.frames)]))

    manifest = directory / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Saved {len(handle)} utterances to {directory}")
    return manifest


def _read_manifest(directory: Path) -> list[Utterance]:
    manifest = directory / MANIFEST_NAME
    utterances = []
    for lineno, raw in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise CorpusFormatError(manifest, lineno, f"expected 4 tab-separated fields, found {len(fields)}")
        speaker, rel, split, frames_text = (f.strip() for f in fields)
        if not speaker:
            raise CorpusFormatError(manifest, lineno, "empty speaker id")
        if split not in SPLITS:
            raise CorpusFormatError(manifest, lineno, f"split must be one of {', '.join(SPLITS)}, got {split!r}")
        try:
            frames = int(frames_text)
        except ValueError:
            raise CorpusFormatError(manifest, lineno, f"frames must be an integer, got {frames_text!r}")

        mel_path = directory / rel
        if not mel_path.exists():
            raise CorpusFormatError(manifest, lineno, f"missing mel file {mel_path}")
        try:
            mel = read_mel(mel_path)
            meta = read_mel_metadata(mel_path)
        except ValueError as e:
            raise CorpusFormatError(manifest, lineno, str(e))
        if mel.frames != frames:
            raise CorpusFormatError(manifest, lineno, f"{mel_path} has {mel.frames} frames, manifest says {frames}")

        utterances.append(Utterance(
            utt_id=str(meta.get("utt_id", mel_path.stem)),
            speaker=speaker,
            mel=mel,
            split=split,
            group=str(meta.get("group", DEFAULT_GROUP)),
        ))
    return utterances


def ingest_audio(path: str | Path, trim_cfg: Optional[TrimConfig] = None) -> MelSpectrogram:
    """Audio file -> mono -> 22050 Hz -> trimmed -> log-mel."""
    samples, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    mono = samples.mean(axis=1)
    if sample_rate != SAMPLE_RATE_HZ:
        mono = librosa.resample(mono, orig_sr=sample_rate, target_sr=SAMPLE_RATE_HZ)
    wave = Waveform(np.clip(mono, -1.0, 1.0), SAMPLE_RATE_HZ)
    return melspectrogram(trim_silence(wave, trim_cfg))


def _audio_files(speaker_dir: Path) -> Iterable[Path]:
    return sorted(p for p in speaker_dir.iterdir() if p.is_file() and p.suffix.lower() in AUDIO_SUFFIXES)


def _ingest_audio_tree(
    audio_dir: Path,
    known_ids: set[str],
    trim_cfg: Optional[TrimConfig],
    train_ratio: float,
    split_seed: int,
) -> list[Utterance]:
    """Ingest every new audio file, then split each speaker's usable utterances.

    Files with no speech or too short for one analysis window are skipped
    with a warning before the split is drawn.

    Raises:
        CorpusFormatError: If a speaker has audio files but none is usable
    """
    utterances = []
    for speaker_dir in sorted(p for p in audio_dir.iterdir() if p.is_dir()):
        speaker = speaker_dir.name
        files = [p for p in _audio_files(speaker_dir) if f"{speaker}_{p.stem}" not in known_ids]
        if not files:
            continue

        mels: dict[str, MelSpectrogram] = {}
        for path in files:
            try:
                mels[f"{speaker}_{path.stem}"] = ingest_audio(path, trim_cfg)
            except NoSpeechError:
                logger.warning(f"Skipping {path}: no speech content")
            except InputTooShortError as e:
                logger.warning(f"Skipping {path}: {e}")
        if not mels:
            raise CorpusFormatError(speaker_dir, None, f"speaker {speaker!r} has no usable audio ({len(files)} files skipped)")

        splits = assign_split(list(mels), train_ratio, _split_seed(split_seed, speaker))
        utterances.extend(Utterance(utt_id, speaker, mel, splits[utt_id]) for utt_id, mel in mels.items())
        logger.info(f"Ingested {len(mels)} of {len(files)} audio files for speaker {speaker}")
    return utterances


def load_corpus(
    directory: str | Path,
    trim_cfg: Optional[TrimConfig] = None,
    train_ratio: float = 0.9,
    split_seed: int = 0,
    held_out_speakers: Sequence[str] = (),
) -> CorpusHandle:
    """Load a corpus directory.

    Utterances listed in ``manifest.txt`` are read from their mel files;
    audio under ``audio/<speaker>/`` not already in the manifest is
    ingested and split with ``train_ratio``/``split_seed``. Speakers named
    in ``held_out_speakers`` are relabelled ``unseen``.

    Raises:
        FileNotFoundError: If the directory has neither a manifest nor audio
        CorpusFormatError: If a manifest line is malformed or names a missing file,
            or a speaker's audio folder has no usable file
        ValueError: If ``held_out_speakers`` names an unknown speaker
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {directory}")

    manifest = directory / MANIFEST_NAME
    audio_dir = directory / "audio"
    if not manifest.exists() and not audio_dir.is_dir():
        raise FileNotFoundError(f"No {MANIFEST_NAME} or audio/ directory in {directory}")

    utterances = _read_manifest(directory) if manifest.exists() else []
    if audio_dir.is_dir():
        known = {utt.utt_id for utt in utterances}
        utterances.extend(_ingest_audio_tree(audio_dir, known, trim_cfg, train_ratio, split_seed))
    if not utterances:
        raise CorpusFormatError(directory, None, "corpus has no utterances")

    corpus = CorpusHandle(tuple(utterances))
    if held_out_speakers:
        corpus = corpus.with_held_out(held_out_speakers)
    logger.info(f"Loaded corpus from {directory}: {len(corpus.speakers)} speakers, {len(corpus)} utterances")
    return corpus
