"""Exception hierarchy for AutoCycle-VC."""

from pathlib import Path


class AutoCycleError(Exception):
    """Base class for every error raised by this package."""


class InputTooShortError(AutoCycleError, ValueError):
    """Signal or spectrogram shorter than the analysis unit it needs."""


class UnalignedSequencesError(AutoCycleError, ValueError):
    """Two feature sequences that must be frame-aligned are not."""

    def __init__(self, message: str = "unaligned sequences"):
        super().__init__(message)


class FrameAlignmentError(AutoCycleError, ValueError):
    """Frame count is not a multiple of the content encoder downsample factor."""

    def __init__(self, frames: int, factor: int):
        self.frames = frames
        self.factor = factor
        super().__init__(
            f"frames not aligned to downsample factor ({frames} frames, factor {factor})"
        )


class TrainingDivergedError(AutoCycleError, RuntimeError):
    """A loss term became NaN or infinite."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        message = f"training diverged at step {step}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class NoSpeechError(AutoCycleError, ValueError):
    """Silence trimming removed everything."""

    def __init__(self, message: str = "no speech content"):
        super().__init__(message)


class CorpusFormatError(AutoCycleError, ValueError):
    """Corpus directory contents do not match the manifest layout."""

    def __init__(self, path: str | Path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        location = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{location}: {message}")


class EmptyTestSetError(AutoCycleError, ValueError):
    """Evaluation was asked to run on a corpus without test utterances."""

    def __init__(self, message: str = "test set is empty"):
        super().__init__(message)
