"""Run provenance records for AutoCycle-VC commands."""

import json
import sys
import time
from datetime import datetime, timezone
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Optional

from .checkpoint import file_sha256


class RunRecorder:
    """Collects what a command ran with and writes it as ``run.json``.

    The record holds the command, argv, effective config, seed, input
    paths, sha256 hashes of checkpoints read or written, the start time,
    wall time and outcome, plus optional summaries of training logs.
    """

    def __init__(self, record_path: str | Path, command: str, argv: list[str]):
        """Initialize a record for one command invocation.

        Args:
            record_path: Destination JSON file
            command: Subcommand name
            argv: Command-line arguments as given
        """
        self.record_path = Path(record_path)
        self.entry: dict[str, Any] = {
            "command": command,
            "argv": list(argv),
            "config": {},
            "seed": None,
            "inputs": {},
            "checkpoints": {},
            "outputs": {},
            "started_at": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": None,
            "outcome": None,
        }

    def set_config(self, config: dict[str, Any], seed: Optional[int] = None):
        self.entry["config"] = config
        self.entry["seed"] = seed

    def add_input(self, name: str, path: str | Path):
        self.entry["inputs"][name] = str(path)

    def add_output(self, name: str, path: str | Path):
        self.entry["outputs"][name] = str(path)

    def add_checkpoint(self, name: str, path: str | Path):
        """Record a checkpoint's path and sha256 (missing files are recorded without a hash)."""
        path = Path(path)
        self.entry["checkpoints"][name] = {
            "path": str(path),
            "sha256": file_sha256(path) if path.exists() else None,
        }

    def add_summary(self, name: str, summary: dict[str, Any]):
        """Attach a statistics block (e.g. a training log summary) under ``summaries``."""
        self.entry.setdefault("summaries", {})[name] = summary

    def finish(self, wall_time_s: float, error: Optional[str] = None):
        """Write the record.

        Args:
            wall_time_s: Elapsed seconds of the command
            error: Error message, or None on success
        """
        self.entry["wall_time_s"] = round(wall_time_s, 3)
        self.entry["outcome"] = {"status": "error", "message": error} if error else {"status": "ok"}

        try:
            self.record_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.record_path, 'w') as f:
                f.write(json.dumps(self.entry, indent=2, sort_keys=True) + "\n")
                f.flush()  # Ensure immediate write
        except Exception as e:
            # Don't raise - a failed record shouldn't turn a finished run into a failure
            print(f"WARNING: Failed to write run record: {e}", file=sys.stderr)


def recorded(recorder_for: Callable[..., Optional[RunRecorder]]):
    """Decorator that times a command handler and finishes its run record.

    Args:
        recorder_for: Called with the handler's arguments; returns the
            RunRecorder to finish, or None to skip recording

    Returns:
        Decorated function that writes the record on success and on error
    """
    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            recorder = recorder_for(*args, **kwargs)

            try:
                result = func(*args, **kwargs)
                if recorder is not None:
                    recorder.finish(time.time() - start_time)
                return result
            except Exception as e:
                if recorder is not None:
                    recorder.finish(time.time() - start_time, error=str(e))
                raise

        return wrapper
    return decorator
