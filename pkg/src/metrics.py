"""Training metrics for AutoCycle-VC."""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np


logger = logging.getLogger(__name__)


@dataclass
class SeriesMetrics:
    """Statistics for one scalar series (a loss term, an accuracy, ...).

    Attributes:
        count: Number of values recorded
        total: Sum of recorded values
        values: Individual values in recording order
        non_finite: Number of NaN or infinite values seen
    """
    count: int = 0
    total: float = 0.0
    values: List[float] = field(default_factory=list)
    non_finite: int = 0

    def record(self, value: float):
        """Record a single value.

        Args:
            value: Scalar to append
        """
        value = float(value)
        self.count += 1
        self.values.append(value)
        if math.isfinite(value):
            self.total += value
        else:
            self.non_finite += 1

    def get_summary(self) -> dict:
        """Summary statistics for this series.

        Mean, min, max and percentiles are over finite values only; an
        all-non-finite or empty series reports zeros.

        Returns:
            Dictionary containing count, mean, min, max, last and percentiles
        """
        finite = np.array([v for v in self.values if math.isfinite(v)], dtype=np.float64)
        summary = {"count": self.count, "non_finite": self.non_finite}
        if finite.size == 0:
            return {**summary, "mean": 0.0, "min": 0.0, "max": 0.0, "last": 0.0, "p50": 0.0, "p95": 0.0}

        p50, p95 = np.percentile(finite, [50, 95])
        return {
            **summary,
            "mean": self.total / finite.size,
            "min": float(finite.min()),
            "max": float(finite.max()),
            "last": self.values[-1],
            "p50": float(p50),
            "p95": float(p95),
        }


class TrainLog:
    """Per-step records of a training run.

    Keeps every row in memory and, when ``csv_path`` is given, appends each
    row to a CSV file as it is recorded. The file is started afresh with a
    header and each row is flushed as it is appended. Floats are written
    with ``repr`` so reruns produce identical bytes.
    """

    def __init__(
        self,
        columns: Sequence[str],
        index_name: str = "iteration",
        csv_path: Optional[str | Path] = None,
    ):
        """Initialize an empty log.

        Args:
            columns: Names of the scalar columns, in CSV order
            index_name: Name of the step counter column
            csv_path: Optional CSV mirror; created with its parent directory
        """
        self.columns = list(columns)
        self.index_name = index_name
        self.csv_path = Path(csv_path) if csv_path is not None else None
        self._entries: List[Dict[str, float]] = []
        self._series: Dict[str, SeriesMetrics] = {name: SeriesMetrics() for name in self.columns}

        if self.csv_path is not None:
            self.csv_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.csv_path, "w", newline="") as f:
                csv.writer(f).writerow([self.index_name, *self.columns])

    def record(self, index: int, values: Mapping[str, float]):
        """Record one row.

        Args:
            index: Step or epoch number
            values: Mapping with a value for every column
        """
        missing = [name for name in self.columns if name not in values]
        if missing:
            raise ValueError(f"TrainLog row {index} is missing columns: {', '.join(missing)}")

        row = {self.index_name: index}
        for name in self.columns:
            value = float(values[name])
            row[name] = value
            self._series[name].record(value)
        self._entries.append(row)

        if self.csv_path is not None:
            try:
                with open(self.csv_path, "a", newline="") as f:
                    csv.writer(f).writerow([index, *(repr(row[name]) for name in self.columns)])
                    f.flush()
            except OSError as e:
                # A full disk should not kill a long training run
                logger.warning(f"Failed to append to training log {self.csv_path}: {e}")

    @property
    def entries(self) -> List[Dict[str, float]]:
        return list(self._entries)

    def column(self, name: str) -> List[float]:
        """All recorded values of one column."""
        return list(self._series[name].values)

    def window_mean(self, name: str, start: int, stop: int) -> float:
        """Mean of a column over rows ``start:stop`` (Python slice semantics)."""
        window = self._series[name].values[start:stop]
        if not window:
            raise ValueError(f"Empty window [{start}:{stop}] for column {name}")
        return sum(window) / len(window)

    def get_summary(self) -> dict:
        """Summary statistics of every column."""
        return {
            "rows": len(self._entries),
            "columns": {name: series.get_summary() for name, series in self._series.items()},
        }

    def __len__(self) -> int:
        return len(self._entries)
