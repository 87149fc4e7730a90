"""Beat annotations and their plain-text file format.

One event per line: ``<time_seconds> [<position>]``. Position 1 marks a
downbeat; the position column is either present on every line or on none.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np


class AnnotationError(ValueError):
    pass


@dataclass
class BeatAnnotation:
    times: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        if self.positions is not None:
            self.positions = np.asarray(self.positions, dtype=np.int64).reshape(-1)
            if len(self.positions) != len(self.times):
                raise AnnotationError("times and positions differ in length")
            if np.any(self.positions < 1):
                raise AnnotationError("positions must be >= 1")
        if np.any(np.diff(self.times) <= 0):
            raise AnnotationError("beat times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def has_downbeats(self) -> bool:
        return self.positions is not None

    @property
    def downbeats(self) -> np.ndarray:
        if self.positions is None:
            return np.zeros(0)
        return self.times[self.positions == 1]

    def select(self, mask: np.ndarray) -> "BeatAnnotation":
        pos = None if self.positions is None else self.positions[mask]
        return BeatAnnotation(self.times[mask], pos)

    def shifted(self, offset: float) -> "BeatAnnotation":
        return BeatAnnotation(self.times + offset, self.positions)

    def scaled(self, factor: float) -> "BeatAnnotation":
        return BeatAnnotation(self.times * factor, self.positions)

    def within(self, start: float, stop: float) -> "BeatAnnotation":
        """Events with ``start <= t < stop``."""
        return self.select((self.times >= start) & (self.times < stop))


def load_annotations(path) -> BeatAnnotation:
    times, positions = [], []
    with open(os.fspath(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            try:
                if len(fields) == 1:
                    times.append(float(fields[0]))
                    positions.append(None)
                elif len(fields) == 2:
                    times.append(float(fields[0]))
                    positions.append(int(fields[1]))
                else:
                    raise ValueError("expected 1 or 2 columns")
            except ValueError as exc:
                raise AnnotationError(f"{path}:{lineno}: cannot parse {line.strip()!r} ({exc})") from None
            if len(times) > 1 and times[-1] <= times[-2]:
                raise AnnotationError(f"{path}:{lineno}: time {times[-1]} is not after {times[-2]}")

    has_pos = [p is not None for p in positions]
    if any(has_pos) and not all(has_pos):
        raise AnnotationError(f"{path}: position column present on some lines only")
    pos = np.array(positions, dtype=np.int64) if positions and all(has_pos) else None
    return BeatAnnotation(np.array(times, dtype=np.float64), pos)


def save_annotations(path, ann: BeatAnnotation) -> None:
    with open(os.fspath(path), "w") as fh:
        for i, t in enumerate(ann.times):
            if ann.positions is None:
                fh.write(f"{t:.6f}\n")
            else:
                fh.write(f"{t:.6f}\t{ann.positions[i]}\n")
