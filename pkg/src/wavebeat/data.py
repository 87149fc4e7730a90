"""Targets, excerpt sampling, augmentation and dataset manifests."""

from __future__ import annotations

import logging
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .annotations import AnnotationError, BeatAnnotation, load_annotations, save_annotations
from .audio import SAMPLE_RATE, Waveform, load_audio, resample_array

log = logging.getLogger(__name__)

__all__ = [
    "AnnotationError", "BeatAnnotation", "load_annotations", "save_annotations",
    "TargetMatrix", "make_targets", "Track", "Excerpt", "sample_excerpt",
    "AugmentationConfig", "augment", "pitch_shift", "read_manifest", "write_manifest", "load_dataset",
]

EXCERPT_LENGTH = 1 << 21
FRAME_RATE = SAMPLE_RATE / 256


@dataclass
class TargetMatrix:
    values: np.ndarray          # (2, n_frames), row 0 beats, row 1 downbeats
    frame_rate: float
    dropped: int = 0            # events outside the frame range
    collisions: int = 0         # events sharing a frame with an earlier event

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def make_targets(ann: BeatAnnotation, n_frames: int, frame_rate: float = FRAME_RATE) -> TargetMatrix:
    """Binary beat/downbeat frames at ``round(time * frame_rate)``.

    Events landing outside ``[0, n_frames)`` are dropped. Downbeats are set in
    both rows. Dropped events and frame collisions are counted and logged.
    """
    values = np.zeros((2, n_frames), dtype=np.float32)
    idx = np.rint(ann.times * frame_rate).astype(np.int64)
    keep = (idx >= 0) & (idx < n_frames)
    dropped = int((~keep).sum())
    kept = idx[keep]
    collisions = len(kept) - len(np.unique(kept))
    values[0, kept] = 1.0
    if ann.positions is not None:
        values[1, idx[keep & (ann.positions == 1)]] = 1.0
    if collisions:
        log.warning("%d beat events collide on shared target frames", collisions)
    return TargetMatrix(values, frame_rate, dropped, collisions)


@dataclass
class Track:
    audio: Waveform
    annotation: BeatAnnotation
    name: str = ""


@dataclass
class Excerpt:
    samples: np.ndarray
    annotation: BeatAnnotation
    source: str = ""
    start: int = 0


def sample_excerpt(track: Track, rng: np.random.Generator, length: int = EXCERPT_LENGTH) -> Excerpt:
    """Uniformly placed window of ``length`` samples, zero-padded if the track is shorter.

    Annotation times are re-based to the window start; events outside it are dropped.
    """
    if track.audio.sample_rate != SAMPLE_RATE:
        raise ValueError(f"track must be at {SAMPLE_RATE} Hz")
    n = len(track.audio)
    start = int(rng.integers(0, n - length + 1)) if n > length else 0
    seg = np.zeros(length, dtype=np.float64)
    piece = track.audio.samples[start:start + length]
    seg[:len(piece)] = piece
    t0 = start / SAMPLE_RATE
    ann = track.annotation.within(t0, t0 + length / SAMPLE_RATE).shifted(-t0)
    return Excerpt(seg, ann, track.name, start)


@dataclass
class AugmentationConfig:
    p_filter: float = 0.25
    p_pitch: float = 0.5
    p_noise: float = 0.05
    p_tanh: float = 0.2
    p_shift: float = 0.3
    p_dropout: float = 0.05
    p_invert: float = 0.5
    max_semitones: float = 8.0
    max_shift_s: float = 0.070
    max_dropout_fraction: float = 0.10
    highpass_hz: tuple = (20.0, 250.0)
    lowpass_hz: tuple = (4000.0, 10000.0)
    snr_db: tuple = (15.0, 40.0)
    tanh_gain: tuple = (1.0, 4.0)

    def __post_init__(self):
        for name in TRANSFORMS:
            p = getattr(self, "p_" + name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p_{name} must lie in [0, 1], got {p}")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(**{"p_" + name: 0.0 for name in TRANSFORMS})

    @classmethod
    def only(cls, name: str) -> "AugmentationConfig":
        """Config that always applies exactly one transform."""
        cfg = cls.disabled()
        setattr(cfg, "p_" + name, 1.0)
        return cfg


TRANSFORMS = ("filter", "pitch", "noise", "tanh", "shift", "dropout", "invert")


def _log_uniform(rng, lo, hi):
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _filter(x, ann, cfg, rng, sr):
    if rng.random() < 0.5:
        kind, cutoff = "highpass", _log_uniform(rng, *cfg.highpass_hz)
    else:
        kind, cutoff = "lowpass", _log_uniform(rng, *cfg.lowpass_hz)
    sos = scipy.signal.butter(2, cutoff, btype=kind, fs=sr, output="sos")
    return scipy.signal.sosfilt(sos, x), ann


def pitch_shift(x: np.ndarray, ann: BeatAnnotation, semitones: float,
                sr: float = SAMPLE_RATE) -> tuple[np.ndarray, BeatAnnotation]:
    """Shift pitch and tempo together by resampling with factor ``2**(semitones/12)``.

    The output keeps the input length (zero-padded or cropped); beat times are
    divided by the factor and events past the end are dropped.
    """
    factor = 2.0 ** (semitones / 12.0)
    n = len(x)
    y = resample_array(x, 1.0 / factor)
    out = np.zeros(n)
    out[:min(n, len(y))] = y[:n]
    return out, ann.scaled(1.0 / factor).within(0.0, n / sr)


def _pitch(x, ann, cfg, rng, sr):
    return pitch_shift(x, ann, rng.uniform(-cfg.max_semitones, cfg.max_semitones), sr)


def _noise(x, ann, cfg, rng, sr):
    snr = rng.uniform(*cfg.snr_db)
    power = float(np.mean(x ** 2))
    if power == 0.0:
        return x, ann
    noise = rng.standard_normal(len(x)) * np.sqrt(power / 10.0 ** (snr / 10.0))
    return x + noise, ann


def _tanh(x, ann, cfg, rng, sr):
    peak = np.max(np.abs(x))
    if peak == 0.0:
        return x, ann
    y = np.tanh(rng.uniform(*cfg.tanh_gain) * x)
    return y * (peak / np.max(np.abs(y))), ann


def _shift(x, ann, cfg, rng, sr):
    offset = rng.uniform(-cfg.max_shift_s, cfg.max_shift_s)
    return x, ann.shifted(offset).within(0.0, len(x) / sr)


def _dropout(x, ann, cfg, rng, sr):
    n = len(x)
    fraction = cfg.max_dropout_fraction * (1.0 - rng.random())  # in (0, max]
    width = max(1, int(fraction * n))
    start = int(rng.integers(0, n - width + 1))
    y = x.copy()
    y[start:start + width] = 0.0
    t0, t1 = start / sr, (start + width) / sr
    return y, ann.select((ann.times < t0) | (ann.times >= t1))


def _invert(x, ann, cfg, rng, sr):
    return -x, ann


_APPLY = dict(filter=_filter, pitch=_pitch, noise=_noise, tanh=_tanh, shift=_shift,
              dropout=_dropout, invert=_invert)


def augment(samples: np.ndarray, ann: BeatAnnotation, cfg: AugmentationConfig,
            rng: np.random.Generator, sample_rate: float = SAMPLE_RATE,
            ) -> tuple[np.ndarray, BeatAnnotation, list[str]]:
    """Apply each transform independently with its probability, in a fixed order.

    Returns the new samples, the matching annotation and the names of the
    transforms that fired. Output length always equals input length.
    """
    x = samples
    fired = []
    for name in TRANSFORMS:
        if rng.random() < getattr(cfg, "p_" + name):
            x, ann = _APPLY[name](np.asarray(x, dtype=np.float64), ann, cfg, rng, sample_rate)
            fired.append(name)
    return x, ann, fired


# -- manifests -------------------------------------------------------------------

def read_manifest(path) -> "OrderedDict[str, list[tuple[str, str]]]":
    """Dataset manifest: ``audio<TAB>annotation`` lines grouped under ``[label]`` headers.

    Relative paths resolve against the manifest directory. Lines before any
    header belong to the label ``default``.
    """
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    groups: OrderedDict[str, list] = OrderedDict()
    label = "default"
    with open(os.fspath(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            if line.startswith("[") and line.rstrip().endswith("]"):
                label = line.strip()[1:-1].strip()
                groups.setdefault(label, [])
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'audio<TAB>annotation'")
            audio, annotation = (os.path.join(base, p.strip()) for p in parts)
            groups.setdefault(label, []).append((audio, annotation))
    return groups


def write_manifest(path, groups: dict[str, list[tuple[str, str]]]) -> None:
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    with open(os.fspath(path), "w") as fh:
        for label, items in groups.items():
            fh.write(f"[{label}]\n")
            for audio, annotation in items:
                fh.write(f"{os.path.relpath(audio, base)}\t{os.path.relpath(annotation, base)}\n")


def load_dataset(path) -> "OrderedDict[str, list[Track]]":
    out = OrderedDict()
    for label, items in read_manifest(path).items():
        out[label] = [Track(load_audio(a), load_annotations(b), os.path.splitext(os.path.basename(a))[0])
                      for a, b in items]
    return out
