"""Desk-scale synthetic corpus and the overfit experiment built on it."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .audio import synth_click_track
from .data import FRAME_RATE, Track, make_targets
from .decode import ActivationMatrix, dbn_decode, peak_pick
from .metrics import f_measure
from .model import DESK_CONFIG, ModelConfig, build
from .trainer import DESK_TRAIN, TrainConfig, train, validate

log = logging.getLogger(__name__)


def click_suite(n_tracks: int, seed: int, tempo_range=(80.0, 160.0), meters=(3, 4),
                duration_s: float = 12.0, prefix: str = "click") -> list[Track]:
    """Click tracks with random tempo, alternating meters and per-track timbre."""
    rng = np.random.default_rng(seed)
    tracks = []
    for i in range(n_tracks):
        tempo = float(rng.uniform(*tempo_range))
        meter = meters[i % len(meters)]
        timbre = int(rng.integers(0, 2**31 - 1))
        audio, ann = synth_click_track(tempo, meter, duration_s, timbre)
        tracks.append(Track(audio, ann, f"{prefix}{i:03d}"))
    return tracks


def by_meter(tracks: list[Track]) -> dict[str, list[Track]]:
    """Group tracks into one dataset label per meter, for balanced sampling."""
    out: dict[str, list[Track]] = {}
    for t in tracks:
        meter = int(t.annotation.positions.max()) if t.annotation.has_downbeats else 0
        out.setdefault(f"meter{meter}", []).append(t)
    return dict(sorted(out.items()))


def oracle_activation(ann, n_frames: int, frame_rate: float = FRAME_RATE,
                      peak: float = 0.95, floor: float = 0.01) -> ActivationMatrix:
    """Ideal network output for ``ann``: ``peak`` on event frames, ``floor`` elsewhere."""
    targets = make_targets(ann, n_frames, frame_rate).values
    return ActivationMatrix(np.where(targets > 0, peak, floor), frame_rate)


def corrupt_activation(act: ActivationMatrix, rng: np.random.Generator, delete_fraction: float = 0.1,
                       n_blips: int = 5, blip: float = 0.9) -> ActivationMatrix:
    """Delete a fraction of beat pulses (and their downbeats) and add spurious beat blips
    at frames at least 5 frames from any pulse."""
    values = act.values.copy()
    floor = float(values.min())
    pulses = np.flatnonzero(values[0] > 0.5)
    n_del = int(round(delete_fraction * len(pulses)))
    gone = rng.choice(pulses, size=n_del, replace=False)
    values[:, gone] = floor
    far = np.ones(values.shape[1], dtype=bool)
    for p in pulses:
        far[max(0, p - 5):p + 6] = False
    blips = rng.choice(np.flatnonzero(far), size=n_blips, replace=False)
    values[0, blips] = blip
    return ActivationMatrix(values, act.frame_rate)


def ibi_cv(times) -> float:
    """Coefficient of variation of inter-beat intervals (NaN for fewer than three beats)."""
    d = np.diff(np.asarray(times, dtype=float))
    return float(d.std() / d.mean()) if len(d) > 1 else float("nan")


@dataclass
class DecoderComparison:
    name: str
    dbn_cv: float
    peak_cv: float
    dbn_f: float
    peak_f: float


def decoder_robustness(n_tracks: int = 20, seed: int = 0, duration_s: float = 30.0) -> list[DecoderComparison]:
    """Decode corrupted oracle activations of a click suite with both decoders."""
    rng = np.random.default_rng(seed)
    out = []
    for track in click_suite(n_tracks, seed, duration_s=duration_s, prefix="corrupt"):
        ann = track.annotation
        act = oracle_activation(ann, int(duration_s * FRAME_RATE))
        bad = corrupt_activation(act, rng)
        dbn, peak = dbn_decode(bad), peak_pick(bad)
        out.append(DecoderComparison(track.name, ibi_cv(dbn.beats), ibi_cv(peak.beats),
                                     f_measure(dbn.beats, ann.times), f_measure(peak.beats, ann.times)))
    return out


@dataclass
class OverfitResult:
    beat_f: float
    downbeat_f: float
    history: list
    model: object


def overfit_experiment(model_cfg: ModelConfig = DESK_CONFIG, train_cfg: TrainConfig = DESK_TRAIN,
                       n_train: int = 16, n_val: int = 4, n_test: int = 4, seed: int = 0,
                       init_seed: int = 0, checkpoint_path=None) -> OverfitResult:
    """Train on synthetic clicks and score peak-picked output on held-out tracks."""
    train_tracks = click_suite(n_train, seed, prefix="train")
    val_tracks = click_suite(n_val, seed + 1, prefix="val")
    test_tracks = click_suite(n_test, seed + 2, prefix="test")
    model = build(model_cfg, init_seed)
    model, history = train(model, by_meter(train_tracks), train_cfg, val_tracks=val_tracks,
                           checkpoint_path=checkpoint_path)
    beat_f, down_f = validate(model, test_tracks)
    return OverfitResult(beat_f, down_f, history, model)
