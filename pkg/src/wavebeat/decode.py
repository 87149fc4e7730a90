"""Turn activation matrices into beat and downbeat times."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .annotations import BeatAnnotation


@dataclass
class ActivationMatrix:
    values: np.ndarray   # (2, n_frames): beat row, downbeat row
    frame_rate: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != 2:
            raise ValueError(f"activations must have shape (2, n_frames), got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate


@dataclass
class BeatSequence:
    beats: np.ndarray
    downbeats: np.ndarray

    def __post_init__(self):
        self.beats = np.asarray(self.beats, dtype=np.float64).reshape(-1)
        self.downbeats = np.asarray(self.downbeats, dtype=np.float64).reshape(-1)

    def to_annotation(self) -> BeatAnnotation:
        """Number beats within bars; beats before the first downbeat count back
        from it using the most common bar length."""
        if len(self.downbeats) == 0:
            return BeatAnnotation(self.beats)
        is_down = np.array([np.min(np.abs(self.downbeats - t)) < 1e-6 for t in self.beats])
        first = int(np.argmax(is_down))
        down_idx = np.flatnonzero(is_down)
        bars = Counter(np.diff(down_idx).tolist())
        bar_len = bars.most_common(1)[0][0] if bars else 4
        positions = np.zeros(len(self.beats), dtype=np.int64)
        pos = 0
        for i in range(first, len(self.beats)):
            pos = 1 if is_down[i] else pos + 1
            positions[i] = pos
        for i in range(first):
            positions[i] = (bar_len - (first - i)) % bar_len + 1
        return BeatAnnotation(self.beats, positions)


def _pick_row(row: np.ndarray, threshold: float, min_sep_frames: float) -> list[int]:
    n = len(row)
    if n == 0:
        return []
    left = np.concatenate([[-np.inf], row[:-1]])
    right = np.concatenate([row[1:], [-np.inf]])
    candidates = np.flatnonzero((row > left) & (row > right) & (row > threshold))
    accepted: list[int] = []
    for i in candidates:
        if accepted and i - accepted[-1] < min_sep_frames:
            if row[i] > row[accepted[-1]]:
                accepted[-1] = i
            continue
        accepted.append(int(i))
    return accepted


def peak_pick(act: ActivationMatrix, threshold: float = 0.5,
              min_separation_s: float = 60.0 / 300.0) -> BeatSequence:
    """Thresholded local maxima per row, thinned greedily left to right.

    A candidate closer than ``min_separation_s`` to the last accepted peak
    replaces it if higher and is discarded otherwise. Downbeat peaks snap to a
    beat peak within two frames, or are added as beats.
    """
    min_sep = min_separation_s * act.frame_rate
    beats = _pick_row(act.values[0], threshold, min_sep)
    downs = _pick_row(act.values[1], threshold, min_sep)
    beat_set = set(beats)
    down_frames = []
    for d in downs:
        near = [b for b in beats if abs(b - d) <= 2]
        if near:
            down_frames.append(min(near, key=lambda b: (abs(b - d), b)))
        else:
            beat_set.add(d)
            down_frames.append(d)
    beat_frames = np.array(sorted(beat_set), dtype=np.float64)
    down_frames = np.array(sorted(set(down_frames)), dtype=np.float64)
    return BeatSequence(beat_frames / act.frame_rate, down_frames / act.frame_rate)


@dataclass
class DbnConfig:
    min_bpm: float = 55.0
    max_bpm: float = 215.0
    tempo_states: int = 60
    beats_per_bar: tuple = (3, 4)
    transition_lambda: float = 100.0
    observation_floor: float = 1e-6
    observation_lambda: int = 16

    def __post_init__(self):
        if not 0 < self.min_bpm < self.max_bpm:
            raise ValueError("need 0 < min_bpm < max_bpm")
        if self.tempo_states < 2:
            raise ValueError("tempo_states must be >= 2")
        if self.observation_lambda < 2:
            raise ValueError("observation_lambda must be >= 2")


def beat_intervals(cfg: DbnConfig, frame_rate: float) -> np.ndarray:
    """Distinct integer beat periods (frames) of the log-spaced tempo grid."""
    bpm = np.exp(np.linspace(np.log(cfg.min_bpm), np.log(cfg.max_bpm), cfg.tempo_states))
    frames = np.rint(60.0 * frame_rate / bpm)
    # keep every period inside the tempo range
    frames = np.clip(frames, np.ceil(60.0 * frame_rate / cfg.max_bpm), np.floor(60.0 * frame_rate / cfg.min_bpm))
    return np.unique(frames.astype(np.int64))


class _BarPointer:
    """Flat state space: for each meter, tempo and beat within the bar, one
    segment of ``interval`` cells. Cell 0 of each segment is the beat onset."""

    def __init__(self, cfg: DbnConfig, frame_rate: float):
        self.intervals = beat_intervals(cfg, frame_rate)
        n_t = len(self.intervals)
        self.meters = list(cfg.beats_per_bar)
        seg_meter, seg_tempo, seg_beat, seg_len = [], [], [], []
        for mi, m in enumerate(self.meters):
            for k in range(m):
                for ti, length in enumerate(self.intervals):
                    seg_meter.append(mi)
                    seg_tempo.append(ti)
                    seg_beat.append(k)
                    seg_len.append(length)
        self.seg_meter = np.array(seg_meter)
        self.seg_tempo = np.array(seg_tempo)
        self.seg_beat = np.array(seg_beat)
        self.seg_len = np.array(seg_len)
        self.seg_start = np.concatenate([[0], np.cumsum(self.seg_len)[:-1]])
        self.seg_end = self.seg_start + self.seg_len - 1
        self.n_states = int(self.seg_len.sum())

        self.state_seg = np.repeat(np.arange(len(self.seg_len)), self.seg_len)
        self.state_cell = np.arange(self.n_states) - self.seg_start[self.state_seg]
        self.seg_width = np.maximum(1, np.rint(self.seg_len / cfg.observation_lambda)).astype(np.int64)
        in_region = self.state_cell < self.seg_width[self.state_seg]
        # 0: downbeat region, 1: other beat region, 2: between beats
        self.category = np.where(in_region, np.where(self.seg_beat[self.state_seg] == 0, 0, 1), 2)

        ratio = np.log(self.intervals[None, :] / self.intervals[:, None])
        log_a = -cfg.transition_lambda * np.abs(ratio)
        self.log_trans = log_a - np.logaddexp.reduce(log_a, axis=1, keepdims=True)  # [from, to]

        # Segment index of (meter, beat, tempo); segments of each meter are
        # stored beat-major, tempo-minor.
        self.meter_offset = []
        off = 0
        for m in self.meters:
            self.meter_offset.append(off)
            off += m * n_t


def dbn_decode(act: ActivationMatrix, cfg: DbnConfig | None = None) -> BeatSequence:
    """Viterbi decoding of a bar-pointer hidden Markov model.

    The phase advances one cell per frame; at each beat boundary the tempo may
    change, penalised by ``exp(-lambda * |log(tau'/tau)|)``. Downbeat activation
    scores the first ``1/observation_lambda`` of a bar, beat activation the same
    share of every other beat, and ``(1 - beat) / (observation_lambda - 1)``
    everything in between. Meter is whichever
    hypothesis ends with the best path. Each decoded beat is placed on the
    activation maximum within its beat region.
    """
    cfg = cfg or DbnConfig()
    n = act.n_frames
    if n < 2:
        raise ValueError("need at least two activation frames")
    sp = _BarPointer(cfg, act.frame_rate)
    if n < sp.intervals.min():
        return BeatSequence(np.zeros(0), np.zeros(0))

    floor = cfg.observation_floor
    beat = np.clip(act.values[0], 0.0, 1.0)
    down = np.clip(act.values[1], 0.0, 1.0)
    # Between-beat cells share the non-beat mass, so a pulse one frame wide does
    # not make beat regions (several cells) costlier than the gaps between them.
    between = (1.0 - beat) / (cfg.observation_lambda - 1)
    obs = np.log(np.maximum(np.stack([down, beat, between], axis=1), floor))  # (n, 3)

    n_t = len(sp.intervals)
    n_seg = len(sp.seg_len)
    backptr = np.zeros((n, n_seg), dtype=np.int16)
    starts, ends = sp.seg_start, sp.seg_end
    score = obs[0][sp.category].copy()
    new = np.empty_like(score)
    for t in range(1, n):
        new[1:] = score[:-1]
        for mi, m in enumerate(sp.meters):
            off = sp.meter_offset[mi]
            segs = slice(off, off + m * n_t)
            end_scores = score[ends[segs]].reshape(m, n_t)            # [beat, from-tempo]
            prev = np.roll(end_scores, 1, axis=0)                     # beat k-1 feeds beat k
            cand = prev[:, :, None] + sp.log_trans[None, :, :]        # [beat, from, to]
            best = np.argmax(cand, axis=1)                            # [beat, to]
            new[starts[segs]] = np.take_along_axis(cand, best[:, None, :], axis=1)[:, 0, :].reshape(-1)
            backptr[t, segs] = best.reshape(-1)
        new += obs[t][sp.category]
        score, new = new, score

    # Backtrack segment onsets. The first one may precede frame 0 when the
    # path starts inside a beat.
    onsets = []
    state = int(np.argmax(score))
    t = n - 1
    while True:
        seg = sp.state_seg[state]
        t0 = t - (state - starts[seg])
        onsets.append((t0, seg))
        if t0 <= 0:
            break
        mi = sp.seg_meter[seg]
        k_prev = (sp.seg_beat[seg] - 1) % sp.meters[mi]
        prev_seg = sp.meter_offset[mi] + k_prev * n_t + int(backptr[t0, seg])
        state = int(ends[prev_seg])
        t = t0 - 1

    # Place each beat at the activation maximum inside its beat region, keeping
    # every interval within one frame of the tempo range. A region cut by
    # either end of the input only yields a beat if the activation there
    # favours a beat over the between-beat state.
    min_gap = int(np.ceil(60.0 * act.frame_rate / cfg.max_bpm - 1.0))
    max_gap = int(np.floor(60.0 * act.frame_rate / cfg.min_bpm + 1.0))
    beat_frames, down_frames = [], []
    for t0, seg in reversed(onsets):
        lo, hi = max(t0, 0), min(t0 + sp.seg_width[seg], n)
        if beat_frames:
            lo = max(lo, beat_frames[-1] + min_gap)
            hi = min(hi, beat_frames[-1] + max_gap + 1)
        if lo >= hi:
            continue
        is_down = sp.seg_beat[seg] == 0
        row = down if is_down else beat
        frame = lo + int(np.argmax(row[lo:hi]))
        truncated = t0 < 0 or t0 + sp.seg_width[seg] > n
        if truncated and row[frame] <= (1.0 - row[frame]) / (cfg.observation_lambda - 1):
            continue
        beat_frames.append(frame)
        if is_down:
            down_frames.append(frame)

    beats = np.array(beat_frames, dtype=np.float64) / act.frame_rate
    downs = np.array(down_frames, dtype=np.float64) / act.frame_rate
    return BeatSequence(beats, downs)
