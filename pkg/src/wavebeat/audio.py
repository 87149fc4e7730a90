"""Audio I/O, band-limited resampling and synthetic click tracks."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .annotations import BeatAnnotation

SAMPLE_RATE = 22050

RESAMPLE_TAPS = 32
RESAMPLE_PHASES = 1024
KAISER_BETA = 8.0


class AudioError(Exception):
    """Base class for audio loading failures."""


class UnreadableAudioError(AudioError):
    pass


class UnsupportedEncodingError(AudioError):
    pass


class EmptyAudioError(AudioError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # 24-bit files are read left-justified into int32
        return data.astype(np.float64) / 2147483648.0
    if data.dtype in (np.float32, np.float64):
        return data.astype(np.float64)
    raise UnsupportedEncodingError(f"unsupported sample format {data.dtype}")


def load_audio(path, target_rate: float = SAMPLE_RATE) -> Waveform:
    """Read a PCM/float WAV file as a mono waveform at ``target_rate``.

    Channels are averaged before resampling.
    """
    path = os.fspath(path)
    if not os.path.isfile(path) or not os.access(path, os.R_OK):
        raise UnreadableAudioError(f"cannot read {path!r}")
    try:
        rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        lowered = msg.lower()
        if "bit depth" in lowered or "unknown wave file format" in lowered or "unsupported" in lowered:
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise UnreadableAudioError(f"{path}: {msg}") from exc
    except (OSError, EOFError) as exc:
        raise UnreadableAudioError(f"{path}: {exc}") from exc

    if data.size == 0 or data.shape[0] == 0:
        raise EmptyAudioError(f"{path} contains no samples")
    samples = _to_float(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return resample(Waveform(samples, float(rate)), target_rate)


def save_audio(path, w: Waveform) -> None:
    """Write 16-bit PCM."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    scipy.io.wavfile.write(os.fspath(path), int(round(w.sample_rate)), pcm)


def _kaiser(x: np.ndarray, half_width: float, beta: float) -> np.ndarray:
    r = np.clip(x / half_width, -1.0, 1.0)
    return np.i0(beta * np.sqrt(1.0 - r * r)) / np.i0(beta)


def _phase_table(cutoff: float) -> np.ndarray:
    """Filter weights for each fractional phase, rows normalised to unit DC gain.

    Row ``p`` holds the taps for input offsets ``-15..16`` relative to
    ``floor(position)`` when ``position - floor(position) = p / RESAMPLE_PHASES``.
    """
    half = RESAMPLE_TAPS // 2
    offsets = np.arange(-half + 1, half + 1)
    frac = np.arange(RESAMPLE_PHASES + 1) / RESAMPLE_PHASES
    x = offsets[None, :] - frac[:, None]
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * x) * _kaiser(x, half, KAISER_BETA)
    return h / h.sum(axis=1, keepdims=True)


def resample_array(samples: np.ndarray, ratio: float, n_out: int | None = None,
                   chunk: int = 1 << 16) -> np.ndarray:
    """Resample ``samples`` by ``ratio`` = output rate / input rate."""
    samples = np.asarray(samples, dtype=np.float64)
    n_in = len(samples)
    if n_out is None:
        n_out = int(round(n_in * ratio))
    if n_out == 0 or n_in == 0:
        return np.zeros(n_out)
    table = _phase_table(0.5 * min(1.0, ratio))
    half = RESAMPLE_TAPS // 2
    padded = np.concatenate([np.zeros(half), samples, np.zeros(half + 1)])
    step = 1.0 / ratio
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(n_out)
    for start in range(0, n_out, chunk):
        j = np.arange(start, min(start + chunk, n_out))
        pos = j * step
        base = np.floor(pos).astype(np.int64)
        phase = np.rint((pos - base) * RESAMPLE_PHASES).astype(np.int64)
        idx = base[:, None] + offsets[None, :] + half
        valid = (idx >= 0) & (idx < len(padded))
        taps = np.where(valid, padded[np.clip(idx, 0, len(padded) - 1)], 0.0)
        out[start:start + len(j)] = np.einsum("nk,nk->n", taps, table[phase])
    return out


def resample(w: Waveform, target_rate: float) -> Waveform:
    """Windowed-sinc resampling to ``target_rate``; output length rounds ``len * ratio``."""
    if not target_rate > 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(np.array(w.samples, dtype=np.float64, copy=True), w.sample_rate)
    ratio = target_rate / w.sample_rate
    return Waveform(resample_array(w.samples, ratio), float(target_rate))


def _click(rng: np.random.Generator, centre_hz: float, sr: float,
           decay_s: float = 0.020, length_s: float = 0.100) -> np.ndarray:
    n = int(round(length_s * sr))
    t = np.arange(n) / sr
    burst = rng.standard_normal(n) * np.exp(-t / decay_s)
    lo, hi = centre_hz / 1.5, min(centre_hz * 1.5, 0.45 * sr)
    sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=sr, output="sos")
    click = scipy.signal.sosfilt(sos, burst)
    return click / np.max(np.abs(click))


def synth_click_track(tempo_bpm: float, beats_per_bar: int, duration_s: float,
                      timbre_seed: int, sample_rate: float = SAMPLE_RATE,
                      ) -> tuple[Waveform, BeatAnnotation]:
    """Metronome-style click track with louder, darker downbeat clicks.

    Beats fall at ``k * 60 / tempo_bpm`` for every ``k >= 0`` below ``duration_s``;
    the first beat is a downbeat. ``timbre_seed`` fixes the click spectra and
    the noise realisation, so the output is deterministic.
    """
    if not 40 <= tempo_bpm <= 300:
        raise ValueError(f"tempo_bpm must lie in [40, 300], got {tempo_bpm}")
    if beats_per_bar not in (3, 4):
        raise ValueError(f"beats_per_bar must be 3 or 4, got {beats_per_bar}")
    if not duration_s > 0:
        raise ValueError("duration_s must be positive")

    rng = np.random.default_rng(timbre_seed)
    beat_hz = float(np.exp(rng.uniform(np.log(3000.0), np.log(6000.0))))
    down_hz = float(np.exp(rng.uniform(np.log(700.0), np.log(1400.0))))

    n = int(round(duration_s * sample_rate))
    out = np.zeros(n)
    period = 60.0 / tempo_bpm
    times = []
    k = 0
    while k * period < duration_s:
        times.append(k * period)
        k += 1
    times = np.array(times)
    positions = np.arange(len(times)) % beats_per_bar + 1

    for t, pos in zip(times, positions):
        downbeat = pos == 1
        click = _click(rng, down_hz if downbeat else beat_hz, sample_rate)
        gain = 0.8 if downbeat else 0.4  # +6 dB on downbeats
        start = int(round(t * sample_rate))
        stop = min(n, start + len(click))
        out[start:stop] += gain * click[:stop - start]

    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 0.95:
        out *= 0.95 / peak
    return Waveform(out, float(sample_rate)), BeatAnnotation(times, positions)
