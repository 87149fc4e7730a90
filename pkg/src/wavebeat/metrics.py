"""Beat tracking evaluation: F-measure and continuity-based accuracies.

Continuity follows the usual conventions of the beat tracking evaluation
literature: an estimate is correct when it is within 17.5 % of the local
annotation interval of its nearest annotation and its own inter-beat interval
agrees with the annotation interval to within 17.5 %.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .annotations import BeatAnnotation

F_TOLERANCE = 0.070
METRICS = ("beat_f", "beat_cmlt", "beat_amlt", "downbeat_f", "downbeat_cmlt", "downbeat_amlt")


def _sorted(x, name):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if np.any(np.diff(x) < 0):
        raise ValueError(f"{name} times must be sorted")
    return x


def trim(times, start=5.0):
    times = np.asarray(times, dtype=np.float64)
    return times[times >= start]


def match_events(est, ref, tolerance=F_TOLERANCE) -> int:
    """Size of the one-to-one matching, scanning references chronologically
    and taking the earliest unused estimate within ``tolerance``.

    Intervals of equal width are ordered identically by both endpoints, which
    makes this greedy scan a maximum matching.
    """
    j = 0
    hits = 0
    for r in ref:
        while j < len(est) and est[j] < r - tolerance:
            j += 1
        if j < len(est) and est[j] <= r + tolerance:
            hits += 1
            j += 1
    return hits


def f_measure(est, ref, tolerance: float = F_TOLERANCE) -> float:
    est = _sorted(est, "estimated")
    ref = _sorted(ref, "reference")
    if len(est) == 0 and len(ref) == 0:
        return 1.0
    if len(est) == 0 or len(ref) == 0:
        return 0.0
    hits = match_events(est, ref, tolerance)
    if hits == 0:
        return 0.0
    precision = hits / len(est)
    recall = hits / len(ref)
    return 2 * precision * recall / (precision + recall)


def _interpolate(ref, factor):
    """Annotations with ``factor - 1`` evenly spaced beats inserted per interval."""
    idx = np.arange(0, len(ref) - 1 + 1e-9, 1.0 / factor)
    return np.interp(idx, np.arange(len(ref)), ref)


def reference_variations(ref) -> dict[str, np.ndarray]:
    double = _interpolate(ref, 2)
    triple = _interpolate(ref, 3)
    out = {
        "identity": ref,
        "offbeat": double[1::2],
        "double": double,
        "half_odd": ref[0::2],
        "half_even": ref[1::2],
        "triple": triple,
    }
    for phase in range(3):
        out[f"third_{phase}"] = ref[phase::3]
    return out


def _correct_beats(est, ref, phase_tol, period_tol):
    ok = np.zeros(len(est), dtype=bool)
    if len(ref) < 2 or len(est) < 2:
        return ok
    for n, e in enumerate(est):
        nearest = int(np.argmin(np.abs(ref - e)))
        if nearest > 0:
            ref_interval = ref[nearest] - ref[nearest - 1]
        else:
            ref_interval = ref[1] - ref[0]
        phase_ok = abs(e - ref[nearest]) < phase_tol * ref_interval
        est_interval = est[1] - est[0] if n == 0 else e - est[n - 1]
        period_ok = abs(est_interval / ref_interval - 1.0) < period_tol
        ok[n] = phase_ok and period_ok
    return ok


def _longest_run(ok):
    best = run = 0
    for v in ok:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def _continuity_single(est, ref, phase_tol, period_tol):
    ok = _correct_beats(est, ref, phase_tol, period_tol)
    denom = max(len(est), len(ref))
    if denom == 0:
        return 0.0, 0.0
    return _longest_run(ok) / denom, ok.sum() / denom


def continuity(est, ref, phase_tol: float = 0.175, period_tol: float = 0.175):
    """Returns ``(cmlc, cmlt, amlc, amlt)``.

    Scores are normalised by the larger of the estimate and reference counts,
    so spurious extra beats are penalised. The allowed metrical levels are the
    reference itself, its off-beat, double, half, triple and third variants.
    """
    est = _sorted(est, "estimated")
    ref = _sorted(ref, "reference")
    if len(ref) < 2:
        raise ValueError("continuity needs at least two reference beats")
    cmlc, cmlt = _continuity_single(est, ref, phase_tol, period_tol)
    amlc, amlt = cmlc, cmlt
    for name, variant in reference_variations(ref).items():
        if name == "identity" or len(variant) < 2:
            continue
        c, t = _continuity_single(est, variant, phase_tol, period_tol)
        amlc = max(amlc, c)
        amlt = max(amlt, t)
    return float(cmlc), float(cmlt), float(amlc), float(amlt)


def track_scores(est_beats, est_downbeats, ref: BeatAnnotation, skip_first: float = 0.0) -> dict[str, float]:
    """Per-track metrics; downbeat entries are NaN when ``ref`` has no positions."""
    def prep(x):
        x = np.asarray(x, dtype=np.float64)
        return trim(x, skip_first) if skip_first > 0 else x

    scores = {}
    pairs = [("beat", prep(est_beats), prep(ref.times))]
    if ref.has_downbeats:
        pairs.append(("downbeat", prep(est_downbeats), prep(ref.downbeats)))
    for kind, est, truth in pairs:
        scores[f"{kind}_f"] = f_measure(est, truth)
        if len(truth) >= 2:
            _, cmlt, _, amlt = continuity(est, truth)
        else:
            cmlt = amlt = math.nan
        scores[f"{kind}_cmlt"] = cmlt
        scores[f"{kind}_amlt"] = amlt
    for m in METRICS:
        scores.setdefault(m, math.nan)
    return scores


@dataclass
class EvalReport:
    per_track: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def n_tracks(self) -> int:
        return len(self.per_track)

    @property
    def means(self) -> dict[str, float]:
        out = {}
        for m in METRICS:
            vals = [s[m] for s in self.per_track.values() if not math.isnan(s[m])]
            out[m] = float(np.mean(vals)) if vals else math.nan
        return out

    def to_table(self) -> str:
        name_w = max([5] + [len(k) for k in self.per_track])
        head = f"{'track':<{name_w}}  " + "  ".join(f"{m:>13}" for m in METRICS)
        lines = [head, "-" * len(head)]
        rows = list(self.per_track.items()) + [("MEAN", self.means)]
        for name, scores in rows:
            cells = "  ".join(f"{'-' if math.isnan(scores[m]) else format(scores[m], '.3f'):>13}" for m in METRICS)
            lines.append(f"{name:<{name_w}}  {cells}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["track", "metric", "value"])
        for name, scores in self.per_track.items():
            for m in METRICS:
                writer.writerow([name, m, "nan" if math.isnan(scores[m]) else f"{scores[m]:.6f}"])
        return buf.getvalue()


def evaluate_dataset(predictions: dict, references: dict[str, BeatAnnotation],
                     skip_first: float = 0.0) -> EvalReport:
    """``predictions`` maps track names to objects with ``beats``/``downbeats``
    (e.g. :class:`~wavebeat.decode.BeatSequence`)."""
    if set(predictions) != set(references):
        missing = sorted(set(references) - set(predictions))
        extra = sorted(set(predictions) - set(references))
        raise KeyError(f"track sets differ: missing predictions {missing}, unexpected {extra}")
    report = EvalReport()
    for name in sorted(references):
        pred = predictions[name]
        report.per_track[name] = track_scores(pred.beats, pred.downbeats, references[name], skip_first)
    return report
