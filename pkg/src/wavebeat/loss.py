"""Binary cross-entropy and the mean-false-error loss on activation frames.

Inputs are arrays whose last axis is time (frames); every other axis (batch,
beat/downbeat row) indexes an independent row. Both losses average over rows.
"""

from __future__ import annotations

import numpy as np

EPS = 1e-7


def _check(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def _elementwise(pred, target):
    p = np.clip(pred, EPS, 1.0 - EPS)
    return -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))


def _elementwise_grad(pred, target):
    p = np.clip(pred, EPS, 1.0 - EPS)
    g = -target / p + (1.0 - target) / (1.0 - p)
    return np.where((pred >= EPS) & (pred <= 1.0 - EPS), g, 0.0)


def bce(pred, target) -> float:
    """Mean BCE over all frames and rows, predictions clamped to ``[EPS, 1 - EPS]``."""
    pred, target = _check(pred, target)
    return float(_elementwise(pred, target).mean())


def bce_grad(pred, target) -> np.ndarray:
    pred, target = _check(pred, target)
    return _elementwise_grad(pred, target) / pred.size


def _row_terms(pred, target):
    neg = target < 0.5
    pos = ~neg
    n_neg = neg.sum(axis=-1)
    n_pos = pos.sum(axis=-1)
    err = _elementwise(pred, target)
    fpe = np.where(n_neg > 0, (err * neg).sum(axis=-1) / np.maximum(n_neg, 1), 0.0)
    fne = np.where(n_pos > 0, (err * pos).sum(axis=-1) / np.maximum(n_pos, 1), 0.0)
    return neg, pos, n_neg, n_pos, fpe, fne


def mfe(pred, target) -> tuple[float, float, float]:
    """Returns ``(total, fpe, fne)`` where ``total = fpe + fne``.

    ``fpe`` is the mean BCE over frames without an event, ``fne`` over frames
    with one, each averaged across rows. A row with no frames of a kind
    contributes zero to that term.
    """
    pred, target = _check(pred, target)
    *_, fpe, fne = _row_terms(pred, target)
    fpe = float(fpe.mean())
    fne = float(fne.mean())
    return fpe + fne, fpe, fne


def mfe_grad(pred, target) -> np.ndarray:
    """Gradient of ``mfe(pred, target)[0]`` with respect to ``pred``."""
    pred, target = _check(pred, target)
    neg, pos, n_neg, n_pos, _, _ = _row_terms(pred, target)
    n_rows = pred.size // pred.shape[-1] if pred.ndim else 1
    weight = np.where(neg, 1.0 / np.maximum(n_neg, 1)[..., None], 1.0 / np.maximum(n_pos, 1)[..., None])
    return _elementwise_grad(pred, target) * weight / n_rows
