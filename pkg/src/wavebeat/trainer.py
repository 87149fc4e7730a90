"""Training loop: balanced excerpt sampling, augmentation, MFE loss, Adam with
gradient clipping, plateau learning-rate decay and best-model checkpointing."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import os
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import loss as losses
from . import nn
from .data import AugmentationConfig, Track, augment, make_targets, sample_excerpt
from .decode import ActivationMatrix, peak_pick
from .kvfile import read_kv, write_kv
from .metrics import f_measure
from .model import WaveBeatModel, from_mapping, infer, save_model

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 16
    excerpt_length: int = 1 << 21
    epochs: int = 100
    excerpts_per_dataset_per_epoch: int = 1000
    lr: float = 1e-3
    lr_decay_factor: float = 0.1
    patience_epochs: int = 10
    clip_norm: float = 4.0
    seed: int = 0
    augment: bool = True
    workers: int = 1

    def __post_init__(self):
        for name in ("batch_size", "excerpt_length", "excerpts_per_dataset_per_epoch",
                     "patience_epochs", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if not self.lr > 0 or not self.clip_norm > 0:
            raise ValueError("lr and clip_norm must be positive")

    def save(self, path):
        write_kv(path, dataclasses.asdict(self))

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return from_mapping(cls, read_kv(path))


PAPER_TRAIN = TrainConfig()
DESK_TRAIN = TrainConfig(batch_size=8, excerpt_length=1 << 17, epochs=30,
                         excerpts_per_dataset_per_epoch=32, patience_epochs=10, augment=False)


@dataclass
class TrainState:
    epoch: int = 0
    best_score: float = 0.0
    epochs_since_improvement: int = 0
    lr: float = 1e-3
    optimizer: nn.AdamState = field(default_factory=nn.AdamState)
    best_params: dict | None = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_beat_f: float
    val_downbeat_f: float
    lr: float


def split_tracks(tracks: list, seed: int, fractions=(0.8, 0.1, 0.1)):
    """Seeded train/val/test split by track."""
    order = np.random.default_rng(seed).permutation(len(tracks))
    n_train = int(round(fractions[0] * len(tracks)))
    n_val = int(round(fractions[1] * len(tracks)))
    pick = lambda idx: [tracks[i] for i in idx]
    return pick(order[:n_train]), pick(order[n_train:n_train + n_val]), pick(order[n_train + n_val:])


def validate(model, tracks: list[Track], activations_fn=None, threshold: float = 0.5):
    """Mean (beat F, downbeat F) with peak picking over full tracks.

    ``activations_fn(track) -> ActivationMatrix`` replaces model inference when
    given. Tracks without positions are left out of the downbeat mean.
    """
    beat_scores, down_scores = [], []
    for track in tracks:
        if activations_fn is not None:
            act = activations_fn(track)
        else:
            act = ActivationMatrix(infer(model, track.audio.samples), model.config.frame_rate)
        seq = peak_pick(act, threshold=threshold)
        beat_scores.append(f_measure(seq.beats, track.annotation.times))
        if track.annotation.has_downbeats:
            down_scores.append(f_measure(seq.downbeats, track.annotation.downbeats))
    beat = float(np.mean(beat_scores)) if beat_scores else math.nan
    down = float(np.mean(down_scores)) if down_scores else math.nan
    return beat, down


def _score(beat_f, down_f):
    vals = [v for v in (beat_f, down_f) if not math.isnan(v)]
    return float(np.mean(vals)) if vals else 0.0


def _epoch_plan(datasets: dict[str, list[Track]], cfg: TrainConfig, epoch: int):
    """Equal number of draws (with replacement) from every dataset label, shuffled."""
    rng = np.random.default_rng([cfg.seed, epoch, 0])
    items = []
    for label_idx, (label, tracks) in enumerate(datasets.items()):
        picks = rng.integers(0, len(tracks), size=cfg.excerpts_per_dataset_per_epoch)
        items.extend((label, int(i)) for i in picks)
    order = rng.permutation(len(items))
    return [items[i] + (int(k),) for k, i in enumerate(order)]


def _make_example(datasets, cfg, aug_cfg, frame_stride, frame_rate, epoch, item):
    label, track_idx, k = item
    rng = np.random.default_rng([cfg.seed, epoch, 1, k])
    excerpt = sample_excerpt(datasets[label][track_idx], rng, cfg.excerpt_length)
    x, ann = excerpt.samples, excerpt.annotation
    if cfg.augment:
        x, ann, _ = augment(x, ann, aug_cfg, rng)
    n_frames = cfg.excerpt_length // frame_stride
    target = make_targets(ann, n_frames, frame_rate=frame_rate)
    return x.astype(np.float32), target.values


def _batches(datasets, cfg, aug_cfg, frame_stride, frame_rate, epoch, prefetch=2):
    plan = _epoch_plan(datasets, cfg, epoch)
    chunks = [plan[i:i + cfg.batch_size] for i in range(0, len(plan), cfg.batch_size)]

    def collect(examples):
        xs, ys = zip(*examples)
        return np.stack(xs)[:, None, :], np.stack(ys)

    make = lambda item: _make_example(datasets, cfg, aug_cfg, frame_stride, frame_rate, epoch, item)
    if cfg.workers <= 1:
        for chunk in chunks:
            yield chunk, collect([make(it) for it in chunk])
        return
    with ThreadPoolExecutor(cfg.workers) as pool:
        pending = deque()
        for chunk in chunks:
            pending.append((chunk, [pool.submit(make, it) for it in chunk]))
            if len(pending) > prefetch:
                c, futs = pending.popleft()
                yield c, collect([f.result() for f in futs])
        while pending:
            c, futs = pending.popleft()
            yield c, collect([f.result() for f in futs])


def train_step(model: WaveBeatModel, x, y, state: TrainState, clip_norm: float) -> float:
    model.train()
    model.zero_grad()
    pred = model.forward(x)
    total, _, _ = losses.mfe(pred, y)
    if not math.isfinite(total):
        return total
    model.backward(losses.mfe_grad(pred, y).astype(pred.dtype))
    params = model.parameters(trainable_only=True)
    nn.clip_grad_norm(params, clip_norm)
    state.optimizer.lr = state.lr
    nn.adam_step(params, state.optimizer)
    return total


def train(model: WaveBeatModel, datasets: dict[str, list[Track]], cfg: TrainConfig,
          val_tracks: list[Track] | None = None, checkpoint_path=None,
          aug_cfg: AugmentationConfig | None = None, restore_best: bool = True,
          history_path=None):
    """Train ``model`` in place; returns ``(model, history)``.

    Without ``val_tracks`` every dataset is split 80/10/10 by track and the
    validation parts are pooled. The best validation model (mean of beat and
    downbeat F-measure) is written to ``checkpoint_path`` whenever it improves
    and restored at the end when ``restore_best`` is set.
    """
    if not datasets or any(len(t) == 0 for t in datasets.values()):
        raise ValueError("every dataset needs at least one track")
    if val_tracks is None:
        train_sets, val_tracks = {}, []
        for label, tracks in datasets.items():
            tr, va, _ = split_tracks(tracks, cfg.seed)
            train_sets[label] = tr or tracks
            val_tracks.extend(va)
        datasets = train_sets

    aug_cfg = aug_cfg or AugmentationConfig()
    stride = model.config.total_stride
    if cfg.excerpt_length % stride:
        raise ValueError(f"excerpt_length must be a multiple of {stride}")
    state = TrainState(lr=cfg.lr, optimizer=nn.AdamState(lr=cfg.lr))
    history: list[EpochRecord] = []

    for epoch in range(cfg.epochs):
        t0 = time.time()
        batch_losses = []
        for b, (items, (x, y)) in enumerate(_batches(datasets, cfg, aug_cfg, stride, model.config.frame_rate, epoch)):
            value = train_step(model, x, y, state, cfg.clip_norm)
            if not math.isfinite(value):
                raise NonFiniteLossError(
                    f"non-finite loss {value} at epoch {epoch}, batch {b}; "
                    f"reproduce with seed={cfg.seed}, epoch={epoch}, items={items}")
            batch_losses.append(value)

        beat_f, down_f = validate(model, val_tracks) if val_tracks else (math.nan, math.nan)
        score = _score(beat_f, down_f)
        if score > state.best_score or state.best_params is None:
            state.best_score = max(score, state.best_score)
            state.epochs_since_improvement = 0
            state.best_params = model.state_dict()
            if checkpoint_path is not None:
                save_model(checkpoint_path, model)
        else:
            state.epochs_since_improvement += 1
        record = EpochRecord(epoch, float(np.mean(batch_losses)), beat_f, down_f, state.lr)
        history.append(record)
        if state.epochs_since_improvement >= cfg.patience_epochs:
            state.lr *= cfg.lr_decay_factor
            state.epochs_since_improvement = 0
            log.info("epoch %d: no improvement for %d epochs, lr -> %g", epoch, cfg.patience_epochs, state.lr)
        log.info("epoch %d loss %.4f val beat F %.3f downbeat F %.3f lr %g (%.1fs)",
                 epoch, record.train_loss, beat_f, down_f, record.lr, time.time() - t0)
        if history_path is not None:
            write_history(history_path, history)
        state.epoch = epoch + 1

    if restore_best and state.best_params is not None:
        model.load_state_dict(state.best_params)
    model.eval()
    return model, history


def write_history(path, history: list[EpochRecord]) -> None:
    with open(os.fspath(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_beat_F", "val_downbeat_F", "lr"])
        for r in history:
            writer.writerow([r.epoch, f"{r.train_loss:.8f}", f"{r.val_beat_f:.6f}",
                             f"{r.val_downbeat_f:.6f}", f"{r.lr:.3e}"])
