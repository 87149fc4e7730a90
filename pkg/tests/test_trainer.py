import math
from collections import Counter

import numpy as np
import pytest

from wavebeat import trainer
from wavebeat.desk import by_meter, click_suite, oracle_activation
from wavebeat.model import ModelConfig, build, load_model
from wavebeat.trainer import (DESK_TRAIN, NonFiniteLossError, TrainConfig, _epoch_plan, split_tracks, train,
                              validate, write_history)

SMALL = ModelConfig(n_stacks=1, blocks_per_stack=2, kernel_size=3, stride=4, dilation_base=2, channel_growth=4)
QUICK = TrainConfig(batch_size=2, excerpt_length=4096, epochs=2, excerpts_per_dataset_per_epoch=2,
                    patience_epochs=3, augment=False)


@pytest.fixture(scope="module")
def tracks():
    return click_suite(6, 0, duration_s=3.0)


def _cfg(**kw):
    import dataclasses
    return dataclasses.replace(QUICK, **kw)


def test_config_validation_and_round_trip(tmp_path):
    for bad in [dict(batch_size=0), dict(epochs=-1), dict(lr=0.0), dict(lr_decay_factor=1.0),
                dict(clip_norm=-1.0), dict(workers=0)]:
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    DESK_TRAIN.save(tmp_path / "t.cfg")
    assert TrainConfig.load(tmp_path / "t.cfg") == DESK_TRAIN


def test_split_is_seeded_and_disjoint():
    items = list(range(50))
    a = split_tracks(items, 3)
    assert [len(p) for p in a] == [40, 5, 5]
    assert sorted(sum(a, [])) == items
    assert a == split_tracks(items, 3)
    assert a != split_tracks(items, 4)


def test_zero_epochs_leaves_model_untouched(tracks):
    model = build(SMALL, 1)
    before = model.state_dict()
    model, history = train(model, by_meter(tracks), _cfg(epochs=0), val_tracks=tracks[:1])
    assert history == []
    for name, value in model.state_dict().items():
        assert value.tobytes() == before[name].tobytes()


def test_balanced_sampling_counts():
    datasets = {"big": list(range(40)), "small": list(range(2)), "mid": list(range(7))}
    cfg = _cfg(excerpts_per_dataset_per_epoch=13)
    for epoch in range(3):
        plan = _epoch_plan(datasets, cfg, epoch)
        counts = Counter(label for label, _, _ in plan)
        assert counts == {"big": 13, "small": 13, "mid": 13}
        assert all(0 <= i < len(datasets[label]) for label, i, _ in plan)
    assert _epoch_plan(datasets, cfg, 0) != _epoch_plan(datasets, cfg, 1)


def test_identical_seeds_identical_curves(tracks):
    runs = []
    for _ in range(2):
        _, history = train(build(SMALL, 2), by_meter(tracks), _cfg(seed=5), val_tracks=tracks[:2])
        runs.append([r.train_loss for r in history])
    np.testing.assert_allclose(runs[0], runs[1], atol=1e-5)
    _, other = train(build(SMALL, 2), by_meter(tracks), _cfg(seed=6), val_tracks=tracks[:2])
    assert [r.train_loss for r in other] != runs[0]


def test_threaded_loading_matches_serial(tracks):
    serial = train(build(SMALL, 2), by_meter(tracks), _cfg(), val_tracks=tracks[:1])[1]
    threaded = train(build(SMALL, 2), by_meter(tracks), _cfg(workers=3), val_tracks=tracks[:1])[1]
    np.testing.assert_allclose([r.train_loss for r in serial], [r.train_loss for r in threaded], atol=1e-6)


def _scripted_validation(monkeypatch, scores):
    it = iter(scores)
    monkeypatch.setattr(trainer, "validate", lambda model, tracks: (next(it), math.nan))


def test_lr_decays_exactly_at_patience(monkeypatch, tracks):
    scores = [0.5, 0.4, 0.4, 0.4, 0.4, 0.4, 0.6, 0.5, 0.5, 0.5]
    _scripted_validation(monkeypatch, scores)
    cfg = _cfg(epochs=len(scores), patience_epochs=3, lr=1e-3, lr_decay_factor=0.1)
    _, history = train(build(SMALL), by_meter(tracks), cfg, val_tracks=tracks[:1])
    lrs = [r.lr for r in history]
    # plateau from epoch 1 triggers after epoch 3; the counter restarts so no
    # second decay inside the next window; improvement at epoch 6 resets it again
    expected = [1e-3] * 4 + [1e-4] * 6
    np.testing.assert_allclose(lrs, expected)
    assert len(history) == len(scores)


def test_lr_never_decays_twice_within_a_window(monkeypatch, tracks):
    scores = [0.5] + [0.1] * 11
    _scripted_validation(monkeypatch, scores)
    cfg = _cfg(epochs=len(scores), patience_epochs=4)
    _, history = train(build(SMALL), by_meter(tracks), cfg, val_tracks=tracks[:1])
    lrs = np.array([r.lr for r in history])
    changes = np.flatnonzero(np.diff(lrs)) + 1
    np.testing.assert_array_equal(changes, [5, 9])
    assert np.all(np.diff(changes) >= cfg.patience_epochs)


def test_checkpoint_round_trip_reproduces_validation(tmp_path, tracks):
    ckpt = tmp_path / "best.bin"
    model, history = train(build(SMALL, 3), by_meter(tracks), _cfg(epochs=2), val_tracks=tracks[:2],
                           checkpoint_path=ckpt)
    restored = load_model(ckpt)
    a = validate(model, tracks[:2])
    b = validate(restored, tracks[:2])
    np.testing.assert_allclose(a, b, atol=1e-6)
    best = max(np.nanmean([r.val_beat_f, r.val_downbeat_f]) for r in history)
    assert np.nanmean(b) == pytest.approx(best, abs=1e-6)


def test_oracle_activations_score_perfectly(tracks):
    fn = lambda t: oracle_activation(t.annotation, int(t.audio.duration_seconds * 86.1328125) + 1)
    assert validate(None, tracks, activations_fn=fn) == (1.0, 1.0)


def test_untrained_scores_are_valid(tracks):
    beat, down = validate(build(SMALL, 4).eval(), tracks[:2])
    assert 0.0 <= beat <= 1.0 and 0.0 <= down <= 1.0


def test_validation_uses_peak_picking_threshold(tracks):
    fn = lambda t: oracle_activation(t.annotation, int(t.audio.duration_seconds * 86.1328125) + 1, peak=0.4)
    assert validate(None, tracks, activations_fn=fn) == (0.0, 0.0)
    assert validate(None, tracks, activations_fn=fn, threshold=0.3) == (1.0, 1.0)


def test_non_finite_loss_raises_with_context(tracks):
    model = build(SMALL)
    model.params["head.weight"].value[:] = np.nan
    with pytest.raises(NonFiniteLossError, match="seed=0"):
        train(model, by_meter(tracks), _cfg(), val_tracks=tracks[:1])


def test_excerpt_length_must_match_stride(tracks):
    with pytest.raises(ValueError):
        train(build(SMALL), by_meter(tracks), _cfg(excerpt_length=4097), val_tracks=tracks[:1])


def test_internal_split_when_no_validation_given(tracks):
    _, history = train(build(SMALL), by_meter(click_suite(20, 1, duration_s=2.0)), _cfg(epochs=1))
    assert len(history) == 1 and 0.0 <= history[0].val_beat_f <= 1.0


def test_history_csv(tmp_path, tracks):
    _, history = train(build(SMALL), by_meter(tracks), _cfg(), val_tracks=tracks[:1],
                       history_path=tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_beat_F,val_downbeat_F,lr"
    assert len(lines) == 1 + len(history)
    write_history(tmp_path / "again.csv", history)
    assert (tmp_path / "again.csv").read_text() == (tmp_path / "h.csv").read_text()
