import numpy as np
import pytest

from wavebeat import cli
from wavebeat.audio import Waveform, load_audio, save_audio
from wavebeat.data import load_annotations, read_manifest
from wavebeat.metrics import METRICS
from wavebeat.model import DESK_CONFIG, ModelConfig, build, save_model

SMALL = ModelConfig(n_stacks=1, blocks_per_stack=2, kernel_size=3, stride=4, dilation_base=2, channel_growth=4)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--tracks", "4", "--seed", "1", "--duration", "6"]) == 0
    return out


def test_synth_writes_tracks_and_manifest(synth_dir):
    assert len(list(synth_dir.glob("*.wav"))) == 4
    assert len(list(synth_dir.glob("*.beats"))) == 4
    groups = read_manifest(synth_dir / "manifest.tsv")
    assert sorted(groups) == ["meter3", "meter4"]
    assert sum(len(v) for v in groups.values()) == 4
    w = load_audio(synth_dir / "track000.wav")
    assert w.duration_seconds == pytest.approx(6.0)


def test_synth_same_seed_bit_identical(tmp_path, synth_dir):
    assert cli.main(["synth", "--out", str(tmp_path), "--tracks", "4", "--seed", "1", "--duration", "6"]) == 0
    for name in ["track000.wav", "track003.wav", "track002.beats"]:
        assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()


def test_synth_tempo_range_and_meter(tmp_path):
    args = ["synth", "--out", str(tmp_path), "--tracks", "3", "--seed", "2", "--tempo-range", "100:100",
            "--meter", "3", "--duration", "8"]
    assert cli.main(args) == 0
    for path in tmp_path.glob("*.beats"):
        ann = load_annotations(path)
        assert np.median(np.diff(ann.times)) == pytest.approx(0.6, abs=1e-5)
        assert ann.positions.max() == 3


def test_synth_median_interval_inside_tempo_range(tmp_path):
    assert cli.main(["synth", "--out", str(tmp_path), "--tracks", "6", "--seed", "4", "--tempo-range", "100:140",
                     "--duration", "8"]) == 0
    for path in tmp_path.glob("*.beats"):
        median = np.median(np.diff(load_annotations(path).times))
        assert 60 / 140 - 1e-9 <= median <= 60 / 100 + 1e-9


@pytest.mark.parametrize("bad", ["30:100", "100:400", "150:100", "fast"])
def test_synth_rejects_tempo_range(tmp_path, bad):
    assert cli.main(["synth", "--out", str(tmp_path), "--tempo-range", bad]) == 1


def test_usage_errors_exit_one(capsys):
    assert cli.main([]) == 1
    assert cli.main(["predict", "--model", "m"]) == 1
    assert cli.main(["bogus"]) == 1


def test_info_reports_reference_architecture(capsys):
    assert cli.main(["info"]) == 0
    text = capsys.readouterr().out
    assert "receptive field: 1039823 samples (47.16 s)" in text
    assert "parameters: 2758146" in text
    assert "output frame rate: 86.1328125 Hz" in text


def test_info_from_config_file(tmp_path, capsys):
    DESK_CONFIG.save(tmp_path / "desk.cfg")
    assert cli.main(["info", "--config", str(tmp_path / "desk.cfg")]) == 0
    assert "output frame rate: 86.1328125 Hz" in capsys.readouterr().out
    assert cli.main(["info", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_evaluate_identical_dirs(tmp_path, synth_dir, capsys):
    csv = tmp_path / "scores.csv"
    assert cli.main(["evaluate", "--pred", str(synth_dir), "--ref", str(synth_dir), "--csv", str(csv)]) == 0
    lines = csv.read_text().strip().splitlines()
    assert len(lines) - 1 == 4 * len(METRICS)
    means = {}
    for line in capsys.readouterr().out.splitlines():
        if line.startswith("MEAN"):
            means = [float(v) for v in line.split()[1:]]
    assert means == [1.0] * len(METRICS)


def test_evaluate_default_csv_and_skip(tmp_path, synth_dir):
    pred = tmp_path / "pred"
    pred.mkdir()
    for path in synth_dir.glob("*.beats"):
        (pred / path.name).write_bytes(path.read_bytes())
    assert cli.main(["evaluate", "--pred", str(pred), "--ref", str(synth_dir), "--skip-first-5s"]) == 0
    assert (pred / "evaluation.csv").exists()


def test_evaluate_data_errors(tmp_path, synth_dir):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["evaluate", "--pred", str(empty), "--ref", str(synth_dir)]) == 2
    partial = tmp_path / "partial"
    partial.mkdir()
    (partial / "other.beats").write_text("0.5 1\n")
    assert cli.main(["evaluate", "--pred", str(partial), "--ref", str(synth_dir)]) == 2
    assert cli.main(["evaluate", "--pred", str(tmp_path / "nope"), "--ref", str(synth_dir)]) == 2


def _quiet_model(path):
    """Small model whose head bias keeps every activation far below threshold."""
    net = build(SMALL)
    net.params["head.bias"].value[:] = -20.0
    save_model(path, net)


def test_predict_silence_gives_empty_file_and_dump(tmp_path):
    _quiet_model(tmp_path / "m.bin")
    n_samples = 22050
    save_audio(tmp_path / "silence.wav", Waveform(np.zeros(n_samples), 22050.0))
    out = tmp_path / "silence.beats"
    dump = tmp_path / "act.bin"
    args = ["predict", "--model", str(tmp_path / "m.bin"), "--input", str(tmp_path / "silence.wav"),
            "--out", str(out), "--dump-activations", str(dump)]
    assert cli.main(args) == 0
    assert out.read_text().strip() == ""
    n = int(np.ceil(n_samples / SMALL.total_stride))
    assert dump.stat().st_size == 12 + 2 * n * 4
    act = cli.read_activations(dump)
    assert act.values.shape == (2, n) and act.frame_rate == SMALL.frame_rate
    assert cli.main(args[:-2] + ["--decoder", "dbn"]) == 0


def test_predict_data_errors(tmp_path):
    _quiet_model(tmp_path / "m.bin")
    (tmp_path / "junk.wav").write_bytes(b"not audio")
    base = ["predict", "--model", str(tmp_path / "m.bin"), "--out", str(tmp_path / "o.beats")]
    assert cli.main(base + ["--input", str(tmp_path / "junk.wav")]) == 2
    assert cli.main(base + ["--input", str(tmp_path / "missing.wav")]) == 2
    # parameters from one architecture with the sidecar of another
    DESK_CONFIG.save(tmp_path / "m.bin.cfg")
    save_audio(tmp_path / "s.wav", Waveform(np.zeros(1000), 22050.0))
    assert cli.main(base + ["--input", str(tmp_path / "s.wav")]) == 2


def test_train_then_predict(tmp_path, synth_dir):
    SMALL.save(tmp_path / "small.cfg")
    ckpt = tmp_path / "model.bin"
    args = ["train", "--manifest", str(synth_dir / "manifest.tsv"), "--val-manifest", str(synth_dir / "manifest.tsv"),
            "--out", str(ckpt), "--model-config", str(tmp_path / "small.cfg"), "--epochs", "1", "--seed", "0",
            "--history", str(tmp_path / "h.csv")]
    assert cli.main(args) == 0
    assert ckpt.exists() and (tmp_path / "model.bin.cfg").exists()
    assert len((tmp_path / "h.csv").read_text().strip().splitlines()) == 2
    out = tmp_path / "p.beats"
    assert cli.main(["predict", "--model", str(ckpt), "--input", str(synth_dir / "track000.wav"),
                     "--out", str(out), "--decoder", "dbn"]) == 0
    load_annotations(out)


def test_train_missing_manifest_exits_two(tmp_path):
    assert cli.main(["train", "--manifest", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "m.bin")]) == 2


def test_activation_dump_round_trip(tmp_path):
    from wavebeat.decode import ActivationMatrix
    act = ActivationMatrix(np.random.default_rng(0).random((2, 17)).astype(np.float32), 86.1328125)
    cli.write_activations(tmp_path / "a.bin", act)
    back = cli.read_activations(tmp_path / "a.bin")
    np.testing.assert_array_equal(back.values, act.values)
    assert back.frame_rate == act.frame_rate
