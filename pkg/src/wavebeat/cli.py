"""Command-line entry point: ``wavebeat {synth,train,predict,evaluate,info}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import struct
import sys

import numpy as np

from . import audio, data, decode, metrics, model, nn, trainer

log = logging.getLogger("wavebeat")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
ANNOTATION_SUFFIX = ".beats"
ACTIVATION_HEADER = struct.Struct("<dI")  # frame rate (Hz), frame count


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(value):
    if value is not None:
        return value
    seed = int(np.random.SeedSequence().entropy % (2**31))
    log.info("no --seed given, using %d", seed)
    return seed


def _tempo_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI") from None
    if not 40 <= lo <= hi <= 300:
        raise argparse.ArgumentTypeError("tempo range must satisfy 40 <= LO <= HI <= 300")
    return lo, hi


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args):
    seed = _seed(args.seed)
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {args.out}: {exc}") from exc
    if not os.access(args.out, os.W_OK):
        raise DataError(f"{args.out} is not writable")
    meters = (3, 4) if args.meter == "both" else (int(args.meter),)
    rng = np.random.default_rng(seed)
    groups: dict[str, list] = {}
    for i in range(args.tracks):
        tempo = float(rng.uniform(*args.tempo_range))
        meter = meters[i % len(meters)]
        timbre = int(rng.integers(0, 2**31 - 1))
        wav, ann = audio.synth_click_track(tempo, meter, args.duration, timbre)
        stem = os.path.join(args.out, f"track{i:03d}")
        audio.save_audio(stem + ".wav", wav)
        data.save_annotations(stem + ANNOTATION_SUFFIX, ann)
        groups.setdefault(f"meter{meter}", []).append((stem + ".wav", stem + ANNOTATION_SUFFIX))
    data.write_manifest(os.path.join(args.out, "manifest.tsv"), dict(sorted(groups.items())))
    print(f"wrote {args.tracks} tracks to {args.out}")
    return EXIT_OK


def cmd_train(args):
    train_cfg = trainer.DESK_TRAIN if args.preset == "desk" else trainer.PAPER_TRAIN
    model_cfg = model.DESK_CONFIG if args.preset == "desk" else model.PAPER_CONFIG
    if args.train_config:
        train_cfg = trainer.TrainConfig.load(args.train_config)
    if args.model_config:
        model_cfg = model.ModelConfig.load(args.model_config)
    overrides = {"seed": _seed(args.seed), "workers": args.workers}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    train_cfg = dataclasses.replace(train_cfg, **overrides)

    datasets = data.load_dataset(args.manifest)
    val = None
    if args.val_manifest:
        val = [t for tracks in data.load_dataset(args.val_manifest).values() for t in tracks]
    net = model.build(model_cfg, init_seed=train_cfg.seed)
    net, history = trainer.train(net, datasets, train_cfg, val_tracks=val, checkpoint_path=args.out,
                                 history_path=args.history)
    model.save_model(args.out, net)
    if history:
        last = history[-1]
        print(f"trained {len(history)} epochs; last val beat F {last.val_beat_f:.3f}, "
              f"downbeat F {last.val_downbeat_f:.3f}; model written to {args.out}")
    else:
        print(f"no epochs run; initial model written to {args.out}")
    return EXIT_OK


def write_activations(path, act: decode.ActivationMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(ACTIVATION_HEADER.pack(act.frame_rate, act.n_frames))
        fh.write(act.values.astype("<f4").tobytes())


def read_activations(path) -> decode.ActivationMatrix:
    with open(path, "rb") as fh:
        blob = fh.read()
    rate, n = ACTIVATION_HEADER.unpack_from(blob)
    values = np.frombuffer(blob, dtype="<f4", offset=ACTIVATION_HEADER.size).reshape(2, n)
    return decode.ActivationMatrix(values, rate)


def cmd_predict(args):
    try:
        net = model.load_model(args.model)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from exc
    wav = audio.load_audio(args.input, target_rate=net.config.sample_rate)
    act = decode.ActivationMatrix(model.infer(net, wav.samples), net.config.frame_rate)
    seq = decode.peak_pick(act) if args.decoder == "peak" else decode.dbn_decode(act)
    data.save_annotations(args.out, seq.to_annotation())
    if args.dump_activations:
        write_activations(args.dump_activations, act)
    print(f"{len(seq.beats)} beats, {len(seq.downbeats)} downbeats -> {args.out}")
    return EXIT_OK


def _annotation_files(directory):
    if not os.path.isdir(directory):
        raise DataError(f"{directory} is not a directory")
    return {name[:-len(ANNOTATION_SUFFIX)]: os.path.join(directory, name)
            for name in sorted(os.listdir(directory)) if name.endswith(ANNOTATION_SUFFIX)}


def cmd_evaluate(args):
    preds = _annotation_files(args.pred)
    refs = _annotation_files(args.ref)
    if not preds:
        raise DataError(f"no {ANNOTATION_SUFFIX} files in {args.pred}")
    if set(preds) != set(refs):
        raise DataError(f"file stems differ: only in pred {sorted(set(preds) - set(refs))}, "
                        f"only in ref {sorted(set(refs) - set(preds))}")
    predictions, references = {}, {}
    for stem in preds:
        ann = data.load_annotations(preds[stem])
        predictions[stem] = decode.BeatSequence(ann.times, ann.downbeats)
        references[stem] = data.load_annotations(refs[stem])
    report = metrics.evaluate_dataset(predictions, references, skip_first=5.0 if args.skip_first_5s else 0.0)
    print(report.to_table())
    csv_path = args.csv or os.path.join(args.pred, "evaluation.csv")
    with open(csv_path, "w") as fh:
        fh.write(report.to_csv())
    print(f"csv written to {csv_path}")
    return EXIT_OK


def cmd_info(args):
    if args.config:
        cfg = model.ModelConfig.load(args.config)
    else:
        cfg = model.DESK_CONFIG if args.preset == "desk" else model.PAPER_CONFIG
    rows = model.layer_table(cfg)
    print(f"{'layer':>5} {'in':>5} {'out':>5} {'kernel':>6} {'dilation':>8} {'stride':>6} {'rate (Hz)':>12}")
    for r in rows:
        print(f"{r['layer']:>5} {r['in_channels']:>5} {r['out_channels']:>5} {r['kernel']:>6} "
              f"{r['dilation']:>8} {r['stride']:>6} {r['output_rate']:>12.4f}")
    rf, seconds = model.receptive_field(cfg)
    print(f"receptive field: {rf} samples ({seconds:.2f} s)")
    print(f"parameters: {model.param_count(model.build(cfg))}")
    print(f"output frame rate: {cfg.frame_rate} Hz")
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wavebeat", description="Waveform beat and downbeat tracking.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic click-track dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--tracks", type=int, default=16)
    s.add_argument("--seed", type=int)
    s.add_argument("--tempo-range", type=_tempo_range, default=(80.0, 160.0))
    s.add_argument("--meter", choices=["3", "4", "both"], default="both")
    s.add_argument("--duration", type=float, default=12.0)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model from a dataset manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--val-manifest")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--preset", choices=["paper", "desk"], default="desk")
    t.add_argument("--train-config", help="key = value TrainConfig file")
    t.add_argument("--model-config", help="key = value ModelConfig file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--history", help="per-epoch CSV")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="decode beats from a WAV file")
    r.add_argument("--model", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--decoder", choices=["peak", "dbn"], default="peak")
    r.add_argument("--out", required=True)
    r.add_argument("--dump-activations")
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="score predicted against reference beat files")
    e.add_argument("--pred", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--skip-first-5s", action="store_true")
    e.add_argument("--csv")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("info", help="architecture summary")
    i.add_argument("--config")
    i.add_argument("--preset", choices=["paper", "desk"], default="paper")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (trainer.NonFiniteLossError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, audio.AudioError, data.AnnotationError, nn.CheckpointError,
            KeyError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
