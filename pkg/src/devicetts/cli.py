"""Command-line entry point: ``devicetts {train,synth,count,bench,gradcheck,make-toy}``.

Every subcommand prints one ``key=value`` summary line on stdout; tables
and progress go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import complexity, io
from .config import ModelConfig, load_config
from .model import DeviceTTS, FeatureMatrix, PhonemeSequence
from .tensor import OpCounter

log = logging.getLogger("devicetts")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("DEVICETTS_SEED", "0"))


def _summary(**kv) -> None:
    print(" ".join(f"{k}={v}" for k, v in kv.items()))


def _utterances(args, model: DeviceTTS) -> list[PhonemeSequence]:
    seqs = io.read_phonemes(args.input, model.config.symbol_table())
    if not seqs:
        raise ValueError(f"{args.input}: no utterances")
    if not args.use_gold_durations:
        seqs = [PhonemeSequence(s.ids) for s in seqs]
    elif any(s.gold_durations is None for s in seqs):
        raise ValueError("--use-gold-durations given but some lines have no durations")
    return seqs


def _out_paths(out: str, n: int) -> list[Path]:
    p = Path(out)
    if n == 1:
        return [p]
    return [p.with_name(f"{p.stem}_{i}{p.suffix}") for i in range(n)]


# ---------------------------------------------------------------------------
# data directories: utterances.txt + feats/NNNNN.dttf


def write_corpus(examples, directory: str | Path, config: ModelConfig) -> None:
    d = Path(directory)
    (d / "feats").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ex in enumerate(examples):
        lines.append(io.format_phonemes(ex.phonemes, config.symbols))
        io.write_features(FeatureMatrix.of(ex.target), d / "feats" / f"{i:05d}.dttf")
    (d / "utterances.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_corpus(directory: str | Path, config: ModelConfig):
    from .training import TrainingExample

    d = Path(directory)
    seqs = io.read_phonemes(d / "utterances.txt", config.symbol_table())
    return [
        TrainingExample(s, io.read_features(d / "feats" / f"{i:05d}.dttf", config.feature_dim).frames)
        for i, s in enumerate(seqs)
    ]


def _dataset(source: str, config: ModelConfig, seed: int):
    from .training import make_toy_corpus

    if source == "toy" or source.startswith("toy:"):
        n = int(source.split(":", 1)[1]) if ":" in source else 50
        return make_toy_corpus(seed, n, config.vocab_size, config.feature_dim)
    return read_corpus(source, config)


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    from .training import TrainConfig, train, write_curve

    seed = _seed(args)
    config = load_config(args.config)
    data = _dataset(args.data, config, seed)
    model = DeviceTTS(config, seed=seed)
    tc = TrainConfig(
        batch_size=args.batch_size, warmup_steps=args.warmup, peak_lr=args.lr,
        max_steps=args.steps, seed=seed, log_every=args.log_every,
    )
    curve = train(data, model, tc)
    io.save_model(model, args.out)
    curve_path = Path(args.curve or f"{args.out}.loss.csv")
    write_curve(curve, curve_path)
    if args.plot:
        from .plotting import plot_loss_curve

        plot_loss_curve(curve, curve_path.with_suffix(".png"))
    head = np.mean([r.total for r in curve[:10]])
    tail = np.mean([r.total for r in curve[-10:]])
    _summary(model=args.out, steps=len(curve), utterances=len(data),
             loss_first10=f"{head:.6g}", loss_last10=f"{tail:.6g}", curve=curve_path)
    return 0


def cmd_synth(args) -> int:
    model = io.load_model(args.model)
    seqs = _utterances(args, model)
    paths = _out_paths(args.out, len(seqs))
    frames = 0
    for seq, path in zip(seqs, paths):
        fm = model.synthesize(seq)
        io.write_features(fm, path)
        frames += fm.n_frames
        if args.plot:
            from .plotting import plot_features

            plot_features(fm.frames, path.with_suffix(".png"))
    _summary(utterances=len(seqs), frames=frames, out=",".join(str(p) for p in paths))
    return 0


def cmd_bench(args) -> int:
    model = io.load_model(args.model)
    seqs = _utterances(args, model)
    paths = _out_paths(args.out, len(seqs)) if args.out else [None] * len(seqs)
    frames = chunks = 0
    measured = []
    for seq, path in zip(seqs, paths):
        stream = model.synthesize_streaming(seq, args.chunk)
        with OpCounter() as oc:
            first = next(stream)
        measured.append(oc.total_flops)
        parts = [first.frames, *(c.frames for c in stream)]
        chunks += len(parts)
        out = FeatureMatrix.of(np.concatenate(parts, axis=0))
        frames += out.n_frames
        if path is not None:
            io.write_features(out, path)
    cfg = model.config
    analytic = complexity.count_flops_first_frame(cfg)
    kv = dict(utterances=len(seqs), chunks=chunks, frames=frames, chunk=args.chunk,
              first_chunk_flops=measured[0], analytic_first_frame_flops=analytic,
              gflops_first_frame=round(analytic / 1e9, 6))
    if cfg.decoder_variant == "AR":
        kv["first_frame_ar_steps"] = complexity.first_frame_ar_steps(cfg)
    if args.out:
        kv["out"] = ",".join(str(p) for p in paths)
    _summary(**kv)
    return 0


def cmd_count(args) -> int:
    config = load_config(args.config)
    if args.profile:
        config = config.with_profile(args.profile)
    profile = complexity.Profile.for_config(config)
    table, rec = complexity.report(config, profile)
    print(table, file=sys.stderr)
    line = complexity.format_record(rec)
    if args.report_dir:
        from .plotting import plot_complexity, plot_first_frame

        d = Path(args.report_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text("\n".join(f"{k}={v}" for k, v in rec.items()) + "\n")
        (d / "table.txt").write_text(table + "\n")
        reps = {
            v: complexity.count_flops_per_second(config.replace(decoder_variant=v), profile)
            for v in ("AR", "nonAR")
        }
        plot_complexity(reps, d / "complexity.png")
        plot_first_frame(reps, d / "first_frame.png")
    print(line)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    config = load_config(args.config)
    reports = run_suite(config, seed=_seed(args))
    ok = True
    for label, rep in reports.items():
        status = "pass" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{label:<18} {status} worst_rel_err={rep.worst:.3e} tol={rep.tol:g}", file=sys.stderr)
        for f in rep.failures:
            print(f"  {f}", file=sys.stderr)
    worst = max(r.worst for r in reports.values())
    _summary(gradcheck="pass" if ok else "fail", checks=len(reports), worst=f"{worst:.3e}")
    return 0 if ok else 1


def cmd_make_toy(args) -> int:
    from .training import make_toy_corpus

    config = load_config(args.config)
    data = make_toy_corpus(_seed(args), args.n, config.vocab_size, config.feature_dim)
    write_corpus(data, args.out, config)
    _summary(out=args.out, utterances=len(data), frames=sum(len(e.target) for e in data))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="devicetts", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="teacher-forced training")
    s.add_argument("--config", help="preset name (default, tiny, lpcnet) or JSON file")
    s.add_argument("--data", required=True, help="corpus directory, or toy[:N]")
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--steps", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--warmup", type=int, default=4000)
    s.add_argument("--lr", type=float, default=0.002)
    s.add_argument("--log-every", type=int, default=100)
    s.add_argument("--curve", help="loss curve CSV (default: <out>.loss.csv)")
    s.add_argument("--plot", action="store_true", help="also render the loss curve")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="batch synthesis to feature files")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--use-gold-durations", action="store_true")
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("count", help="analytic parameter and FLOP report")
    s.add_argument("--config")
    s.add_argument("--profile", choices=["world", "lpcnet"])
    s.add_argument("--report-dir", help="write report.txt, table.txt and figures here")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("bench", help="streaming synthesis")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--chunk", type=int, default=1)
    s.add_argument("--out", help="write the concatenated stream here")
    s.add_argument("--use-gold-durations", action="store_true")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--config", default="tiny")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("make-toy", help="write a synthetic corpus directory")
    s.add_argument("--config", default="tiny")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr, format="%(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, KeyError, IndexError, OSError, FloatingPointError) as e:
        print(f"devicetts {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
