"""Command-line entry point.

Subcommands cover the full pipeline: text preprocessing, merge learning
and application, synthetic task generation, training, translation,
scoring, significance testing, report aggregation, and the full
experiment matrix. Bad configuration exits 2; runtime failures exit 1;
both print a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .data.bpe import apply_bpe, learn_bpe, load_bpe, save_bpe
from .data.synthetic import SynthSpec, generate_synthetic, write_dataset
from .data.text import preprocess_text, read_lines, write_lines
from .errors import ConfigError, MmtError
from .matrix import DEFAULT_SEEDS, DEFAULT_SYSTEMS, run_matrix
from .metrics import (
    approx_randomization,
    bleu_corpus,
    format_report,
    grounding_accuracy,
    report_runs,
    report_tsv,
)
from .pipeline import run_training, translate_lines
from .tensor import Rng


def _onoff(value: str) -> bool:
    low = value.lower()
    if low in ("on", "true", "yes", "1"):
        return True
    if low in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmt-micro",
        description="miniature multimodal translation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="normalize, lowercase, and hyphen-split text")
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")

    p = sub.add_parser("bpe-learn", help="learn a joint merge table")
    p.add_argument("--input", nargs="+", required=True, help="preprocessed corpus files")
    p.add_argument("--merges", type=int, default=10000)
    p.add_argument("--output", required=True, help="merge table file")

    p = sub.add_parser("bpe-apply", help="segment text with a merge table")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", help="default: stdout")

    p = sub.add_parser("gen-synth", help="generate the synthetic grounded task")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=SynthSpec.width)
    p.add_argument("--channels", type=int, default=SynthSpec.channels)
    p.add_argument("--colors", type=int, default=SynthSpec.colors)
    p.add_argument("--distractors", type=int, default=SynthSpec.distractors)
    p.add_argument("--referent-cells", type=int, default=SynthSpec.referent_cells)
    p.add_argument("--noise", type=float, default=SynthSpec.noise)
    p.add_argument("--feature-scale", type=float, default=SynthSpec.feature_scale)
    p.add_argument("--train-size", type=int, default=SynthSpec.train_size)
    p.add_argument("--dev-size", type=int, default=SynthSpec.dev_size)
    p.add_argument("--test-size", type=int, default=SynthSpec.test_size)

    p = sub.add_parser("train", help="train one run to early stopping")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", choices=("baseline", "ma", "fa"))
    p.add_argument("--normalize-features", type=_onoff, metavar="{on|off}")
    p.add_argument("--feature-width", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float, help="sets all three dropout sites")
    p.add_argument("--no-resume", action="store_true")

    p = sub.add_parser("translate", help="decode a source file")
    p.add_argument("--run", help="single run directory")
    p.add_argument("--ensemble", nargs="+", help="run directories to ensemble")
    p.add_argument("--input", required=True)
    p.add_argument("--features", help="feature file aligned with the input")
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--length-norm", type=float, default=0.6)
    p.add_argument("--which", choices=("best", "last"), default="best")
    p.add_argument("--output", help="default: stdout")

    p = sub.add_parser("score", help="corpus BLEU (and grounded accuracy)")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--colors", help="keyword list for grounded accuracy")
    p.add_argument("--system", help="system label for the metrics file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write a .metrics JSON file")

    p = sub.add_parser("sigtest", help="approximate-randomization significance")
    p.add_argument("--hyp-a", required=True)
    p.add_argument("--hyp-b", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="aggregate .metrics files into a table")
    p.add_argument("metrics", nargs="+", help="metrics JSON files")
    p.add_argument("--out-dir", help="also write report.tsv and report.png here")

    p = sub.add_parser("matrix", help="train systems x seeds and report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="base config file")
    p.add_argument("--systems", default=",".join(DEFAULT_SYSTEMS))
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    p.add_argument("--beam", type=int, default=6)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--threads", type=int)

    return parser


def _emit(lines, output: str | None) -> None:
    if output:
        write_lines(output, lines)
    else:
        for line in lines:
            print(line)


def _cmd_prep(args) -> int:
    _emit([preprocess_text(l) for l in read_lines(args.input)], args.output)
    return 0


def _cmd_bpe_learn(args) -> int:
    corpora = [[preprocess_text(l).split() for l in read_lines(path)] for path in args.input]
    model = learn_bpe(corpora, args.merges)
    save_bpe(model, args.output)
    print(f"learned {model.merge_count} merges -> {args.output}")
    return 0


def _cmd_bpe_apply(args) -> int:
    model = load_bpe(args.model)
    lines = [" ".join(apply_bpe(model, l.split())) for l in read_lines(args.input)]
    _emit(lines, args.output)
    return 0


def _cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        width=args.width, channels=args.channels, colors=args.colors,
        distractors=args.distractors, referent_cells=args.referent_cells,
        noise=args.noise, feature_scale=args.feature_scale,
        train_size=args.train_size, dev_size=args.dev_size,
        test_size=args.test_size, seed=args.seed,
    )
    write_dataset(generate_synthetic(spec), args.out)
    print(f"wrote synthetic task (seed {spec.seed}) -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for flag, key in (
        ("seed", "seed"), ("arch", "arch"), ("normalize_features", "normalize_features"),
        ("feature_width", "feat_width"), ("lr", "lr"), ("batch_size", "batch_size"),
        ("max_epochs", "max_epochs"), ("patience", "patience"),
    ):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = value
    if args.dropout is not None:
        overrides.update(dropout_emb=args.dropout, dropout_enc=args.dropout, dropout_out=args.dropout)
    cfg = cfg.replace(**overrides).validate()
    outcome = run_training(args.data, args.out, cfg, resume=not args.no_resume)
    print(
        f"run {outcome.run_dir}: best dev_bleu {outcome.best_metric:.2f} "
        f"at epoch {outcome.best_epoch} ({outcome.epochs_run} epochs)"
    )
    return 0


def _cmd_translate(args) -> int:
    if bool(args.run) == bool(args.ensemble):
        raise ConfigError("pass exactly one of --run or --ensemble")
    run_dirs = [args.run] if args.run else list(args.ensemble)
    lines = read_lines(args.input)
    out = translate_lines(
        run_dirs, lines, features_path=args.features, beam=args.beam,
        max_len=args.max_len, length_norm=args.length_norm, which=args.which,
    )
    _emit(out, args.output)
    return 0


def _cmd_score(args) -> int:
    hyps = read_lines(args.hyp)
    refs = [preprocess_text(l) for l in read_lines(args.ref)]
    bleu = bleu_corpus(hyps, refs)
    result = {
        "system": args.system or Path(args.hyp).parent.name,
        "seed": args.seed,
        "metric": "bleu",
        "value": bleu,
    }
    print(f"BLEU = {bleu:.2f}")
    if args.colors:
        acc = grounding_accuracy(hyps, refs, read_lines(args.colors))
        result["grounding_accuracy"] = acc
        print(f"grounded accuracy = {acc:.3f}")
    if args.out:
        Path(args.out).write_text(json.dumps(result) + "\n")
    return 0


def _cmd_sigtest(args) -> int:
    refs = [preprocess_text(l) for l in read_lines(args.ref)]
    p = approx_randomization(
        read_lines(args.hyp_a), read_lines(args.hyp_b), refs,
        trials=args.trials, rng=Rng(args.seed),
    )
    print(f"p = {p:.6f}")
    return 0


def _cmd_report(args) -> int:
    scores: dict[str, list[float]] = {}
    for path in args.metrics:
        row = json.loads(Path(path).read_text())
        name = row.get("system") or Path(path).parent.name
        scores.setdefault(name, []).append(float(row["value"]))
    report = report_runs(scores)
    print(format_report(report))
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(report_tsv(report))
        from .figures import save_score_bars

        save_score_bars(report, out / "report.png")
        print(f"wrote {out / 'report.tsv'} and {out / 'report.png'}")
    return 0


def _cmd_matrix(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig()
    systems = tuple(s for s in args.systems.split(",") if s)
    seeds = tuple(int(s) for s in args.seeds.split(",") if s)
    result = run_matrix(
        args.data, args.out, base_cfg=cfg, systems=systems, seeds=seeds,
        beam=args.beam, trials=args.trials, threads=args.threads,
    )
    print(format_report(result.report))
    for system, accs in result.accuracies.items():
        if accs:
            mean = sum(accs) / len(accs)
            print(f"grounded accuracy {system}: {mean:.3f}")
    print(f"report written to {result.out_dir}")
    return 0


_HANDLERS = {
    "prep": _cmd_prep,
    "bpe-learn": _cmd_bpe_learn,
    "bpe-apply": _cmd_bpe_apply,
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "translate": _cmd_translate,
    "score": _cmd_score,
    "sigtest": _cmd_sigtest,
    "report": _cmd_report,
    "matrix": _cmd_matrix,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MmtError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
