"""Command-line interface.

Subcommands cover single stages (gen-corpus, pretrain, ladder, dt,
contamination, correlate, commute, report) plus manifest validation and
the whole pipeline (run). Exit status: 0 on success, 1 on validation
failure, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _parse_sizes(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="langxfer",
        description="Measure cross-lingual data transfer in byte-level language models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest without running it")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("gen-corpus", help="generate a synthetic-language corpus")
    p.add_argument("--spec", required=True, help="language spec JSON file")
    p.add_argument("--bytes", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pretrain", help="pretrain one model on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--model", default="desk", help="preset name or config JSON file")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--batch-sequences", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--peak-lr", type=float, default=2e-4)
    p.add_argument("--final-lr", type=float, default=2e-5)
    p.add_argument("--warmup-steps", type=int, default=0)
    p.add_argument("--eval-interval", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ladder", help="run a finetuning ladder, producing a curve")
    p.add_argument("--target-corpus", required=True)
    p.add_argument("--ladder", required=True, help="comma-separated byte sizes")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="pretrained checkpoint to start from")
    group.add_argument("--scratch", action="store_true", help="random initialization")
    p.add_argument("--source-tag", default=None)
    p.add_argument("--model", default="desk")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-sequences", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=None)
    p.add_argument("--peak-lr", type=float, default=2e-5)
    p.add_argument("--eval-interval", type=int, default=50)
    p.add_argument("--eval-bytes", type=int, default=65_536)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("dt", help="data-transfer estimates from curve CSVs")
    p.add_argument("--scratch-curve", required=True)
    p.add_argument("--finetuned-curve", nargs="+", required=True)
    p.add_argument("--out", default=None, help="directory for estimate JSONs")
    p.add_argument("--unit", choices=("bytes", "MB", "MiB"), default="MB")

    p = sub.add_parser("contamination", help="line-level contamination ratio")
    p.add_argument("--corpus", action="append", required=True, metavar="TAG=PATH",
                   help="labeled training corpora (repeatable)")
    p.add_argument("--host", required=True, help="corpus to scan (its tag)")
    p.add_argument("--probe", required=True, help="language to look for")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", default=None)

    p = sub.add_parser("correlate", help="Spearman correlation of D_T with a covariate")
    p.add_argument("--dt-records", required=True, help="JSONL of transfer records")
    p.add_argument("--covariate-csv", required=True,
                   help="CSV rows: source,target,value")
    p.add_argument("--name", default="covariate")
    p.add_argument("--exclude-largest-rung", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--permutations", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("commute", help="commutativity table from directed D_T values")
    p.add_argument("--values", required=True,
                   help="CSV rows: source,target,value (one direction per row)")
    p.add_argument("--unit", default="MB")
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="emit tables and figures from a results store")
    p.add_argument("--results", required=True)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)

    p = sub.add_parser("run", help="run a whole experiment manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--force", action="store_true", help="ignore stage stamps")
    p.add_argument("--report", action=argparse.BooleanOptionalAction, default=True)
    return parser


def cmd_validate(args) -> int:
    from .manifest import ExperimentManifest
    manifest = ExperimentManifest.from_file(args.manifest)
    errors = manifest.validate()
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    print("manifest ok")
    return EXIT_OK


def cmd_gen_corpus(args) -> int:
    from .corpus import save_corpus
    from .synthetic import SyntheticLangSpec, gen_synthetic
    spec = SyntheticLangSpec.from_dict(json.loads(Path(args.spec).read_text()))
    corpus = gen_synthetic(spec, args.bytes, seed=args.seed)
    save_corpus(corpus, args.out, metadata={"spec": spec.to_dict()})
    print(f"wrote {corpus.total_bytes} bytes in {len(corpus)} documents to {args.out}")
    return EXIT_OK


def _load_model_config(spec: str):
    from .model import PRESETS, ModelConfig
    if spec in PRESETS:
        return PRESETS[spec]
    return ModelConfig.from_dict(json.loads(Path(spec).read_text()))


def cmd_pretrain(args) -> int:
    from .corpus import load_corpus
    from .optim import pretrain_config
    from .trainer import pretrain
    model_config = _load_model_config(args.model)
    corpus = load_corpus(args.corpus)
    cfg = pretrain_config(total_steps=args.steps, batch_sequences=args.batch_sequences,
                          seq_len=args.seq_len or model_config.seq_len, seed=args.seed,
                          peak_lr=args.peak_lr, final_lr=args.final_lr,
                          warmup_steps=args.warmup_steps,
                          eval_interval=args.eval_interval)
    record = pretrain(model_config, cfg, corpus, args.out)
    print(f"best dev perplexity {record.best_dev_perplexity:.4f} at step "
          f"{record.best_step}; checkpoint at {record.checkpoint_path}")
    return EXIT_OK


def cmd_ladder(args) -> int:
    from .corpus import load_corpus
    from .optim import finetune_config
    from .trainer import finetune
    from .transfer import save_curve
    model_config = _load_model_config(args.model)
    corpus = load_corpus(args.target_corpus)
    cfg = finetune_config(rung_bytes=0, largest_rung=False,
                          batch_sequences=args.batch_sequences,
                          seq_len=args.seq_len or model_config.seq_len,
                          seed=args.seed, scratch=args.scratch,
                          peak_lr=args.peak_lr, final_lr=args.peak_lr,
                          epochs=args.epochs, eval_interval=args.eval_interval)
    init = None if args.scratch else args.checkpoint
    curve, _ = finetune(init, _parse_sizes(args.ladder), corpus, cfg,
                        out_dir=args.out, model_config=model_config,
                        eval_bytes=args.eval_bytes, source_tag=args.source_tag)
    curve_path = Path(args.out) / "curve.csv"
    save_curve(curve, curve_path)
    print(f"curve: {[(int(s), round(p, 4)) for s, p in curve.points]}")
    print(f"wrote {curve_path}")
    return EXIT_OK


def cmd_dt(args) -> int:
    from .transfer import convert_units, data_transfer, load_curve
    scratch = load_curve(args.scratch_curve)
    for path in args.finetuned_curve:
        finetuned = load_curve(path)
        est = data_transfer(scratch, finetuned)
        for rung in est.rungs:
            value = convert_units(rung["dt_bytes"], args.unit)
            flag = " (clamped)" if rung["clamped"] else ""
            print(f"{est.source}->{est.target} @ {rung['size_bytes']}: "
                  f"D_T = {value:.2f} {args.unit}{flag}")
        if args.out:
            est.to_json(Path(args.out) / f"{est.source}__{est.target}.json")
    return EXIT_OK


def cmd_contamination(args) -> int:
    from .corpus import load_corpus
    from .langid import contamination_ratio, train_langid
    corpora = {}
    for item in args.corpus:
        tag, _, path = item.partition("=")
        if not path:
            print(f"error: --corpus needs TAG=PATH, got {item!r}", file=sys.stderr)
            return EXIT_VALIDATION
        corpora[tag] = load_corpus(path, language=tag)
    if args.host not in corpora or args.probe not in corpora:
        print("error: --host and --probe must name tags given via --corpus",
              file=sys.stderr)
        return EXIT_VALIDATION
    classifier = train_langid(list(corpora.values()))
    report = contamination_ratio(classifier, corpora[args.host], args.probe,
                                 threshold=args.threshold)
    print(json.dumps(report.to_dict(), indent=2))
    if args.out:
        report.to_json(args.out)
    return EXIT_OK


def cmd_correlate(args) -> int:
    from .stats import correlate
    records = [json.loads(line) for line in
               Path(args.dt_records).read_text().splitlines() if line.strip()]
    values = {}
    with open(args.covariate_csv, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "source":
                continue
            values[(row[0], row[1])] = float(row[2])
    result = correlate(records, args.name, values,
                       exclude_largest_rung=args.exclude_largest_rung,
                       n_permutations=args.permutations, seed=args.seed)
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def cmd_commute(args) -> int:
    from .stats import commutativity
    table = {}
    with open(args.values, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "source":
                continue
            table[(row[0], row[1])] = float(row[2])
    report = commutativity(table, unit=args.unit)
    for r in report.rows:
        print(f"{r['l1']},{r['l2']}: {r['forward']:.2f} / {r['reverse']:.2f} "
              f"-> delta {r['delta']:.2f} {report.unit}")
    if args.out:
        report.to_json(args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    from .pipeline import ResultsStore
    from .report import write_report
    store = ResultsStore(Path(args.results))
    out = write_report(store, figures=args.figures)
    print(f"report written to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .manifest import ExperimentManifest
    from .pipeline import run
    manifest = ExperimentManifest.from_file(args.manifest)
    errors = manifest.validate()
    if errors:
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    store = run(manifest, force=args.force, with_report=args.report)
    if store.failures:
        for failure in store.failures:
            print(f"stage failed: {failure}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"run complete: {store.root}")
    return EXIT_OK


_HANDLERS = {
    "validate": cmd_validate,
    "gen-corpus": cmd_gen_corpus,
    "pretrain": cmd_pretrain,
    "ladder": cmd_ladder,
    "dt": cmd_dt,
    "contamination": cmd_contamination,
    "correlate": cmd_correlate,
    "commute": cmd_commute,
    "report": cmd_report,
    "run": cmd_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # runtime failure
        print(f"runtime failure: {e.__class__.__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
