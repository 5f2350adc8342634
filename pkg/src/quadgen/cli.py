"""Command-line interface.

Subcommands: gen-data, encode, decode, score, train, eval, ablate,
low-resource, inspect-negatives. Every training-config key is exposed as
a flag of the same name; flags override values from --config files. All
machine-readable outputs are deterministic for fixed seeds and inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .codec import TemplateKind, parse, render
from .corpus import (CorpusError, CorpusSplit, SyntheticSpec, generate_synthetic,
                     load_examples, load_split, save_split)
from .evaluation import evaluate_model, low_resource_run, score
from .model import load_checkpoint, save_checkpoint
from .training import (ConfigError, TrainConfig, TrainingDiverged, config_overrides,
                       inspect_negatives, load_config, run_ablation_suite, train)

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides (mirror config-file keys)")
    for name in _CONFIG_FIELDS:
        group.add_argument(f"--{name}", type=str, default=None, metavar="V")


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else TrainConfig()
    overrides = {name: getattr(args, name) for name in _CONFIG_FIELDS
                 if getattr(args, name, None) is not None}
    return config_overrides(cfg, overrides)


def _template_from_args(args: argparse.Namespace) -> TemplateKind:
    order = tuple(part.strip().upper() for part in args.order.split(",")) if args.order else None
    return TemplateKind.from_name(args.template, order)


def _write_json(path: str | None, payload) -> None:
    if path:
        Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")


def _cmd_gen_data(args) -> int:
    spec = SyntheticSpec(train=args.train, dev=args.dev, test=args.test, seed=args.seed)
    split = generate_synthetic(spec)
    out = Path(args.out)
    save_split(split, out)
    print(json.dumps({"out": str(out), "counts": split.counts()}, sort_keys=True))
    return 0


def _cmd_encode(args) -> int:
    kind = _template_from_args(args)
    examples = load_examples(args.input)
    lines = [render(list(e.quads), kind).text for e in examples]
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_decode(args) -> int:
    kind = _template_from_args(args)
    lines = Path(args.input).read_text(encoding="utf-8").splitlines()
    records, all_diagnostics = [], []
    for line_no, line in enumerate(lines, start=1):
        quads, diagnostics = parse(line, kind)
        records.append({"sentence": line if line.strip() else "<empty>",
                        "quads": [{"at": q.at if q.at is not None else "NULL",
                                   "ot": q.ot if q.ot is not None else "NULL",
                                   "ac": q.ac, "sp": q.sp} for q in quads]})
        all_diagnostics.extend({"line": line_no, "chunk_index": d.chunk_index,
                                "chunk_text": d.chunk_text, "reason": d.reason}
                               for d in diagnostics)
    payload = "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in records)
    if args.output:
        Path(args.output).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    if args.diagnostics_out:
        Path(args.diagnostics_out).write_text(
            "".join(json.dumps(d, sort_keys=True) + "\n" for d in all_diagnostics),
            encoding="utf-8")
    print(f"decoded {len(records)} lines, {len(all_diagnostics)} unparseable chunks",
          file=sys.stderr)
    return 0


def _cmd_score(args) -> int:
    predicted = load_examples(args.pred, require_quads=False)
    gold = load_examples(args.gold, require_quads=False)
    report = score([list(e.quads) for e in predicted], [list(e.quads) for e in gold])
    print(report.table())
    _write_json(args.json_out, report.as_dict())
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    split = load_split(args.data)
    params, vocab, report = train(cfg, split, metrics_path=args.metrics,
                                  verbose=not args.quiet)
    save_checkpoint(args.out, params, vocab,
                    extra={"config": dataclasses.asdict(cfg),
                           "best_epoch": report.best_epoch,
                           "best_dev_f1": report.best_dev_f1})
    summary = {"best_epoch": report.best_epoch, "best_dev_f1": report.best_dev_f1,
               "checkpoint": str(args.out)}
    if split.test:
        test = evaluate_model(params, vocab, split.test, cfg.template_kind(),
                              cfg.max_decode_len)
        summary["test"] = test.as_dict()
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    params, vocab, extra = load_checkpoint(args.checkpoint)
    cfg = TrainConfig(**extra["config"]) if "config" in extra else TrainConfig()
    examples = load_examples(args.data)
    report = evaluate_model(params, vocab, examples, cfg.template_kind(),
                            cfg.max_decode_len)
    print(report.table())
    _write_json(args.json_out, report.as_dict())
    return 0


def _cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    split = load_split(args.data)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    results = run_ablation_suite(split, cfg, seeds=seeds, checkpoint_dir=args.out,
                                 verbose=not args.quiet)
    header = f"{'variant':>14}  {'mean_p':>8}  {'mean_r':>8}  {'mean_f1':>8}  per-seed f1"
    print(header)
    for row in results:
        per_seed = " ".join(f"{run['f1']:.4f}" for run in row["runs"])
        print(f"{row['variant']:>14}  {row['mean_precision']:>8.4f}  "
              f"{row['mean_recall']:>8.4f}  {row['mean_f1']:>8.4f}  {per_seed}")
    _write_json(args.json_out, results)
    return 0


def _cmd_low_resource(args) -> int:
    cfg = _resolve_config(args)
    split = load_split(args.data)
    ratios = [float(r) for r in args.ratios.split(",")]
    rows = low_resource_run(split, ratios, cfg, verbose=not args.quiet)
    print(f"{'ratio':>6}  {'n':>5}  {'baseline':>9}  {'with-ul':>9}  {'delta':>8}")
    for row in rows:
        print(f"{row['ratio']:>6.2f}  {row['n_train']:>5d}  {row['baseline_f1']:>9.4f}  "
              f"{row['unlikelihood_f1']:>9.4f}  {row['delta']:>+8.4f}")
    _write_json(args.json_out, rows)
    return 0


def _cmd_inspect_negatives(args) -> int:
    params, vocab, extra = load_checkpoint(args.checkpoint)
    cfg = TrainConfig(**extra["config"]) if "config" in extra else TrainConfig()
    overrides = {name: getattr(args, name) for name in _CONFIG_FIELDS
                 if getattr(args, name, None) is not None}
    cfg = config_overrides(cfg, overrides)
    examples = load_examples(args.data)
    dump = inspect_negatives(params, vocab, examples, cfg, limit=args.limit)
    payload = "".join(json.dumps(d, ensure_ascii=False, sort_keys=True) + "\n" for d in dump)
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quadgen",
        description="Aspect sentiment quad prediction via templated generation, with "
                    "uncertainty-aware unlikelihood training.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=800)
    p.add_argument("--dev", type=int, default=200)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("encode", help="render dataset quads into target sequences")
    p.add_argument("--template", default="paraphrase")
    p.add_argument("--order", default=None, help="slot order for special_symbols, e.g. AT,OT,AC,SP")
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="parse target sequences back into quads")
    p.add_argument("--template", default="paraphrase")
    p.add_argument("--order", default=None)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--diagnostics-out", default=None)
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("score", help="exact-quad F1 of predictions against gold")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("train", help="train a model on a data directory")
    p.add_argument("--data", required=True, help="directory with train/dev/test.jsonl")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--config", default=None, help="flat key = value config file")
    p.add_argument("--metrics", default=None, help="per-epoch JSONL metrics stream")
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--json-out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the six-variant ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", default=None, help="directory for per-variant checkpoints")
    p.add_argument("--json-out", default=None)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("low-resource", help="nested-subset training comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--ratios", default="0.10,0.15,0.20,0.25,0.30,0.35,0.40,0.45,0.50")
    p.add_argument("--json-out", default=None)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_low_resource)

    p = sub.add_parser("inspect-negatives",
                       help="dump per-step positive/negative samples for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_inspect_negatives)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CorpusError, ConfigError, TrainingDiverged, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
