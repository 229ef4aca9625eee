"""Command line entry point: build-kb, align, synth, train, denoise, eval, report.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3
numerical failure. Errors print one ``error: <kind>: <message>`` line to
stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .align import align_dataset, coverage
from .config import ConfigError, em_config, fit_params, read_config, synth_config
from .denoise import e_step_initial, run_distant, run_semi
from .evaluation import METRICS, predict_dataset
from .kb import build_kb, extract_triples, load_kb, merge_plurals, save_kb
from .scene import D_L, D_S, Dataset, ValidationError, load_dataset, load_gold, save_dataset, save_gold
from .scorer import NumericalError, RelationScorer, fit, load_scorer, save_scorer
from .signal import CooccurrenceSignal, FileSignal
from .synth import generate, heldout, split

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit code."""

    def error(self, message):
        raise UsageError(message)


def _write(path, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")


def _apply_config(args, protected=("command", "config", "func")) -> dict[str, str]:
    """Override parsed flags from ``--config``; returns the keys no flag claimed."""
    if not args.config:
        return {}
    rest = {}
    for key, raw in read_config(args.config).items():
        dest = key.replace("-", "_")
        if dest in protected or not hasattr(args, dest):
            rest[key] = raw
            continue
        current = getattr(args, dest)
        try:
            if isinstance(current, bool):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            else:
                value = raw
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
        setattr(args, dest, value)
    return rest


def _no_extra(rest: dict):
    if rest:
        raise ConfigError(f"unknown config key {sorted(rest)[0]!r}")


def _load_signal(spec, kb):
    if spec is None:
        return None
    if spec == "cooc":
        return CooccurrenceSignal(kb)
    return FileSignal.load(spec, kb)


# --- subcommands -------------------------------------------------------------------


def cmd_build_kb(args):
    _no_extra(_apply_config(args))
    lines = Path(args.captions).read_text(encoding="utf-8").splitlines()
    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            per = list(pool.map(extract_triples, lines))
    else:
        per = [extract_triples(ln) for ln in lines]
    triples = [t for ts in per for t in ts]
    if not args.keep_plurals:
        triples = merge_plurals(triples)
    kb = build_kb(triples, min_count=args.min_count)
    save_kb(kb, args.out)


def cmd_align(args):
    _no_extra(_apply_config(args))
    kb = load_kb(args.kb)
    scenes = load_dataset(args.scenes, D_S)
    ds, stats = align_dataset(kb, scenes, threads=args.threads)
    save_dataset(ds, args.out)
    summary = {"considered": stats.considered, "skipped_unknown": stats.skipped_unknown,
               "emitted": stats.emitted}
    if args.dl:
        summary["coverage"] = coverage(ds, load_dataset(args.dl, D_L))
    text = json.dumps(summary, sort_keys=True) + "\n"
    if args.stats:
        _write(args.stats, text)
    else:
        sys.stdout.write(text)


def cmd_synth(args):
    config = synth_config(_apply_config(args), args.seed)
    corpus = generate(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bare = Dataset([replace(s, relations=[]) for s in corpus.scenes], D_S)
    save_dataset(bare, out / "scenes.jsonl")
    save_gold(corpus.gold, out / "gold.jsonl")
    save_kb(corpus.kb, out / "kb.tsv")
    ds = corpus.ds
    if args.human_fraction is not None:
        dl, ds = split(ds, args.human_fraction, args.seed, corpus.gold, corpus.kb.num_relations)
        save_dataset(dl, out / "dl.jsonl")
    save_dataset(ds, out / "ds.jsonl")
    if args.test_scenes:
        scenes, gold = heldout(corpus, args.test_scenes)
        save_dataset(Dataset(scenes, D_S), out / "test_scenes.jsonl")
        save_gold(gold, out / "test_gold.jsonl")


def cmd_train(args):
    params = replace(fit_params(_apply_config(args)), seed=args.seed)
    kb = load_kb(args.kb)
    data = load_dataset(args.data)
    if any(r.label is None for _, r in data.instances()):
        e_step_initial(data, kb.num_relations, _load_signal(args.signal, kb))
    init = RelationScorer.init(kb.num_categories, kb.num_relations, args.seed, args.hidden)
    scorer, curve = fit(init, data, args.loss, params)
    save_scorer(scorer, args.out)
    if args.curve:
        _write(args.curve, "epoch,loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(curve)))


def cmd_denoise(args):
    rest = _apply_config(args)
    kb = load_kb(args.kb)
    signal = _load_signal(args.signal, kb)
    config = em_config(args.mode, rest, args.seed, signal is not None)
    ds = load_dataset(args.ds, D_S)
    gold = load_gold(args.gold) if args.gold else None
    if args.mode == "distant":
        scorer, trace = run_distant(ds, kb, signal, config, gold)
    else:
        if not args.dl:
            raise UsageError("--mode semi needs --dl")
        if signal is not None:
            raise UsageError("--mode semi takes no --signal")
        dl = load_dataset(args.dl, D_L)
        scorer, trace = run_semi(ds, dl, kb, config, gold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scorer(scorer, out / "scorer.ckpt")
    save_dataset(ds, out / "ds.jsonl")
    _write(out / "trace.csv", trace.to_csv())


def cmd_eval(args):
    _no_extra(_apply_config(args))
    scorer = load_scorer(args.scorer)
    scenes = load_dataset(args.scenes)
    gold = load_gold(args.gold)
    kb = load_kb(args.kb) if args.kb else None
    if kb is not None and (kb.num_categories, kb.num_relations) != (
            scorer.num_categories, scorer.num_relations):
        raise ValidationError("knowledge base vocabulary does not match the scorer")
    for key, r in gold.items():
        if not 0 < r < scorer.num_relations:
            raise ValidationError(f"gold relation {r} of {key} outside the scorer vocabulary")
    try:
        ks = [int(k) for k in args.k.split(",")]
    except ValueError:
        raise UsageError(f"--k expects comma-separated integers, got {args.k!r}") from None
    preds = predict_dataset(scorer, scenes, kb, threads=args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "K", "value"])
    for name, fn in METRICS.items():
        for k in ks:
            w.writerow([name, k, repr(fn(preds, gold, k, not args.no_graph_constraint))])
    _write(args.out, buf.getvalue())


def _read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def cmd_report(args):
    _no_extra(_apply_config(args))
    if not args.traces and not args.metrics:
        raise UsageError("report needs --traces and/or --metrics")
    md, curve_rows = [], []
    if args.traces:
        md += ["| run | iterations | active | label accuracy | final loss |",
               "|---|---|---|---|---|"]
        for path in args.traces:
            rows = _read_csv(path)
            if not rows or "iteration" not in rows[0]:
                raise ValidationError(f"{path}: not a trace CSV")
            last = rows[-1]
            acc = last["label_accuracy"]
            md.append(f"| {path} | {last['iteration']} | {last['active']} | "
                      f"{float(acc):.4f} | {float(last['final_loss']):.4f} |"
                      if acc else
                      f"| {path} | {last['iteration']} | {last['active']} | - | "
                      f"{float(last['final_loss']):.4f} |")
            for row in rows:
                curve_rows.append([path, row["iteration"], row["active"], row["label_accuracy"],
                                   row["final_loss"]])
        md.append("")
    if args.metrics:
        tables = []
        cols: list[str] = []
        for path in args.metrics:
            rows = _read_csv(path)
            if not rows or set(rows[0]) != {"metric", "K", "value"}:
                raise ValidationError(f"{path}: not a metrics CSV")
            vals = {f"{r['metric']}@{r['K']}": float(r["value"]) for r in rows}
            cols += [c for c in vals if c not in cols]
            tables.append((path, vals))
        md += ["| run | " + " | ".join(cols) + " |", "|---|" + "---|" * len(cols)]
        for path, vals in tables:
            cells = [f"{vals[c]:.4f}" if c in vals else "-" for c in cols]
            md.append(f"| {path} | " + " | ".join(cells) + " |")
        md.append("")
    _write(args.out, "\n".join(md))
    if args.curves:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "iteration", "active", "label_accuracy", "loss"])
        w.writerows(curve_rows)
        _write(args.curves, buf.getvalue())


# --- parser ------------------------------------------------------------------------


def build_parser() -> Parser:
    common = Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("--config", help="flat key=value file; its keys override flags")

    p = Parser(prog="visdist", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    s = sub.add_parser("build-kb", parents=[common], help="mine a knowledge base from captions")
    s.add_argument("--captions", required=True, help="text file, one caption per line")
    s.add_argument("--out", required=True)
    s.add_argument("--min-count", type=int, default=2)
    s.add_argument("--keep-plurals", action="store_true", help="do not fold plural categories")
    s.set_defaults(func=cmd_build_kb)

    s = sub.add_parser("align", parents=[common], help="distant labels from a KB")
    s.add_argument("--kb", required=True)
    s.add_argument("--scenes", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dl", help="human-labeled dataset; adds coverage to the summary")
    s.add_argument("--stats", help="write the JSON summary here instead of stdout")
    s.set_defaults(func=cmd_align)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--human-fraction", type=float, help="also split off a human-labeled dl.jsonl")
    s.add_argument("--test-scenes", type=int, default=0, help="held-out scenes to write")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="fit a scorer once")
    s.add_argument("--data", required=True, help="D_S or D_L dataset")
    s.add_argument("--kb", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--loss", choices=("noise", "ce"), default="noise")
    s.add_argument("--signal", help="'cooc' or a score TSV, for unlabeled data")
    s.add_argument("--hidden", type=int, default=0)
    s.add_argument("--curve", help="write the per-epoch loss CSV here")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("denoise", parents=[common], help="EM label denoising")
    s.add_argument("--mode", choices=("distant", "semi"), default="distant")
    s.add_argument("--ds", required=True)
    s.add_argument("--dl")
    s.add_argument("--kb", required=True)
    s.add_argument("--signal", help="'cooc' or a score TSV; omit for no external signal")
    s.add_argument("--gold", help="gold file; adds label accuracy to the trace")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_denoise)

    s = sub.add_parser("eval", parents=[common], help="predicate classification metrics")
    s.add_argument("--scorer", required=True)
    s.add_argument("--scenes", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--k", default="50,100")
    s.add_argument("--kb", help="restrict predictions to KB candidates")
    s.add_argument("--no-graph-constraint", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="summarize traces and metrics")
    s.add_argument("--traces", nargs="*", default=[])
    s.add_argument("--metrics", nargs="*", default=[])
    s.add_argument("--out", required=True, help="markdown summary")
    s.add_argument("--curves", help="convergence CSV")
    s.set_defaults(func=cmd_report)
    return p


def _fail(code: int, kind: str, exc) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        args.func(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (ValidationError, ValueError, KeyError, OSError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
