"""Command-line entry points.

Subcommands: run (full pipeline), baseline, sweep, eval, plot. Options can
come from a JSON config file (--config), with any field overridable by the
flag of the same name in kebab-case. Exit codes: 0 success, 1 validation
error (bad flags, malformed input files), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import pipeline
from .dataset import DataFormatError, load_assignments, load_embeddings
from .metrics import evaluate
from .pipeline import PipelineConfig


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with PipelineConfig fields")
    parser.add_argument("--embeddings", help="embedding file to load")
    parser.add_argument("--format", choices=["csv", "binary"], help="embedding file format")
    parser.add_argument("--clusters", type=int, help="final (merged) cluster count m")
    parser.add_argument("--k", help="per-pass cluster count, integer or 'auto'")
    parser.add_argument("--beta", type=int, help="number of under-clustering passes")
    parser.add_argument("--mu", type=int, help="candidate classes per abnormal sample")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    parser.add_argument("--ablation", choices=list(pipeline.assigner.MODES), help="assigner mode")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--sigma-schedule", choices=list(pipeline.SIGMA_SCHEDULES))
    parser.add_argument("--finder-space", choices=["original", "reduced"])
    parser.add_argument("--finder-centroid", action="store_true", default=None)
    parser.add_argument("--tsne-perplexity", type=float)
    parser.add_argument("--tsne-iterations", type=int)
    parser.add_argument("--tsne-learning-rate", type=float)
    parser.add_argument("--tsne-early-exaggeration", type=float)
    parser.add_argument("--tsne-exaggeration-iters", type=int)
    parser.add_argument("--neural-hidden-dims", help="comma-separated layer sizes")
    parser.add_argument("--neural-epochs", type=int)
    parser.add_argument("--neural-batch-size", type=int)
    parser.add_argument("--neural-learning-rate", type=float)
    parser.add_argument("--twin-learning-rate", type=float)
    parser.add_argument("--twin-pairs-per-epoch", type=int)
    parser.add_argument("--kmeans-max-iters", type=int)


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    values = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(loaded) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for f in fields(PipelineConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if "k" in values and values["k"] != "auto":
        values["k"] = int(values["k"])
    if isinstance(values.get("neural_hidden_dims"), str):
        values["neural_hidden_dims"] = tuple(
            int(v) for v in values["neural_hidden_dims"].split(",") if v
        )
    elif isinstance(values.get("neural_hidden_dims"), list):
        values["neural_hidden_dims"] = tuple(values["neural_hidden_dims"])
    config = PipelineConfig(**values)
    if not config.embeddings:
        raise ValueError("an embeddings file is required (--embeddings or config)")
    config.validate()
    return config


def _parse_range(text: str) -> list[int]:
    for sep in ("..", ":"):
        if sep in text:
            lo, hi = text.split(sep, 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError(f"empty cluster range {text!r}")
            return list(range(lo, hi + 1))
    return [int(text)]


def _cmd_run(args) -> int:
    config = _build_config(args)
    result = pipeline.run_pipeline(config)
    print(f"assignments: {result.paths['assignments']}")
    if result.report is not None:
        print(f"metrics: {result.paths['metrics']}")
        print(f"  f1={result.report.f1:.4f} nmi={result.report.nmi:.4f} "
              f"purity={result.report.purity:.4f} ave_acc={result.report.ave_acc:.4f}")
    else:
        print(f"metrics skipped (unlabeled input); see {result.paths['metrics_note']}")
    print(f"abnormal remainder: {result.state.abnormal.size} of {result.embeddings.n} samples")
    return 0


def _cmd_baseline(args) -> int:
    config = _build_config(args)
    algo = args.algo.replace("-", "_")
    e = load_embeddings(config.embeddings, config.format)
    labels, report = pipeline.run_baseline(config, algo, e=e)
    paths = pipeline.write_baseline_outputs(config, algo, e, labels, report)
    print(f"labels: {paths['labels']}")
    if report is not None:
        print(f"metrics: {paths['metrics']}")
        print(f"  f1={report.f1:.4f} nmi={report.nmi:.4f} purity={report.purity:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _build_config(args)
    m_values = _parse_range(args.clusters_range)
    e = load_embeddings(config.embeddings, config.format)
    rows = pipeline.sweep_clusters(config, m_values, e=e)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    table = out / "sweep.csv"
    pipeline.write_sweep_table(rows, table)
    plots = pipeline.plot_sweep(rows, out)
    print(f"table: {table}")
    for p in plots:
        print(f"plot: {p}")
    return 0


def _cmd_eval(args) -> int:
    e = load_embeddings(args.embeddings, args.format)
    if e.labels is None:
        raise ValueError("eval requires ground-truth labels in the embedding file")
    records = load_assignments(args.assignments)
    by_id = {r.id: r.cluster_index for r in records}
    missing = [sid for sid in e.ids if sid not in by_id]
    if missing:
        raise ValueError(f"assignments missing {len(missing)} ids (first: {missing[0]!r})")
    pred = np.array([by_id[sid] for sid in e.ids], dtype=np.int64)
    report = evaluate(pred, e.labels)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"metrics: {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_plot(args) -> int:
    rows = pipeline.read_sweep_table(args.table)
    for p in pipeline.plot_sweep(rows, args.out):
        print(f"plot: {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="underclust",
        description="Self-supervised annotation of embedding datasets by "
        "cross-iterative kernelized under-clustering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full pipeline")
    _add_config_flags(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_base = sub.add_parser("baseline", help="run a one-shot clustering baseline")
    _add_config_flags(p_base)
    p_base.add_argument("--algo", required=True, choices=["kmeans", "kernel-kmeans", "kernel_kmeans"])
    p_base.set_defaults(fn=_cmd_baseline)

    p_sweep = sub.add_parser("sweep", help="metrics across a range of cluster counts")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--clusters-range", required=True, help="inclusive range, e.g. 6..10")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_eval = sub.add_parser("eval", help="score an assignment file against labeled embeddings")
    p_eval.add_argument("--assignments", required=True)
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--format", choices=["csv", "binary"], default="csv")
    p_eval.add_argument("--out", help="write metrics JSON here instead of stdout")
    p_eval.set_defaults(fn=_cmd_eval)

    p_plot = sub.add_parser("plot", help="re-plot a sweep table")
    p_plot.add_argument("--table", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except pipeline.StageError as exc:
        if isinstance(exc.cause, (ValueError, DataFormatError, FileNotFoundError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
