"""Command-line interface: train, summarize, plot, replay.

Batch tooling only; a run is configured up front by a config file plus a
few overriding flags, and inspected afterwards through summaries, plots,
and trace replays. Exit codes: 0 success, 1 configuration/validation
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments, traces
from .configfile import ConfigError, parse_config

OUTPUT_ROOT_ENV = "EMCOMM_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emcomm",
        description="Emergent-communication lab: train ablation grids, summarize, plot, replay.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the configured grid of training cells")
    p_train.add_argument("--config", required=True, help="experiment config file (INI format)")
    p_train.add_argument("--runs", type=int, default=None, help="override number of seeded runs")
    p_train.add_argument("--seed", type=int, default=None, help="override the base seed")
    p_train.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p_train.add_argument("--out", default=None, help="override the output directory")
    p_train.add_argument("--dry-run", action="store_true",
                         help="print the fully resolved configuration and exit")
    p_train.add_argument("--progress-every", type=int, default=200,
                         help="iterations between progress lines (0 silences them)")

    p_sum = sub.add_parser("summarize", help="tabulate best-minibatch returns of finished runs")
    p_sum.add_argument("records_dir", help="directory holding run record files")
    p_sum.add_argument("--out", default=None, help="directory for the table files")
    p_sum.add_argument("--t-correction", action="store_true",
                       help="use Student-t confidence intervals instead of normal ones")

    p_plot = sub.add_parser("plot", help="plot learning curves with confidence bands")
    p_plot.add_argument("records_dir", help="directory holding run record files")
    p_plot.add_argument("--out", default=None, help="directory for images and data files")

    p_replay = sub.add_parser("replay", help="print a turn-by-turn transcript of an episode trace")
    p_replay.add_argument("trace_path", help="trace file (one JSON record per line)")
    return parser


def _default_out(path: str | None, fallback: str) -> Path:
    if path is not None:
        return Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV, ".")
    return Path(root) / fallback


def cmd_train(args) -> int:
    resolved = parse_config(args.config, runs=args.runs, seed=args.seed, out=args.out)
    print(resolved.echo())
    if args.dry_run:
        return EXIT_OK
    if os.environ.get(OUTPUT_ROOT_ENV) and args.out is None:
        for exp in resolved.experiments:
            exp.out_dir = str(Path(os.environ[OUTPUT_ROOT_ENV]) / exp.out_dir)
    every = max(0, args.progress_every)

    def progress(record, stats):
        if every and stats.iteration % every == 0:
            extra = f" shifted={stats.shifted_return:.4f}" if stats.shifted_return is not None else ""
            print(
                f"[{record.cell} run {record.run_id}] iter {stats.iteration}"
                f" return={stats.mean_return:.4f}{extra}"
                f" action_loss={stats.action_loss:.4f} ps_loss={stats.ps_loss:.4f}"
                f" rc_loss={stats.message_rc_loss:.4f} grad_norm={stats.grad_norm:.3f}",
                flush=True,
            )

    records = experiments.run_grid_parallel(resolved.experiments, n_jobs=args.jobs,
                                            progress=progress if every else None)
    failed = [r for r in records if r.failed]
    for rec in failed:
        print(f"FAILED {rec.cell} run {rec.run_id}: {rec.failure_message}", file=sys.stderr)
    print(f"completed {len(records)} runs ({len(failed)} failed)")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_summarize(args) -> int:
    records = experiments.load_directory(args.records_dir)
    stats = experiments.summarize(records, use_t=args.t_correction)
    text, csv = experiments.summary_table(stats)
    out_dir = _default_out(args.out, "summary")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.txt").write_text(text + "\n")
    (out_dir / "summary.csv").write_text(csv + "\n")
    print(text)
    print(f"wrote {out_dir / 'summary.txt'} and {out_dir / 'summary.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "emcomm"
    import matplotlib.pyplot as plt

    records = experiments.load_directory(args.records_dir)
    stats = experiments.summarize(records)
    out_dir = _default_out(args.out, "plots")
    out_dir.mkdir(parents=True, exist_ok=True)
    for cell, s in stats.items():
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(s.curve_iterations, s.curve_mean, label=f"mean over {s.n_runs} runs")
        if not np.all(np.isnan(s.curve_ci_halfwidth)):
            ax.fill_between(
                s.curve_iterations,
                s.curve_mean - s.curve_ci_halfwidth,
                s.curve_mean + s.curve_ci_halfwidth,
                alpha=0.3,
                label="95% CI over runs of per-iteration means",
            )
        ax.set_xlabel("iteration")
        ylabel = "mean batch return" if s.scale == "raw" else "mean batch return (shifted)"
        ax.set_ylabel(ylabel)
        ax.set_title(cell)
        ax.legend()
        fig.tight_layout()
        image_path = out_dir / f"{cell}.svg"
        fig.savefig(image_path, metadata={"Date": None})
        plt.close(fig)
        data_path = out_dir / f"{cell}.csv"
        with open(data_path, "w") as fh:
            fh.write("iteration,mean,ci_halfwidth\n")
            for i, m, c in zip(s.curve_iterations, s.curve_mean, s.curve_ci_halfwidth):
                fh.write(f"{int(i)},{float(m)!r},{float(c)!r}\n")
        print(f"wrote {image_path} and {data_path}")
    return EXIT_OK


def cmd_replay(args) -> int:
    records = traces.read_trace(args.trace_path)
    print(traces.render_transcript(records))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": cmd_train,
        "summarize": cmd_summarize,
        "plot": cmd_plot,
        "replay": cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
