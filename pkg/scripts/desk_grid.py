"""Desk-scale ablation grid: small-batch, short-horizon replicas of the
full study, runnable on a laptop CPU.

Runs the continuous-message Sequence Guess column (RC / PS / RC+PS,
no interagent gradients) and the Negotiation RC+PS cell with interagent
gradients, then prints the best-minibatch summary table. Records land
under --out and are resumable: rerunning skips finished runs.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from emcomm import experiments as ex


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="desk_runs", help="record output directory")
    parser.add_argument("--runs", type=int, default=5, help="seeds per cell")
    parser.add_argument("--iterations", type=int, default=20_000)
    parser.add_argument("--batch-size", type=int, default=256)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--skip-negotiation", action="store_true")
    args = parser.parse_args()

    configs = [
        ex.default_experiment(
            ex.CellSpec("seqguess", losses=mode, interagent_gradients=False),
            n_runs=args.runs,
            seed_base=0,
            out_dir=args.out,
            batch_size=args.batch_size,
            iterations=args.iterations,
        )
        for mode in ("rc", "ps", "rc_ps")
    ]
    if not args.skip_negotiation:
        configs.append(
            ex.default_experiment(
                ex.CellSpec("negotiation", losses="rc_ps", interagent_gradients=True),
                n_runs=min(args.runs, 3),
                seed_base=0,
                out_dir=args.out,
                batch_size=args.batch_size,
                iterations=args.iterations // 2,
            )
        )

    start = time.monotonic()

    def progress(record, stats):
        if stats.iteration % 1000 == 0:
            shifted = f" shifted={stats.shifted_return:.3f}" if stats.shifted_return else ""
            print(
                f"[{record.cell} run {record.run_id}] iter {stats.iteration}"
                f" return={stats.mean_return:.3f}{shifted}",
                flush=True,
            )

    records = ex.run_grid_parallel(configs, n_jobs=args.jobs,
                                   progress=progress if args.jobs <= 1 else None)
    text, _ = ex.summary_table(ex.summarize(records))
    print(text)
    print(f"total wall clock: {(time.monotonic() - start) / 60:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
