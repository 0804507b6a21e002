"""Compare the three training regimes on the synthetic nested mixture.

    python scripts/run_synthetic_comparison.py --out runs/synthetic --reps 10

Writes the usual report files plus a copy of the config, then prints the
accuracy table and the post-fine-tune branch losses.
"""

import argparse
import logging
from dataclasses import replace

from branchnet.experiment import ExperimentConfig, emit_report, run_experiment, summary_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/synthetic")
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=None, help="override main-phase epochs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    cfg = ExperimentConfig.synthetic_default(repetitions=args.reps, base_seed=args.seed, workers=args.workers)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    report = run_experiment(cfg)
    emit_report(report, args.out)

    summary = report.summary()
    print(summary_table(summary))
    print("post-fine-tune branch train loss (mean, std):")
    for regime, rep in summary.items():
        loss = rep["final_branch_train_loss"]
        if loss and loss["mean"] is not None:
            print(f"  {regime:<14} {loss['mean']:.5f} ({loss['std']:.5f})")
    print(f"report written to {args.out}")


if __name__ == "__main__":
    main()
