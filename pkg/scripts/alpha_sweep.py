"""Sweep the shared-layer mixing weight alpha under Simultaneous training.

alpha = 1 reproduces FinalOnly on the trunk and alpha = 0 reproduces
HiddenOnly below the tap, so the sweep interpolates between the two.

    python scripts/alpha_sweep.py --alphas 0 0.25 0.5 0.75 1 --reps 3 --out runs/alpha.csv
"""

import argparse
import csv
from dataclasses import replace

from branchnet.experiment import ExperimentConfig, run_experiment
from branchnet.training import Regime


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.25, 0.5, 0.75, 1.0])
    ap.add_argument("--reps", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    base = ExperimentConfig.synthetic_default(repetitions=args.reps, regimes=(Regime.SIMULTANEOUS,))
    rows = []
    for alpha in args.alphas:
        cfg = replace(base, train=replace(base.train, alpha=alpha, epochs=args.epochs))
        rep = run_experiment(cfg).regimes[Regime.SIMULTANEOUS]
        (f_mean, f_std), (b_mean, b_std) = rep.accuracy["final"]["test"], rep.accuracy["branch"]["test"]
        rows.append({"alpha": alpha, "final_test_acc": f_mean, "final_test_std": f_std,
                     "branch_test_acc": b_mean, "branch_test_std": b_std, "diverged": len(rep.diverged)})
        print(f"alpha={alpha:<5} final {100 * f_mean:6.2f}% ({100 * f_std:.2f})  branch {100 * b_mean:6.2f}% ({100 * b_std:.2f})")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
