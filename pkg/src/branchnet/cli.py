"""``branchnet`` command line: run, gradcheck, synth, eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from branchnet.data import (
    DatasetFormatError,
    DatasetValidationError,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    newsgroups_hierarchy,
    save_dataset,
)
from branchnet.experiment import ExperimentConfig, emit_report, run_experiment, summary_table
from branchnet.gradcheck import block_names, check_gradients
from branchnet.linalg import ContractViolation
from branchnet.network import NetworkSpec, load_checkpoint
from branchnet.training import evaluate

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_ALL_DIVERGED = 3
EXIT_IO = 4

GRADCHECK_TOL = 1e-5

log = logging.getLogger("branchnet")


def cmd_run(args) -> int:
    config = ExperimentConfig.load(args.config)
    if args.workers:
        config = ExperimentConfig(**{**config.__dict__, "workers": args.workers})
    report = run_experiment(config, checkpoint_dir=args.checkpoints)
    emit_report(report, args.out)
    print(summary_table(report.summary()))
    diverged = sum(len(r.diverged) for r in report.regimes.values())
    if diverged:
        log.warning("%d run(s) diverged and were excluded", diverged)
    if report.total_completed == 0:
        log.error("every repetition diverged")
        return EXIT_ALL_DIVERGED
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    spec = NetworkSpec(5, (4,), 1, 3, 2)
    seeds = [args.seed] if args.seed is not None else list(range(args.seeds))
    worst = 0.0
    for seed in seeds:
        result = check_gradients(seed, spec, l2_lambda=args.l2, h=args.h)
        cost, block, err = result.worst
        print(f"seed {seed}: max relative error {err:.3e} ({cost} cost, {block})")
        if args.verbose:
            names = block_names(spec)
            for c, blocks in result.per_block.items():
                print("   ", c, " ".join(f"{n}={blocks[n]:.1e}" for n in names))
        worst = max(worst, err)
    ok = worst <= GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}: worst {worst:.3e} vs tolerance {GRADCHECK_TOL:g}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        coarse_count=args.coarse,
        fines_per_coarse=args.fines_per_coarse,
        dim=args.dim,
        n=args.n,
        sigma_coarse=args.sigma_coarse,
        sigma_fine=args.sigma_fine,
        sigma_noise=args.sigma_noise,
    )
    ds = generate_synthetic(cfg, args.seed)
    save_dataset(args.out, ds, derive_coarse=args.derive_coarse)
    print(f"wrote {ds.n} rows ({ds.fine_count} fine / {ds.coarse_count} coarse classes, dim {ds.dim}) to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    spec, params = load_checkpoint(args.checkpoint)
    hierarchy = newsgroups_hierarchy() if args.hierarchy == "newsgroups" else None
    ds = load_dataset(args.data, hierarchy)
    if ds.dim != spec.input_dim:
        raise ContractViolation(f"data dim {ds.dim} != checkpoint input_dim {spec.input_dim}")
    final_acc, branch_acc, final_loss, branch_loss = evaluate(spec, params, ds)
    print(json.dumps({
        "n": ds.n,
        "final_acc": final_acc,
        "branch_acc": branch_acc,
        "final_loss": final_loss,
        "branch_loss": branch_loss,
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="branchnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a multi-regime experiment from a JSON config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--checkpoints", default=None, help="directory for per-run checkpoints")
    run.add_argument("--workers", type=int, default=None, help="override config workers")
    run.set_defaults(func=cmd_run)

    gc = sub.add_parser("gradcheck", help="finite-difference check on a random 5-4-3 net")
    gc.add_argument("--seed", type=int, default=None)
    gc.add_argument("--seeds", type=int, default=5, help="number of seeds when --seed is absent")
    gc.add_argument("--h", type=float, default=1e-6)
    gc.add_argument("--l2", type=float, default=0.05)
    gc.set_defaults(func=cmd_gradcheck)

    synth = sub.add_parser("synth", help="write a synthetic hierarchical dataset")
    synth.add_argument("--out", required=True)
    d = SynthConfig()
    synth.add_argument("--n", type=int, default=d.n)
    synth.add_argument("--dim", type=int, default=d.dim)
    synth.add_argument("--coarse", type=int, default=d.coarse_count)
    synth.add_argument("--fines-per-coarse", type=int, default=d.fines_per_coarse)
    synth.add_argument("--sigma-coarse", type=float, default=d.sigma_coarse)
    synth.add_argument("--sigma-fine", type=float, default=d.sigma_fine)
    synth.add_argument("--sigma-noise", type=float, default=d.sigma_noise)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--derive-coarse", action="store_true", help="write '-' instead of coarse labels")
    synth.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--hierarchy", choices=["newsgroups"], default=None)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ContractViolation, DatasetFormatError, DatasetValidationError, KeyError, TypeError, ValueError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
