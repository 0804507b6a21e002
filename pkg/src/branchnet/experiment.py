"""Repeated multi-regime runs, aggregation and report files.

A run for repetition ``r`` and regime ``g`` uses seed
``base_seed XOR stable_hash(r, g)`` for both initialisation and shuffling.
Every repetition sees the same dataset and split.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from branchnet.data import (
    HierarchyMap,
    LabeledDataset,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    newsgroups_hierarchy,
    split,
)
from branchnet.linalg import ContractViolation
from branchnet.network import NetworkSpec, save_checkpoint
from branchnet.training import METRICS, DivergenceError, Regime, RunRecord, TrainConfig, train_run

log = logging.getLogger(__name__)

HEADS = ("final", "branch")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class DataSource:
    """Either a synthetic mixture or an HDS1 file, plus how to split it."""

    synthetic: SynthConfig | None = None
    path: str | None = None
    hierarchy: str | None = None  # "newsgroups" or None
    train_fraction: float = 0.8
    data_seed: int = 0

    def __post_init__(self):
        if (self.synthetic is None) == (self.path is None):
            raise ContractViolation("data source needs exactly one of 'synthetic' or 'path'")
        if self.hierarchy not in (None, "newsgroups"):
            raise ContractViolation(f"unknown hierarchy {self.hierarchy!r}")

    def hierarchy_map(self) -> HierarchyMap | None:
        return newsgroups_hierarchy() if self.hierarchy == "newsgroups" else None

    def load(self) -> tuple[LabeledDataset, LabeledDataset]:
        if self.synthetic is not None:
            ds = generate_synthetic(self.synthetic, self.data_seed)
        else:
            ds = load_dataset(self.path, self.hierarchy_map())
        return split(ds, self.train_fraction, self.data_seed)

    def to_dict(self) -> dict:
        return {
            "synthetic": None if self.synthetic is None else self.synthetic.to_dict(),
            "path": self.path,
            "hierarchy": self.hierarchy,
            "train_fraction": self.train_fraction,
            "data_seed": self.data_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DataSource":
        d = dict(d)
        synth = d.pop("synthetic", None)
        return cls(synthetic=None if synth is None else SynthConfig(**synth), **d)


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkSpec
    train: TrainConfig
    data: DataSource
    regimes: tuple[Regime, ...] = tuple(Regime)
    repetitions: int = 20
    base_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "regimes", tuple(Regime(g) for g in self.regimes))
        if self.repetitions < 1:
            raise ContractViolation("repetitions must be >= 1")
        if not self.regimes:
            raise ContractViolation("at least one regime is required")
        if len(set(self.regimes)) != len(self.regimes):
            raise ContractViolation("regimes must be distinct")
        if self.workers < 1:
            raise ContractViolation("workers must be >= 1")

    @classmethod
    def synthetic_default(cls, **overrides) -> "ExperimentConfig":
        """Desk-scale analogue of the 20-class / 5-class comparison."""
        synth = SynthConfig()
        fields = dict(
            network=NetworkSpec(synth.dim, (10, 64, 48, 32), 1, synth.fine_count, synth.coarse_count),
            train=TrainConfig(),
            data=DataSource(synthetic=synth),
        )
        fields.update(overrides)
        return cls(**fields)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("regime")
        train.pop("seed")
        return {
            "network": self.network.to_dict(),
            "train": train,
            "data": self.data.to_dict(),
            "regimes": [g.value for g in self.regimes],
            "repetitions": self.repetitions,
            "base_seed": self.base_seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Missing keys fall back to defaults (alpha 0.5, mu 0.9, batch 256,
        100 + 20 epochs, 20 repetitions)."""
        train = TrainConfig(**{k: v for k, v in d.get("train", {}).items() if k not in ("regime", "seed")})
        return cls(
            network=NetworkSpec.from_dict(d["network"]) if "network" in d else NetworkSpec.newsgroups_default(),
            train=train,
            data=DataSource.from_dict(d["data"]),
            regimes=tuple(d.get("regimes", [g.value for g in Regime])),
            repetitions=int(d.get("repetitions", 20)),
            base_seed=int(d.get("base_seed", 0)),
            workers=int(d.get("workers", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stable_hash(repetition: int, regime: Regime | str) -> int:
    digest = hashlib.blake2b(f"{int(repetition)}:{Regime(regime).value}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def run_seed(base_seed: int, repetition: int, regime: Regime | str) -> int:
    return (int(base_seed) ^ stable_hash(repetition, regime)) & (2**64 - 1)


def aggregate_stats(values) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation; std is 0 for one value."""
    values = [float(v) for v in values]
    if not values:
        raise ContractViolation("aggregate_stats needs at least one value")
    n = len(values)
    # sorted summation keeps the result independent of repetition order
    ordered = sorted(values)
    mean = math.fsum(ordered) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in ordered) / (n - 1)
    return mean, math.sqrt(var)


@dataclass
class RegimeReport:
    regime: Regime
    phases: list[str]
    curves: dict[str, tuple[list[float], list[float]]]  # metric -> (means, stds)
    accuracy: dict[str, dict[str, tuple[float, float]]]  # head -> split -> (mean, std)
    records: list[RunRecord]
    seeds: list[int]
    diverged: list[int]  # repetition indices

    def summary(self) -> dict:
        return {
            "completed": len(self.records),
            "diverged": len(self.diverged),
            "accuracy": {
                head: {s: {"mean": _num(m), "std": _num(sd)} for s, (m, sd) in splits.items()}
                for head, splits in self.accuracy.items()
            },
            "final_branch_train_loss": _final_pair(self.curves, "branch_train_loss"),
            "final_final_train_loss": _final_pair(self.curves, "final_train_loss"),
        }


def _num(v: float) -> float | None:
    # strict JSON has no NaN; an all-diverged regime reports nulls
    return v if math.isfinite(v) else None


def _final_pair(curves, metric):
    means, stds = curves[metric]
    if not means:
        return None
    return {"mean": _num(means[-1]), "std": _num(stds[-1])}


@dataclass
class AggregateReport:
    config: ExperimentConfig
    regimes: dict[Regime, RegimeReport] = field(default_factory=dict)

    def summary(self) -> dict:
        return {g.value: rep.summary() for g, rep in self.regimes.items()}

    @property
    def total_completed(self) -> int:
        return sum(len(r.records) for r in self.regimes.values())


def _one_run(args):
    spec, train, test, cfg, ckpt_stem = args
    try:
        result = train_run(spec, train, test, cfg)
    except DivergenceError as exc:
        log.warning("regime %s seed %d diverged: %s", cfg.regime.value, cfg.seed, exc)
        return None
    if ckpt_stem is not None:
        meta = {"regime": cfg.regime.value, "seed": cfg.seed}
        save_checkpoint(f"{ckpt_stem}_main.json", spec, result.params_main, {**meta, "phase": "main"})
        save_checkpoint(f"{ckpt_stem}_final.json", spec, result.params, {**meta, "phase": "fine_tune"})
    return result.record


def _aggregate_regime(regime, records, seeds, diverged, n_epochs):
    curves = {}
    for m in METRICS:
        means, stds = [], []
        for e in range(n_epochs):
            if records:
                mean, std = aggregate_stats([r.series[m][e] for r in records])
            else:
                mean, std = float("nan"), float("nan")
            means.append(mean)
            stds.append(std)
        curves[m] = (means, stds)
    accuracy = {}
    for head in HEADS:
        accuracy[head] = {}
        for s in SPLITS:
            metric = f"{head}_{s}_acc"
            if records:
                accuracy[head][s] = aggregate_stats([r.last(metric) for r in records])
            else:
                accuracy[head][s] = (float("nan"), float("nan"))
    phases = records[0].phases if records else []
    return RegimeReport(regime, phases, curves, accuracy, records, seeds, diverged)


def run_experiment(
    config: ExperimentConfig,
    data: tuple[LabeledDataset, LabeledDataset] | None = None,
    checkpoint_dir: str | Path | None = None,
) -> AggregateReport:
    """Run every (regime, repetition) pair and aggregate.

    With ``checkpoint_dir`` set, each run writes
    ``<regime>_r<rep>_main.json`` and ``<regime>_r<rep>_final.json``.
    """
    train, test = data if data is not None else config.data.load()
    spec = config.network
    if train.dim != spec.input_dim:
        raise ContractViolation(f"data dim {train.dim} != network input_dim {spec.input_dim}")
    if (train.fine_count, train.coarse_count) != (spec.final_classes, spec.branch_classes):
        raise ContractViolation("data class counts do not match the network heads")

    jobs = []
    for regime in config.regimes:
        for r in range(config.repetitions):
            cfg = TrainConfig(**{**config.train.to_dict(), "regime": regime, "seed": run_seed(config.base_seed, r, regime)})
            jobs.append((regime, r, cfg))
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        stems = [str(Path(checkpoint_dir) / f"{g.value}_r{r:03d}") for g, r, _ in jobs]
    else:
        stems = [None] * len(jobs)
    args = [(spec, train, test, cfg, stem) for (_, _, cfg), stem in zip(jobs, stems)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_one_run, args))
    else:
        results = [_one_run(a) for a in args]

    n_epochs = config.train.epochs + config.train.fine_tune_epochs
    report = AggregateReport(config)
    for regime in config.regimes:
        records, seeds, diverged = [], [], []
        for (g, r, cfg), rec in zip(jobs, results):
            if g is not regime:
                continue
            seeds.append(cfg.seed)
            if rec is None:
                diverged.append(r)
            else:
                records.append(rec)
        report.regimes[regime] = _aggregate_regime(regime, records, seeds, diverged, n_epochs)
    return report


# -- report files --------------------------------------------------------------


def curve_columns() -> list[str]:
    cols = ["epoch", "phase"]
    for m in METRICS:
        cols += [f"{m}_mean", f"{m}_std"]
    return cols


def emit_report(report: AggregateReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for regime, rep in report.regimes.items():
            path = out / f"curves_{regime.value}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(curve_columns())
                epochs_main = report.config.train.epochs
                for e, phase in enumerate(rep.phases):
                    epoch = e + 1 if phase == "main" else e - epochs_main + 1
                    row = [epoch, phase]
                    for m in METRICS:
                        means, stds = rep.curves[m]
                        row += [repr(means[e]), repr(stds[e])]
                    writer.writerow(row)
            written.append(path)
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(report.summary(), indent=2, sort_keys=True, allow_nan=False) + "\n")
        config_path = out / "config.json"
        config_path.write_text(json.dumps(report.config.to_dict(), indent=2, sort_keys=True) + "\n")
        return written + [summary_path, config_path]
    except OSError as exc:
        raise OSError(f"could not write report to {out}: {exc}") from exc


def load_summary(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def summary_table(summary: dict) -> str:
    """Plain-text table of mean (std) accuracies in percent."""
    lines = []
    for head in HEADS:
        lines.append(f"{head} head accuracy          train (%)            test (%)")
        for regime, rep in summary.items():
            cells = []
            for s in SPLITS:
                cell = rep["accuracy"][head][s]
                if cell["mean"] is None:
                    cells.append(f"{'diverged':>9} {'':10}")
                else:
                    cells.append(f"{100 * cell['mean']:9.4f} ({100 * cell['std']:.4f})")
            lines.append(f"  {regime:<18} " + "  ".join(cells))
    return "\n".join(lines)

