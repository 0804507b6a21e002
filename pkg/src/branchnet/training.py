"""Minibatch SGD with classical momentum, the three regimes, fine-tuning and evaluation."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from branchnet import linalg
from branchnet.data import LabeledDataset
from branchnet.gradient import Gradients, backward, combine_shared, log_multinomial_loss
from branchnet.linalg import ContractViolation
from branchnet.network import NetworkSpec, Parameters, forward, init_params

log = logging.getLogger(__name__)

_SHUFFLE_STREAM = 0x5F1E
_PHASE_IDS = {"main": 0, "fine_tune": 1}


class Regime(str, enum.Enum):
    SIMULTANEOUS = "simultaneous"
    FINAL_ONLY = "final_only"
    HIDDEN_ONLY = "hidden_only"


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.05
    alpha: float = 0.5
    momentum_mu: float = 0.9
    batch_size: int = 256
    epochs: int = 100
    fine_tune_epochs: int = 20
    l2_lambda: float = 1e-4
    regime: Regime = Regime.SIMULTANEOUS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        if not self.eta > 0:
            raise ContractViolation("eta must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractViolation("alpha must be in [0, 1]")
        if not 0.0 <= self.momentum_mu < 1.0:
            raise ContractViolation("momentum_mu must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ContractViolation("batch_size must be >= 1 and epoch counts >= 0")
        if self.l2_lambda < 0:
            raise ContractViolation("l2_lambda must be >= 0")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["regime"] = self.regime.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class OptimizerState:
    velocity: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: Parameters) -> "OptimizerState":
        return cls([np.zeros_like(b) for b in params.blocks()])


METRICS = (
    "final_train_loss",
    "branch_train_loss",
    "final_train_acc",
    "branch_train_acc",
    "final_test_acc",
    "branch_test_acc",
)


@dataclass
class RunRecord:
    """One row per epoch, main phase first, then fine-tuning."""

    phases: list[str] = field(default_factory=list)
    series: dict[str, list[float]] = field(default_factory=lambda: {m: [] for m in METRICS})

    def append(self, phase: str, **values: float) -> None:
        self.phases.append(phase)
        for m in METRICS:
            self.series[m].append(float(values[m]))

    def extend(self, other: "RunRecord") -> None:
        self.phases += other.phases
        for m in METRICS:
            self.series[m] += other.series[m]

    def __len__(self) -> int:
        return len(self.phases)

    def last(self, metric: str) -> float:
        return self.series[metric][-1]

    def to_dict(self) -> dict:
        return {"phases": list(self.phases), "series": {m: list(v) for m, v in self.series.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(list(d["phases"]), {m: list(d["series"][m]) for m in METRICS})


def active_blocks(spec: NetworkSpec, regime: Regime | str) -> list[bool]:
    """Which canonical blocks (W1, b1, ..., W_H, b_H) a regime updates."""
    regime = Regime(regime)
    n_trunk = 2 * (spec.depth + 1)
    shared = 2 * spec.branch_tap
    if regime is Regime.SIMULTANEOUS:
        return [True] * (n_trunk + 2)
    if regime is Regime.FINAL_ONLY:
        return [True] * n_trunk + [False, False]
    return [i < shared for i in range(n_trunk)] + [True, True]


def fine_tune_blocks(spec: NetworkSpec) -> list[bool]:
    return [False] * (2 * (spec.depth + 1)) + [True, True]


def sgd_momentum_step(
    params: Parameters,
    state: OptimizerState,
    grads: Gradients,
    eta: float,
    mu: float,
    active: list[bool] | None = None,
) -> tuple[Parameters, OptimizerState]:
    """``v <- mu*v - eta*g``; ``theta <- theta + v`` on active blocks.

    Inactive blocks keep their parameter and velocity arrays untouched.
    """
    p_blocks, g_blocks = params.blocks(), grads.blocks()
    if active is None:
        active = [True] * len(p_blocks)
    if not (len(p_blocks) == len(g_blocks) == len(state.velocity) == len(active)):
        raise ContractViolation("parameter, gradient and velocity layouts differ")
    new_p, new_v = [], []
    for p, g, v, on in zip(p_blocks, g_blocks, state.velocity, active):
        if on:
            if p.shape != g.shape:
                raise ContractViolation(f"gradient block {g.shape} vs parameter {p.shape}")
            v = mu * v - eta * g
            p = p + v
        new_p.append(p)
        new_v.append(v)
    return Parameters.from_blocks(new_p), OptimizerState(new_v)


def epoch_order(n: int, seed: int, epoch: int, phase: str = "main") -> np.ndarray:
    """Batch order for one epoch; depends on (seed, phase, epoch) only, never on the regime."""
    ss = np.random.SeedSequence([int(seed), _SHUFFLE_STREAM, _PHASE_IDS[phase], int(epoch)])
    return np.random.default_rng(ss).permutation(n)


def _batches(n: int, batch_size: int):
    if batch_size > n:
        warnings.warn(f"batch_size {batch_size} exceeds dataset size {n}; using one full batch", stacklevel=3)
        batch_size = n
    for start in range(0, n, batch_size):
        yield slice(start, min(start + batch_size, n))


def _regime_gradients(spec, params, ds, idx, config: TrainConfig, regime: Regime, fine_tuning: bool):
    x = ds.inputs[idx]
    trace = forward(spec, params, x)
    gf, gb, losses = backward(spec, params, trace, ds.fine_labels[idx], ds.coarse_labels[idx], config.l2_lambda)
    if not (np.isfinite(losses.final_loss) and np.isfinite(losses.branch_loss)):
        raise DivergenceError(f"non-finite loss: {losses}")
    if fine_tuning or regime is Regime.HIDDEN_ONLY:
        grads = gb
    elif regime is Regime.FINAL_ONLY:
        grads = gf
    else:
        grads = combine_shared(gf, gb, config.alpha, spec.branch_tap)
    return grads, losses


def _run_epoch(spec, params, state, ds, config, epoch, phase):
    if ds.n == 0:
        raise ContractViolation("cannot train on an empty dataset")
    fine_tuning = phase == "fine_tune"
    active = fine_tune_blocks(spec) if fine_tuning else active_blocks(spec, config.regime)
    order = epoch_order(ds.n, config.seed, epoch, phase)
    final_sum = branch_sum = 0.0
    for sl in _batches(ds.n, config.batch_size):
        idx = order[sl]
        grads, losses = _regime_gradients(spec, params, ds, idx, config, config.regime, fine_tuning)
        params, state = sgd_momentum_step(params, state, grads, config.eta, config.momentum_mu, active)
        final_sum += losses.final_loss * len(idx)
        branch_sum += losses.branch_loss * len(idx)
    if not linalg.all_finite(*params.blocks()):
        raise DivergenceError(f"non-finite parameters after {phase} epoch {epoch}")
    return params, state, {"final_loss": final_sum / ds.n, "branch_loss": branch_sum / ds.n}


def train_epoch(spec, params, state, dataset: LabeledDataset, config: TrainConfig, epoch: int = 0):
    """One main-phase epoch under ``config.regime``.

    Returns ``(params, state, metrics)`` where metrics holds the
    example-weighted mean minibatch losses seen during the epoch.
    """
    return _run_epoch(spec, params, state, dataset, config, epoch, "main")


def evaluate(spec: NetworkSpec, params: Parameters, dataset: LabeledDataset) -> tuple[float, float, float, float]:
    """``(final_acc, branch_acc, final_loss, branch_loss)``.

    Losses are the plain log multinomial losses (no L2 term); argmax ties
    go to the lowest class index.
    """
    if dataset.n == 0:
        raise ContractViolation("cannot evaluate on an empty dataset")
    trace = forward(spec, params, dataset.inputs)
    final_pred = np.argmax(trace.final_probs, axis=1)
    branch_pred = np.argmax(trace.branch_probs, axis=1)
    return (
        float(np.mean(final_pred == dataset.fine_labels)),
        float(np.mean(branch_pred == dataset.coarse_labels)),
        log_multinomial_loss(trace.final_probs, dataset.fine_labels),
        log_multinomial_loss(trace.branch_probs, dataset.coarse_labels),
    )


def _record_epoch(record, phase, spec, params, train, test):
    f_acc, b_acc, f_loss, b_loss = evaluate(spec, params, train)
    if test is not None and test.n:
        tf_acc, tb_acc, _, _ = evaluate(spec, params, test)
    else:
        tf_acc = tb_acc = float("nan")
    if not (np.isfinite(f_loss) and np.isfinite(b_loss)):
        raise DivergenceError(f"non-finite evaluation loss in {phase}")
    record.append(
        phase,
        final_train_loss=f_loss,
        branch_train_loss=b_loss,
        final_train_acc=f_acc,
        branch_train_acc=b_acc,
        final_test_acc=tf_acc,
        branch_test_acc=tb_acc,
    )


def fine_tune(spec, params, state, dataset: LabeledDataset, config: TrainConfig, test: LabeledDataset | None = None):
    """Train only ``(W_H, b_H)`` on the branch cost for ``config.fine_tune_epochs``.

    The optimizer state is carried over from the main phase, so the branch
    head keeps whatever velocity it had (zero after FinalOnly).
    """
    record = RunRecord()
    for epoch in range(config.fine_tune_epochs):
        params, state, _ = _run_epoch(spec, params, state, dataset, config, epoch, "fine_tune")
        _record_epoch(record, "fine_tune", spec, params, dataset, test)
    return params, state, record


@dataclass
class RunResult:
    params_main: Parameters
    params: Parameters
    record: RunRecord


def train_run(
    spec: NetworkSpec,
    train: LabeledDataset,
    test: LabeledDataset | None,
    config: TrainConfig,
    params: Parameters | None = None,
) -> RunResult:
    """Main phase followed by fine-tuning, recording metrics after every epoch."""
    if params is None:
        params = init_params(spec, config.seed)
    params.check_shapes(spec)
    state = OptimizerState.zeros_like(params)
    record = RunRecord()
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            params, state, _ = train_epoch(spec, params, state, train, config, epoch)
            _record_epoch(record, "main", spec, params, train, test)
        params_main = params
        params, state, tuned = fine_tune(spec, params, state, train, config, test)
    record.extend(tuned)
    log.debug("run %s seed=%d done: %s", config.regime.value, config.seed, {m: record.last(m) for m in METRICS})
    return RunResult(params_main, params, record)


def with_regime(config: TrainConfig, regime: Regime | str, **changes) -> TrainConfig:
    return replace(config, regime=Regime(regime), **changes)
