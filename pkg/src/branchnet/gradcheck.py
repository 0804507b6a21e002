"""Central finite-difference check of the analytic gradients.

The numeric side has its own forward pass and loss, evaluated in
``np.longdouble`` so that roundoff in the difference quotient stays well
below the tolerance even for gradient entries near 1e-7.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from branchnet.gradient import backward
from branchnet.network import NetworkSpec, Parameters, forward

# below this magnitude the difference quotient's own error (truncation
# h^2 C'''/6 ~ 1e-13 at h = 1e-6) would dominate a pure relative error
REL_ERROR_FLOOR = 1e-7


def block_names(spec: NetworkSpec) -> list[str]:
    names = []
    for i in range(1, spec.depth + 2):
        names += [f"W{i}", f"b{i}"]
    return names + ["W_H", "b_H"]


def _oracle_forward(spec: NetworkSpec, blocks: list[np.ndarray], x: np.ndarray):
    """Plain numpy forward pass in extended precision, independent of the
    float64 production path."""
    h = x.astype(np.longdouble)
    n_trunk = spec.depth + 1
    for i in range(spec.depth):
        h = np.maximum(h @ blocks[2 * i] + blocks[2 * i + 1], 0)
        if i + 1 == spec.branch_tap:
            tap = h
    final_logits = h @ blocks[2 * n_trunk - 2] + blocks[2 * n_trunk - 1]
    branch_logits = tap @ blocks[-2] + blocks[-1]
    return final_logits, branch_logits


def _oracle_nll(logits, labels) -> np.longdouble:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    return -(shifted[np.arange(len(labels)), labels] - log_norm).mean()


def cost_final(spec, blocks, x, fine, coarse, l2_lambda):
    return _oracle_nll(_oracle_forward(spec, blocks, x)[0], fine)


def cost_branch(spec, blocks, x, fine, coarse, l2_lambda):
    penalty = np.longdouble(l2_lambda) * (blocks[0] ** 2).sum()
    return _oracle_nll(_oracle_forward(spec, blocks, x)[1], coarse) + penalty


def numeric_gradient(cost, spec, params: Parameters, x, fine, coarse, l2_lambda, h=1e-6) -> list[np.ndarray]:
    """Central differences ``(C(t + h) - C(t - h)) / 2h`` for every entry."""
    blocks = [b.astype(np.longdouble) for b in params.blocks()]
    h = np.longdouble(h)
    out = []
    for block in blocks:
        g = np.zeros(block.shape)
        flat, gflat = block.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = cost(spec, blocks, x, fine, coarse, l2_lambda)
            flat[j] = orig - h
            down = cost(spec, blocks, x, fine, coarse, l2_lambda)
            flat[j] = orig
            gflat[j] = float((up - down) / (2 * h))
        out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_ERROR_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` entrywise.

    The floor only matters for entries that are essentially zero (e.g. a
    float64 cancellation residue of 1e-27 against an exact 0); for those the
    test amounts to an absolute error bound of ``1e-5 * floor``.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    per_block: dict[str, dict[str, float]]  # cost -> block -> max rel error

    @property
    def worst(self) -> tuple[str, str, float]:
        return max(
            ((c, b, e) for c, blocks in self.per_block.items() for b, e in blocks.items()),
            key=lambda t: t[2],
        )


def kink_margin(spec: NetworkSpec, params: Parameters, x: np.ndarray) -> float:
    """Smallest |pre-activation|; a step of h crosses a ReLU kink if below h."""
    return float(min(np.abs(z).min() for z in forward(spec, params, x).pre))


def random_problem(seed: int, spec: NetworkSpec | None = None, batch: int = 6):
    """Small net with every parameter (biases included) drawn at random."""
    spec = spec or NetworkSpec(5, (4,), 1, 3, 2)
    rng = np.random.default_rng(seed)
    trunk = [(rng.normal(0, 0.8, s), rng.normal(0, 0.3, s[1])) for s in spec.trunk_shapes()]
    wh = spec.branch_shape()
    params = Parameters(trunk, (rng.normal(0, 0.8, wh), rng.normal(0, 0.3, wh[1])))
    x = rng.normal(0, 1, (batch, spec.input_dim))
    fine = rng.integers(0, spec.final_classes, batch)
    coarse = rng.integers(0, spec.branch_classes, batch)
    return spec, params, x, fine, coarse


def check_gradients(seed: int, spec: NetworkSpec | None = None, l2_lambda: float = 0.05, h: float = 1e-6) -> GradCheckResult:
    spec, params, x, fine, coarse = random_problem(seed, spec)
    trace = forward(spec, params, x)
    gf, gb, _ = backward(spec, params, trace, fine, coarse, l2_lambda)
    names = block_names(spec)
    per_block: dict[str, dict[str, float]] = {}
    for label, cost, grads in (("final", cost_final, gf), ("branch", cost_branch, gb)):
        numeric = numeric_gradient(cost, spec, params, x, fine, coarse, l2_lambda, h)
        per_block[label] = {
            name: float(relative_error(a, n).max()) if a.size else 0.0
            for name, a, n in zip(names, grads.blocks(), numeric)
        }
    worst = max(e for blocks in per_block.values() for e in blocks.values())
    return GradCheckResult(seed, worst, per_block)
