"""Losses, backpropagation through both heads, and the shared-layer blend.

Two costs are differentiated separately:

* ``C_F``: mean log multinomial loss of the final head on fine labels.
* ``C_H``: mean log multinomial loss of the branch head on coarse labels,
  plus ``l2_lambda * ||W_1||^2`` on the first trunk layer's weights.

Gradients come back in the same block layout as
:class:`~branchnet.network.Parameters`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from branchnet import linalg
from branchnet.linalg import ContractViolation, Matrix
from branchnet.network import ForwardTrace, NetworkSpec, Parameters

PROB_FLOOR = 1e-12


class Source(enum.Enum):
    FINAL = "final"
    BRANCH = "branch"
    COMBINED = "combined"


@dataclass
class Gradients:
    trunk: list[tuple[Matrix, np.ndarray]]
    branch: tuple[Matrix, np.ndarray]
    source: Source

    def blocks(self) -> list[np.ndarray]:
        out = []
        for w, b in self.trunk:
            out += [w, b]
        out += list(self.branch)
        return out

    @classmethod
    def from_blocks(cls, blocks: list[np.ndarray], source: Source) -> "Gradients":
        params = Parameters.from_blocks(blocks)
        return cls(params.trunk, params.branch, source)


@dataclass(frozen=True)
class LossPair:
    final_loss: float
    branch_loss: float  # includes l2_term
    l2_term: float


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n_rows,):
        raise ContractViolation(f"expected {n_rows} labels, got shape {labels.shape}")
    if n_rows and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractViolation(f"label outside 0..{n_classes - 1}")
    return labels


def log_multinomial_loss(probs: Matrix, labels) -> float:
    """Mean of ``-ln p[true class]`` over the batch, with ``p`` floored at 1e-12."""
    labels = _check_labels(labels, probs.shape[0], probs.shape[1])
    picked = probs[np.arange(len(labels)), labels]
    return linalg.total(-np.log(np.maximum(picked, PROB_FLOOR))) / len(labels)


def l2_penalty(params: Parameters, l2_lambda: float) -> float:
    w1 = params.trunk[0][0]
    return l2_lambda * linalg.total(w1 * w1)


def _head_delta(probs: Matrix, labels: np.ndarray) -> Matrix:
    # d(mean CE)/d(logits) for softmax outputs
    delta = probs.copy()
    delta[np.arange(len(labels)), labels] -= 1.0
    return delta / len(labels)


def _backprop_trunk(
    params: Parameters,
    trace: ForwardTrace,
    grad_post: Matrix,
    top: int,
) -> list[tuple[Matrix, np.ndarray]]:
    """Push ``dC/d(post-activation of layer top)`` down to layer 1.

    Returns gradients for trunk layers ``1..top`` (index 0 is layer 1).
    """
    grads: list[tuple[Matrix, np.ndarray]] = [None] * top  # type: ignore[list-item]
    g = grad_post
    for layer in range(top, 0, -1):
        delta = g * (trace.pre[layer - 1] > 0.0)
        below = trace.inputs if layer == 1 else trace.post[layer - 2]
        grads[layer - 1] = (
            linalg.matmul(linalg.transpose(below), delta),
            linalg.column_sums(delta),
        )
        if layer > 1:
            g = linalg.matmul(delta, linalg.transpose(params.trunk[layer - 1][0]))
    return grads


def backward(
    spec: NetworkSpec,
    params: Parameters,
    trace: ForwardTrace,
    fine_labels,
    coarse_labels,
    l2_lambda: float,
) -> tuple[Gradients, Gradients, LossPair]:
    n = trace.inputs.shape[0]
    fine = _check_labels(fine_labels, n, spec.final_classes)
    coarse = _check_labels(coarse_labels, n, spec.branch_classes)
    depth, tap = spec.depth, spec.branch_tap

    # final cost: head, then every trunk layer
    delta_f = _head_delta(trace.final_probs, fine)
    wf = params.trunk[-1][0]
    final_head = (
        linalg.matmul(linalg.transpose(trace.post[-1]), delta_f),
        linalg.column_sums(delta_f),
    )
    g_top = linalg.matmul(delta_f, linalg.transpose(wf))
    trunk_f = _backprop_trunk(params, trace, g_top, depth) + [final_head]
    wh, bh = params.branch
    grads_final = Gradients(trunk_f, (np.zeros_like(wh), np.zeros_like(bh)), Source.FINAL)

    # branch cost: branch head, then layers tap..1; nothing above the tap
    delta_h = _head_delta(trace.branch_probs, coarse)
    branch_head = (
        linalg.matmul(linalg.transpose(trace.tap), delta_h),
        linalg.column_sums(delta_h),
    )
    g_tap = linalg.matmul(delta_h, linalg.transpose(wh))
    shared_h = _backprop_trunk(params, trace, g_tap, tap)
    w1 = params.trunk[0][0]
    if l2_lambda:
        dw1, db1 = shared_h[0]
        shared_h[0] = (dw1 + (2.0 * l2_lambda) * w1, db1)
    above = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params.trunk[tap:]]
    grads_branch = Gradients(shared_h + above, branch_head, Source.BRANCH)

    l2_term = l2_penalty(params, l2_lambda)
    losses = LossPair(
        final_loss=log_multinomial_loss(trace.final_probs, fine),
        branch_loss=log_multinomial_loss(trace.branch_probs, coarse) + l2_term,
        l2_term=l2_term,
    )
    return grads_final, grads_branch, losses


def combine_shared(gf: Gradients, gb: Gradients, alpha: float, tap: int) -> Gradients:
    """``alpha * gf + (1 - alpha) * gb`` on layers ``1..tap``; ``gf`` above the
    tap; ``gb`` on the branch head."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must lie in [0, 1], got {alpha}")
    if len(gf.trunk) != len(gb.trunk):
        raise ContractViolation("gradient layouts differ")
    trunk = []
    for i, ((wf, bf), (wb, bb)) in enumerate(zip(gf.trunk, gb.trunk)):
        if wf.shape != wb.shape or bf.shape != bb.shape:
            raise ContractViolation(f"layer {i + 1}: gradient shapes differ")
        if i < tap:
            trunk.append((alpha * wf + (1.0 - alpha) * wb, alpha * bf + (1.0 - alpha) * bb))
        else:
            trunk.append((wf, bf))
    return Gradients(trunk, gb.branch, Source.COMBINED)
