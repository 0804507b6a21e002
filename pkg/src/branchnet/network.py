"""Trunk-plus-branch topology, parameter initialisation and the forward pass.

Layout: a trunk of ReLU layers ``1..N`` ends in an affine+softmax final
head (fine labels).  A single branch head, affine+softmax, reads the
post-activation of trunk layer ``B`` (1-based) and predicts coarse labels.

Weights are stored ``(fan_in, fan_out)`` so a batch ``X`` (rows = items)
maps to ``X @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from branchnet import linalg
from branchnet.linalg import ContractViolation, Matrix, Vector

CHECKPOINT_FORMAT = "branchnet-checkpoint"
CHECKPOINT_VERSION = 1

# stream tag mixed into the seed so init never shares a stream with shuffling
_INIT_STREAM = 0x1A17


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    trunk_widths: tuple[int, ...]
    branch_tap: int
    final_classes: int
    branch_classes: int

    def __post_init__(self):
        object.__setattr__(self, "trunk_widths", tuple(int(w) for w in self.trunk_widths))
        if self.input_dim < 1 or any(w < 1 for w in self.trunk_widths):
            raise ContractViolation("all layer widths must be >= 1")
        if not self.trunk_widths:
            raise ContractViolation("at least one hidden layer is required")
        if not 1 <= self.branch_tap <= len(self.trunk_widths):
            raise ContractViolation(
                f"branch_tap {self.branch_tap} outside 1..{len(self.trunk_widths)}"
            )
        if self.final_classes < 2 or self.branch_classes < 2:
            raise ContractViolation("each head needs at least 2 classes")

    @classmethod
    def newsgroups_default(cls) -> "NetworkSpec":
        """1000 -> 300 -> 200 -> 200 -> 130 -> 20, branch of 5 classes off layer 1."""
        return cls(1000, (300, 200, 200, 130), 1, 20, 5)

    @property
    def depth(self) -> int:
        return len(self.trunk_widths)

    def trunk_shapes(self) -> list[tuple[int, int]]:
        """Weight shapes of trunk layers 1..N followed by the final head."""
        dims = [self.input_dim, *self.trunk_widths, self.final_classes]
        return list(zip(dims[:-1], dims[1:]))

    def branch_shape(self) -> tuple[int, int]:
        return (self.trunk_widths[self.branch_tap - 1], self.branch_classes)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "trunk_widths": list(self.trunk_widths),
            "branch_tap": self.branch_tap,
            "final_classes": self.final_classes,
            "branch_classes": self.branch_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(
            int(d["input_dim"]),
            tuple(d["trunk_widths"]),
            int(d["branch_tap"]),
            int(d["final_classes"]),
            int(d["branch_classes"]),
        )


@dataclass
class Parameters:
    """``trunk[i]`` is ``(W, b)`` for trunk layer ``i + 1``; the last entry is
    the final head.  ``branch`` is ``(W_H, b_H)``."""

    trunk: list[tuple[Matrix, Vector]]
    branch: tuple[Matrix, Vector]

    def blocks(self) -> list[np.ndarray]:
        """Flat view in canonical order: W1, b1, ..., W_{N+1}, b_{N+1}, W_H, b_H."""
        out = []
        for w, b in self.trunk:
            out += [w, b]
        out += list(self.branch)
        return out

    @classmethod
    def from_blocks(cls, blocks: list[np.ndarray]) -> "Parameters":
        *trunk_flat, wh, bh = blocks
        trunk = [(trunk_flat[i], trunk_flat[i + 1]) for i in range(0, len(trunk_flat), 2)]
        return cls(trunk, (wh, bh))

    def copy(self) -> "Parameters":
        return Parameters.from_blocks([b.copy() for b in self.blocks()])

    def check_shapes(self, spec: NetworkSpec) -> None:
        if len(self.trunk) != spec.depth + 1:
            raise ContractViolation(
                f"expected {spec.depth + 1} trunk blocks, got {len(self.trunk)}"
            )
        for (w, b), shape in zip(self.trunk, spec.trunk_shapes()):
            if w.shape != shape or b.shape != (shape[1],):
                raise ContractViolation(f"trunk block {w.shape}/{b.shape} != {shape}")
        wh, bh = self.branch
        if wh.shape != spec.branch_shape() or bh.shape != (spec.branch_classes,):
            raise ContractViolation(f"branch block {wh.shape} != {spec.branch_shape()}")


@dataclass
class ForwardTrace:
    """Everything the backward pass needs.

    ``pre[i]``/``post[i]`` belong to trunk layer ``i + 1``; ``inputs`` is the
    batch itself.  ``tap`` is the very same array object as
    ``post[branch_tap - 1]``.
    """

    inputs: Matrix
    pre: list[Matrix]
    post: list[Matrix]
    tap: Matrix
    final_logits: Matrix
    final_probs: Matrix
    branch_logits: Matrix
    branch_probs: Matrix


def init_params(spec: NetworkSpec, seed: int) -> Parameters:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases.

    Blocks are drawn in canonical order from a single seeded stream.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _INIT_STREAM]))

    def draw(fan_in: int, fan_out: int) -> Matrix:
        limit = np.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    trunk = [(draw(*shape), np.zeros(shape[1])) for shape in spec.trunk_shapes()]
    wh_shape = spec.branch_shape()
    branch = (draw(*wh_shape), np.zeros(wh_shape[1]))
    return Parameters(trunk, branch)


def zero_params(spec: NetworkSpec) -> Parameters:
    trunk = [(np.zeros(s), np.zeros(s[1])) for s in spec.trunk_shapes()]
    wh = spec.branch_shape()
    return Parameters(trunk, (np.zeros(wh), np.zeros(wh[1])))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: Matrix) -> Matrix:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / linalg.row_sums(e)[:, np.newaxis]


def affine(x: Matrix, w: Matrix, b: Vector) -> Matrix:
    return linalg.add_bias(linalg.matmul(x, w), b)


def forward(spec: NetworkSpec, params: Parameters, batch_inputs: Matrix) -> ForwardTrace:
    if batch_inputs.ndim != 2 or batch_inputs.shape[1] != spec.input_dim:
        raise ContractViolation(
            f"batch of shape {batch_inputs.shape} does not match input_dim {spec.input_dim}"
        )
    x = np.ascontiguousarray(batch_inputs, dtype=np.float64)
    pre, post = [], []
    h = x
    for w, b in params.trunk[:-1]:
        z = affine(h, w, b)
        h = relu(z)
        pre.append(z)
        post.append(h)
    wf, bf = params.trunk[-1]
    final_logits = affine(h, wf, bf)
    tap = post[spec.branch_tap - 1]
    wh, bh = params.branch
    branch_logits = affine(tap, wh, bh)
    return ForwardTrace(
        inputs=x,
        pre=pre,
        post=post,
        tap=tap,
        final_logits=final_logits,
        final_probs=softmax(final_logits),
        branch_logits=branch_logits,
        branch_probs=softmax(branch_logits),
    )


# -- checkpoints -------------------------------------------------------------
# JSON; Python's float repr is the shortest string that round-trips, so
# float64 values survive save/load bit-exactly.


def save_checkpoint(path: str | Path, spec: NetworkSpec, params: Parameters, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": spec.to_dict(),
        "trunk": [{"W": w.tolist(), "b": b.tolist()} for w, b in params.trunk],
        "branch": {"W": params.branch[0].tolist(), "b": params.branch[1].tolist()},
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[NetworkSpec, Parameters]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a branchnet checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    spec = NetworkSpec.from_dict(doc["spec"])

    def mat(rows, shape):
        # np.array([]) of an empty layer loses its shape; reshape restores it
        return np.array(rows, dtype=np.float64).reshape(shape)

    trunk = [
        (mat(layer["W"], shape), np.array(layer["b"], dtype=np.float64))
        for layer, shape in zip(doc["trunk"], spec.trunk_shapes())
    ]
    branch = (
        mat(doc["branch"]["W"], spec.branch_shape()),
        np.array(doc["branch"]["b"], dtype=np.float64),
    )
    params = Parameters(trunk, branch)
    params.check_shapes(spec)
    return spec, params
