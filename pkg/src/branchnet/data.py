"""Labelled datasets, the fine-to-coarse hierarchy, file I/O and splitting.

Labels are 0-based throughout.

Dataset file format (UTF-8, LF)::

    HDS1 <n> <dim> <fine_count> <coarse_count>
    <fine> <coarse|-> <x_1> ... <x_dim>      # n lines

A ``-`` coarse label is filled in from a :class:`HierarchyMap`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from branchnet.linalg import ContractViolation

FILE_MAGIC = "HDS1"

_SPLIT_STREAM = 0x5B1D
_SYNTH_STREAM = 0x5E7D

# 20 Newsgroups topics in fine-label order, grouped into 5 primitive classes
NEWSGROUPS_TOPICS: tuple[tuple[str, ...], ...] = (
    ("comp.graphics", "comp.os.ms-windows.misc", "comp.sys.ibm.pc.hardware",
     "comp.sys.mac.hardware", "comp.windows.x"),
    ("rec.autos", "rec.motorcycles", "rec.sport.baseball", "rec.sport.hockey"),
    ("sci.crypt", "sci.electronics", "sci.med", "sci.space"),
    ("talk.politics.guns", "talk.politics.mideast", "talk.politics.misc",
     "talk.religion.misc"),
    ("alt.atheism", "misc.forsale", "soc.religion.christian"),
)


class DatasetFormatError(ValueError):
    """A dataset file could not be parsed; carries the 1-based line number."""

    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


class DatasetValidationError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchyMap:
    fine_to_coarse: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "fine_to_coarse", tuple(int(c) for c in self.fine_to_coarse))
        if not self.fine_to_coarse:
            raise ContractViolation("hierarchy must map at least one fine class")
        if min(self.fine_to_coarse) < 0:
            raise ContractViolation("coarse indices must be >= 0")
        missing = set(range(self.coarse_count)) - set(self.fine_to_coarse)
        if missing:
            raise ContractViolation(f"coarse classes without any fine class: {sorted(missing)}")

    @property
    def fine_count(self) -> int:
        return len(self.fine_to_coarse)

    @property
    def coarse_count(self) -> int:
        return max(self.fine_to_coarse) + 1

    def coarse_of(self, fine_labels) -> np.ndarray:
        return np.asarray(self.fine_to_coarse, dtype=np.int64)[np.asarray(fine_labels, dtype=np.int64)]

    def group_sizes(self) -> list[int]:
        return [self.fine_to_coarse.count(c) for c in range(self.coarse_count)]


def newsgroups_hierarchy() -> HierarchyMap:
    return HierarchyMap(tuple(c for c, topics in enumerate(NEWSGROUPS_TOPICS) for _ in topics))


def newsgroups_topic_names() -> list[str]:
    return [t for group in NEWSGROUPS_TOPICS for t in group]


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray
    fine_labels: np.ndarray
    coarse_labels: np.ndarray
    fine_count: int
    coarse_count: int
    hierarchy: HierarchyMap | None = None

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        fine = np.asarray(self.fine_labels, dtype=np.int64)
        coarse = np.asarray(self.coarse_labels, dtype=np.int64)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "fine_labels", fine)
        object.__setattr__(self, "coarse_labels", coarse)
        if inputs.ndim != 2:
            raise DatasetValidationError("inputs must be a 2-D array")
        n = inputs.shape[0]
        if fine.shape != (n,) or coarse.shape != (n,):
            raise DatasetValidationError("label arrays must have one entry per row")
        if n and (fine.min() < 0 or fine.max() >= self.fine_count):
            raise DatasetValidationError(f"fine label outside 0..{self.fine_count - 1}")
        if n and (coarse.min() < 0 or coarse.max() >= self.coarse_count):
            raise DatasetValidationError(f"coarse label outside 0..{self.coarse_count - 1}")
        if self.hierarchy is not None:
            if (self.hierarchy.fine_count, self.hierarchy.coarse_count) != (self.fine_count, self.coarse_count):
                raise DatasetValidationError("hierarchy class counts do not match the dataset")
            if not np.array_equal(self.hierarchy.coarse_of(fine), coarse):
                raise DatasetValidationError("coarse labels disagree with the hierarchy")
        else:
            _check_functional(fine, coarse)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(
            self.inputs[idx], self.fine_labels[idx], self.coarse_labels[idx],
            self.fine_count, self.coarse_count, self.hierarchy,
        )


def _check_functional(fine: np.ndarray, coarse: np.ndarray) -> None:
    seen: dict[int, int] = {}
    for f, c in zip(fine.tolist(), coarse.tolist()):
        if seen.setdefault(f, c) != c:
            raise DatasetValidationError(f"fine class {f} appears under coarse classes {seen[f]} and {c}")


def load_dataset(path: str | Path, hierarchy: HierarchyMap | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="\n") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 5 or parts[0] != FILE_MAGIC:
            raise DatasetFormatError(path, 1, f"expected '{FILE_MAGIC} <n> <dim> <fine_count> <coarse_count>'")
        try:
            n, dim, fine_count, coarse_count = (int(p) for p in parts[1:])
        except ValueError:
            raise DatasetFormatError(path, 1, "header counts must be integers") from None
        if min(n, dim) < 0 or min(fine_count, coarse_count) < 1:
            raise DatasetFormatError(path, 1, "header counts out of range")

        inputs = np.empty((n, dim))
        fine = np.empty(n, dtype=np.int64)
        coarse = np.empty(n, dtype=np.int64)
        derive = np.zeros(n, dtype=bool)
        for i in range(n):
            line_no = i + 2
            line = fh.readline()
            if not line:
                raise DatasetFormatError(path, line_no, f"file ends after {i} of {n} rows")
            fields = line.split()
            if len(fields) != dim + 2:
                raise DatasetFormatError(path, line_no, f"expected {dim + 2} fields, got {len(fields)}")
            try:
                fine[i] = int(fields[0])
                if fields[1] == "-":
                    derive[i] = True
                    coarse[i] = 0
                else:
                    coarse[i] = int(fields[1])
                inputs[i] = [float(v) for v in fields[2:]]
            except ValueError as exc:
                raise DatasetFormatError(path, line_no, str(exc)) from None
            if not np.isfinite(inputs[i]).all():
                raise DatasetFormatError(path, line_no, "non-finite input value")
            if not 0 <= fine[i] < fine_count:
                raise DatasetValidationError(f"{path}:{line_no}: fine label {fine[i]} outside 0..{fine_count - 1}")
            if not derive[i] and not 0 <= coarse[i] < coarse_count:
                raise DatasetValidationError(f"{path}:{line_no}: coarse label {coarse[i]} outside 0..{coarse_count - 1}")
        if fh.read().strip():
            raise DatasetFormatError(path, n + 2, "trailing content after the declared rows")

    if derive.any():
        if hierarchy is None:
            raise DatasetValidationError(f"{path}: rows use '-' but no hierarchy was supplied")
        coarse[derive] = hierarchy.coarse_of(fine[derive])
    return LabeledDataset(inputs, fine, coarse, fine_count, coarse_count, hierarchy)


def save_dataset(path: str | Path, ds: LabeledDataset, derive_coarse: bool = False) -> None:
    """Write ``ds`` in HDS1 format; floats use repr so they reload bit-exactly."""
    lines = [f"{FILE_MAGIC} {ds.n} {ds.dim} {ds.fine_count} {ds.coarse_count}"]
    for x, f, c in zip(ds.inputs.tolist(), ds.fine_labels.tolist(), ds.coarse_labels.tolist()):
        coarse = "-" if derive_coarse else str(c)
        lines.append(" ".join([str(f), coarse, *map(repr, x)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def split(ds: LabeledDataset, train_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Seeded shuffled split into ``round(n * train_fraction)`` and the rest."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractViolation(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SPLIT_STREAM]))
    order = rng.permutation(ds.n)
    n_train = int(round(ds.n * train_fraction))
    return ds.subset(np.sort(order[:n_train])), ds.subset(np.sort(order[n_train:]))


@dataclass(frozen=True)
class SynthConfig:
    """Nested Gaussian mixture: coarse centres, fine sub-centres, samples.

    ``sigma_coarse`` and ``sigma_fine`` are the RMS *norms* of a centre and
    of a sub-centre offset (per-coordinate std is sigma / sqrt(dim)), so
    they set the geometry independently of ``dim``.  ``sigma_noise`` is the
    per-coordinate std of the sample noise.
    """

    coarse_count: int = 5
    fines_per_coarse: int = 4
    dim: int = 100
    n: int = 5000
    sigma_coarse: float = 3.0
    sigma_fine: float = 1.0
    sigma_noise: float = 0.5

    def __post_init__(self):
        if self.coarse_count < 2 or self.fines_per_coarse < 2:
            raise ContractViolation("need >= 2 coarse classes and >= 2 fine classes per coarse class")
        if self.dim < self.coarse_count * self.fines_per_coarse:
            raise ContractViolation("dim must be >= coarse_count * fines_per_coarse")
        if self.n < 1:
            raise ContractViolation("n must be >= 1")
        if not 0.0 <= self.sigma_fine < self.sigma_coarse:
            raise ContractViolation("need 0 <= sigma_fine < sigma_coarse")
        if self.sigma_noise < 0.0:
            raise ContractViolation("sigma_noise must be >= 0")

    @property
    def fine_count(self) -> int:
        return self.coarse_count * self.fines_per_coarse

    def hierarchy(self) -> HierarchyMap:
        return HierarchyMap(tuple(f // self.fines_per_coarse for f in range(self.fine_count)))

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SyntheticMixture:
    dataset: LabeledDataset
    coarse_centers: np.ndarray
    fine_centers: np.ndarray


def generate_mixture(cfg: SynthConfig, seed: int) -> SyntheticMixture:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SYNTH_STREAM]))
    coord = 1.0 / np.sqrt(cfg.dim)
    coarse_centers = rng.normal(0.0, cfg.sigma_coarse * coord, size=(cfg.coarse_count, cfg.dim))
    offsets = rng.normal(0.0, cfg.sigma_fine * coord, size=(cfg.fine_count, cfg.dim))
    hierarchy = cfg.hierarchy()
    fine_centers = coarse_centers[hierarchy.coarse_of(np.arange(cfg.fine_count))] + offsets
    # balanced: every fine class gets n // fine_count or one more samples
    fine = rng.permutation(np.arange(cfg.n) % cfg.fine_count)
    inputs = fine_centers[fine] + rng.normal(0.0, cfg.sigma_noise, size=(cfg.n, cfg.dim))
    ds = LabeledDataset(inputs, fine, hierarchy.coarse_of(fine), cfg.fine_count, cfg.coarse_count, hierarchy)
    return SyntheticMixture(ds, coarse_centers, fine_centers)


def generate_synthetic(cfg: SynthConfig, seed: int) -> LabeledDataset:
    return generate_mixture(cfg, seed).dataset
