"""The 42-value feature vector, its CSV form, and z-score normalization."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyProtein, InsufficientData, KeyMismatch, SchemaError
from .structure_io import LABELS, STANDARD_RESIDUES, ProteinStructure
from .surface import SurfaceClassification

__all__ = [
    "FEATURE_NAMES",
    "FeatureVector",
    "Normalizer",
    "overall_composition",
    "surface_composition",
    "assemble_features",
    "disassemble_features",
    "fit_normalizer",
    "apply_normalizer",
    "write_feature_csv",
    "read_feature_csv",
]

FEATURE_NAMES: tuple[str, ...] = (
    ("overall_charge", "largest_patch_size")
    + tuple(f"overall_comp_{r}" for r in STANDARD_RESIDUES)
    + tuple(f"surface_comp_{r}" for r in STANDARD_RESIDUES)
)
N_FEATURES = len(FEATURE_NAMES)
_RESIDUE_INDEX = {r: i for i, r in enumerate(STANDARD_RESIDUES)}


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    label: str | None = None
    source_id: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError(f"{self.source_id}: non-finite feature value")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (self.label == other.label and self.source_id == other.source_id
                and np.array_equal(self.values, other.values))

    def with_values(self, values) -> "FeatureVector":
        return FeatureVector(values, self.label, self.source_id)


def _composition(residue_names: Iterable[str]) -> np.ndarray:
    counts = np.zeros(len(STANDARD_RESIDUES))
    for name in residue_names:
        idx = _RESIDUE_INDEX.get(name)
        if idx is not None:
            counts[idx] += 1
    total = counts.sum()
    if total == 0:
        return counts
    return counts * (100.0 / total)


def overall_composition(structure: ProteinStructure) -> np.ndarray:
    """Percentage of each standard residue over all standard residues."""
    block = _composition(r.residue_name for r in structure.residues())
    if not block.any():
        raise EmptyProtein(f"{structure.id}: no standard residues")
    return block


def surface_composition(
    structure: ProteinStructure, classification: SurfaceClassification
) -> tuple[np.ndarray, bool]:
    """Composition over surface residues only.

    Returns the 20-value block and a flag that is True when no standard
    residue is on the surface (the block is then all zero).
    """
    keys = {r.key for r in structure.residues() if r.is_standard}
    classified = set(classification.surface) | set(classification.buried)
    missing = keys - classified
    if missing:
        raise KeyMismatch(f"{len(missing)} residues unclassified, e.g. {sorted(missing)[0]}")
    extra = classified - {r.key for r in structure.residues()}
    if extra:
        raise KeyMismatch(f"{len(extra)} classified residues absent from structure")
    block = _composition(
        r.residue_name for r in structure.residues() if r.key in classification.surface
    )
    return block, not block.any()


def assemble_features(
    charge: float,
    patch_size: int,
    overall: Sequence[float],
    surface: Sequence[float],
    label: str | None = None,
    source_id: str = "",
) -> FeatureVector:
    overall = np.asarray(overall, dtype=float).reshape(-1)
    surface = np.asarray(surface, dtype=float).reshape(-1)
    if len(overall) != 20 or len(surface) != 20:
        raise SchemaError(
            f"composition blocks must have 20 values, got {len(overall)} and {len(surface)}"
        )
    values = np.concatenate([[float(charge), float(patch_size)], overall, surface])
    return FeatureVector(values, label, source_id)


def disassemble_features(vector: FeatureVector) -> tuple[float, int, np.ndarray, np.ndarray]:
    v = vector.values
    if len(v) != N_FEATURES:
        raise SchemaError(f"expected {N_FEATURES} values, got {len(v)}")
    return float(v[0]), int(v[1]), v[2:22].copy(), v[22:42].copy()


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-feature mean and (population) standard deviation of the training rows."""

    mean: np.ndarray
    std: np.ndarray
    names: tuple[str, ...] = field(default=FEATURE_NAMES)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))

    @classmethod
    def identity(cls, n: int = N_FEATURES, names: tuple[str, ...] = FEATURE_NAMES) -> "Normalizer":
        return cls(np.zeros(n), np.ones(n), names)

    def transform(self, values) -> np.ndarray:
        x = np.asarray(values, dtype=float)
        if x.shape[-1] != len(self.mean):
            raise SchemaError(f"expected {len(self.mean)} features, got {x.shape[-1]}")
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (x - self.mean) / safe, 0.0)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]), tuple(d["names"]))


def fit_normalizer(rows: Sequence[FeatureVector]) -> Normalizer:
    if len(rows) < 2:
        raise InsufficientData("normalizer needs at least 2 rows")
    X = np.stack([r.values for r in rows])
    n = X.shape[1]
    names = FEATURE_NAMES if n == N_FEATURES else tuple(f"f{i}" for i in range(n))
    return Normalizer(X.mean(axis=0), X.std(axis=0), names)


def apply_normalizer(normalizer: Normalizer, row: FeatureVector) -> FeatureVector:
    return row.with_values(normalizer.transform(row.values))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_feature_csv(rows: Iterable[FeatureVector], fh=None, names=FEATURE_NAMES) -> str:
    """Serialize rows as ``source_id,label,<feature names>``; returns the text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source_id", "label", *names])
    for row in rows:
        writer.writerow([row.source_id, row.label or "", *(repr(float(v)) for v in row.values)])
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_feature_csv(text: str, require_labels: bool = False,
                     names: Sequence[str] | None = FEATURE_NAMES) -> list[FeatureVector]:
    """Parse feature CSV text.

    ``names`` fixes the expected feature columns; pass None to accept any
    columns after ``source_id,label``. Raises :class:`SchemaError` on a column
    mismatch and ``ValueError`` on missing labels when ``require_labels``.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("empty feature file") from None
    if header[:2] != ["source_id", "label"]:
        raise SchemaError("feature CSV must start with source_id,label")
    if names is not None and tuple(header[2:]) != tuple(names):
        raise SchemaError(
            f"feature columns do not match the schema ({len(header) - 2} columns, "
            f"expected {len(names)})"
        )
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: {len(rec)} fields, expected {len(header)}")
        label = rec[1].strip() or None
        if require_labels and label is None:
            raise ValueError(f"line {lineno}: missing label")
        values = [float(v) for v in rec[2:]]
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"line {lineno}: non-finite value")
        rows.append(FeatureVector(values, label, rec[0]))
    return rows
