"""Solvent-accessible surface, surface-residue classification and positive patches."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .electrostatics import ChargedAtomSet
from .errors import ReferenceMiss

__all__ = [
    "SasaResult",
    "SurfaceClassification",
    "Patch",
    "UnionFind",
    "sphere_points",
    "compute_sasa",
    "load_reference_max",
    "classify_surface_residues",
    "surface_atom_indices",
    "detect_patches",
    "largest_patch_size",
    "format_patch_report",
]


@dataclass(frozen=True)
class SasaResult:
    per_atom_area: np.ndarray
    per_residue_area: Mapping[tuple, float]
    probe_radius: float
    points_per_atom: int
    residue_names: Mapping[tuple, str] = None

    @property
    def total(self) -> float:
        return float(self.per_atom_area.sum())


@dataclass(frozen=True)
class SurfaceClassification:
    surface: frozenset
    buried: frozenset
    relative_accessibility: Mapping[tuple, float]


@dataclass(frozen=True)
class Patch:
    atom_indices: frozenset[int]
    size: int
    mean_potential: float


def sphere_points(n: int) -> np.ndarray:
    """``n`` near-uniform points on the unit sphere (golden-section spiral)."""
    k = np.arange(n, dtype=float)
    inc = math.pi * (3.0 - math.sqrt(5.0))
    offset = 2.0 / n
    y = k * offset - 1.0 + offset / 2.0
    r = np.sqrt(1.0 - y * y)
    phi = k * inc
    return np.stack([np.cos(phi) * r, y, np.sin(phi) * r], axis=1)


def compute_sasa(
    atom_set: ChargedAtomSet,
    probe_radius: float = 1.4,
    points_per_atom: int = 960,
) -> SasaResult:
    """Shrake-Rupley accessible area of each atom.

    A test point on atom i's expanded sphere (radius r_i + probe) is accessible
    when it lies outside every other atom's expanded sphere. Per-residue areas
    are keyed by the residue key of ``atom_set.atoms`` (empty when the set has
    no source records).
    """
    if points_per_atom < 92:
        raise ValueError("points_per_atom must be at least 92")
    n = len(atom_set)
    areas = np.zeros(n)
    if n:
        unit = sphere_points(points_per_atom)
        centers = atom_set.positions
        expanded = atom_set.radii + probe_radius
        tree = cKDTree(centers)
        for i in range(n):
            neighbors = [j for j in tree.query_ball_point(centers[i], expanded[i] + expanded.max())
                         if j != i]
            pts = centers[i] + expanded[i] * unit
            if neighbors:
                nb = np.asarray(neighbors)
                nb = nb[np.linalg.norm(centers[nb] - centers[i], axis=1)
                        < expanded[i] + expanded[nb]]
            else:
                nb = np.zeros(0, dtype=int)
            if len(nb):
                d2 = ((pts[:, None, :] - centers[nb][None, :, :]) ** 2).sum(axis=-1)
                buried = (d2 < (expanded[nb] ** 2)[None, :]).any(axis=1)
                fraction = 1.0 - buried.mean()
            else:
                fraction = 1.0
            areas[i] = 4.0 * math.pi * expanded[i] ** 2 * fraction

    per_residue: dict[tuple, float] = {}
    names: dict[tuple, str] = {}
    for atom, area in zip(atom_set.atoms, areas):
        key = atom.residue_key
        per_residue[key] = per_residue.get(key, 0.0) + float(area)
        names[key] = atom.residue_name
    areas.setflags(write=False)
    return SasaResult(areas, per_residue, probe_radius, points_per_atom, names)


def load_reference_max(source=None) -> dict[str, float]:
    """Read the ``residue,max_area_angstrom2`` table (bundled one by default)."""
    if source is None:
        text = resources.files("dbpred.data").joinpath("max_sasa.csv").read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    header = tuple(h.strip() for h in next(reader))
    if header != ("residue", "max_area_angstrom2"):
        raise ValueError(f"bad reference table header {header}")
    return {row[0].strip(): float(row[1]) for row in reader if row}


def classify_surface_residues(
    sasa: SasaResult,
    reference_max: Mapping[str, float],
    threshold: float = 0.40,
) -> SurfaceClassification:
    """Label residues surface (relative accessibility > ``threshold``) or buried."""
    surface, buried, rel = set(), set(), {}
    for key, name in (sasa.residue_names or {}).items():
        if name not in reference_max:
            raise ReferenceMiss(f"no reference maximum area for residue {name!r}")
        fraction = sasa.per_residue_area.get(key, 0.0) / reference_max[name]
        rel[key] = fraction
        (surface if fraction > threshold else buried).add(key)
    return SurfaceClassification(frozenset(surface), frozenset(buried), rel)


def surface_atom_indices(atom_set: ChargedAtomSet, classification: SurfaceClassification) -> set[int]:
    return {i for i, a in enumerate(atom_set.atoms) if a.residue_key in classification.surface}


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path halving and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


def detect_patches(
    atom_set: ChargedAtomSet,
    surface_atoms: Iterable[int],
    potentials: Sequence[float] | Mapping[int, float],
    potential_threshold: float = 0.0,
    link_distance: float = 4.5,
) -> list[Patch]:
    """Connected groups of surface atoms whose potential exceeds ``potential_threshold``.

    Two nodes are linked when their centres are at most ``link_distance`` Å
    apart. Patches come back largest first; ties go to the smallest member index.
    """
    nodes = sorted(i for i in set(surface_atoms) if potentials[i] > potential_threshold)
    if not nodes:
        return []
    coords = atom_set.positions[nodes]
    uf = UnionFind(len(nodes))
    for a, b in cKDTree(coords).query_pairs(link_distance):
        uf.union(a, b)
    groups: dict[int, list[int]] = {}
    for local, atom_index in enumerate(nodes):
        groups.setdefault(uf.find(local), []).append(atom_index)
    patches = [
        Patch(frozenset(members), len(members),
              float(np.mean([potentials[i] for i in members])))
        for members in groups.values()
    ]
    patches.sort(key=lambda p: (-p.size, min(p.atom_indices)))
    return patches


def largest_patch_size(patches: Sequence[Patch]) -> int:
    return max((p.size for p in patches), default=0)


def format_patch_report(patches: Sequence[Patch]) -> str:
    lines = ["patch_rank,size,mean_potential"]
    lines += [f"{rank},{p.size},{p.mean_potential!r}" for rank, p in enumerate(patches, start=1)]
    return "\n".join(lines) + "\n"
