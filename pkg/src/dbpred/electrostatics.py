"""Partial charges, net charge, and a finite-difference linearized Poisson-Boltzmann solver.

Potentials are reported in units of kT/e at the configured temperature.
Lengths are in Å and charges in units of the elementary charge.

The solver discretizes

    div(eps grad phi) - eps_solvent * kappa^2 * phi = -4 pi l_B * rho

on a cubic-cell grid, where ``l_B`` is the vacuum Bjerrum length, and relaxes
it with successive over-relaxation in a fixed lexicographic order so that the
result is bit-reproducible.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import IO, Iterable, Mapping, Sequence

import numba
import numpy as np
from scipy import constants

from .errors import (
    ChargeTableError,
    ChargeTableMiss,
    GridTooSmall,
    NonFiniteDivergence,
    OutOfGrid,
    SingularPoint,
)
from .structure_io import STANDARD_RESIDUES, ProteinStructure

__all__ = [
    "FORMAL_CHARGES",
    "ELEMENT_RADII",
    "ChargeTable",
    "RadiusTable",
    "ChargedAtomSet",
    "SolverConfig",
    "PotentialGrid",
    "load_charge_table",
    "load_radius_table",
    "assign_charges",
    "net_charge",
    "bjerrum_length",
    "debye_kappa",
    "analytic_screened_coulomb",
    "fit_grid_dim",
    "solve_potential",
    "potential_at_points",
    "write_grid",
    "read_grid",
]

FORMAL_CHARGES = {"LYS": 1.0, "ARG": 1.0, "ASP": -1.0, "GLU": -1.0}

# Bondi-style fallback radii (Å) for atoms the residue table does not list
ELEMENT_RADII = {"C": 1.70, "N": 1.55, "O": 1.52, "S": 1.80, "P": 1.80, "H": 1.10, "SE": 1.90}
DEFAULT_ELEMENT_RADIUS = 1.80


@dataclass(frozen=True)
class ChargeTable:
    entries: Mapping[tuple[str, str], float]

    def lookup(self, residue: str, atom: str) -> float | None:
        q = self.entries.get((residue, atom))
        if q is None:
            q = self.entries.get(("*", atom))
        return q

    def residue_sum(self, residue: str) -> float:
        return math.fsum(q for (r, _), q in self.entries.items() if r == residue)


@dataclass(frozen=True)
class RadiusTable:
    entries: Mapping[tuple[str, str], float]
    element_fallback: Mapping[str, float] = field(default_factory=lambda: dict(ELEMENT_RADII))

    def lookup(self, residue: str, atom: str, element: str) -> float:
        r = self.entries.get((residue, atom))
        if r is None:
            r = self.entries.get(("*", atom))
        if r is None:
            r = self.element_fallback.get(element.upper(), DEFAULT_ELEMENT_RADIUS)
        return r


def _read_csv_rows(source, header: tuple[str, ...]) -> list[list[str]]:
    if source is None:
        raise ValueError("no table source")
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source) as fh:
            text = fh.read()
    reader = csv.reader(io.StringIO(text))
    got = tuple(h.strip() for h in next(reader))
    if got != header:
        raise ValueError(f"expected header {','.join(header)}, got {','.join(got)}")
    return [[c.strip() for c in row] for row in reader if row]


def _bundled(name: str) -> IO[str]:
    return resources.files("dbpred.data").joinpath(name).open("r")


def load_charge_table(source=None) -> ChargeTable:
    """Load a ``residue,atom,charge_e`` CSV (bundled table when ``source`` is None).

    Every standard residue must be present and its charges must sum to the
    residue's formal charge at pH 7.
    """
    if source is None:
        with _bundled("charges.csv") as fh:
            rows = _read_csv_rows(fh, ("residue", "atom", "charge_e"))
    else:
        rows = _read_csv_rows(source, ("residue", "atom", "charge_e"))
    entries = {(r, a): float(q) for r, a, q in rows}
    table = ChargeTable(entries)
    for residue in STANDARD_RESIDUES:
        if not any(r == residue for r, _ in entries):
            raise ChargeTableError(f"charge table lacks residue {residue}")
        total = table.residue_sum(residue)
        if abs(total - FORMAL_CHARGES.get(residue, 0.0)) > 1e-9:
            raise ChargeTableError(
                f"{residue} charges sum to {total:+.6f}, expected "
                f"{FORMAL_CHARGES.get(residue, 0.0):+.1f}"
            )
    return table


def load_radius_table(source=None) -> RadiusTable:
    if source is None:
        with _bundled("radii.csv") as fh:
            rows = _read_csv_rows(fh, ("residue", "atom", "radius_angstrom"))
    else:
        rows = _read_csv_rows(source, ("residue", "atom", "radius_angstrom"))
    entries = {}
    for r, a, rad in rows:
        value = float(rad)
        if not value > 0:
            raise ValueError(f"non-positive radius for {r} {a}")
        entries[(r, a)] = value
    return RadiusTable(entries)


# ---------------------------------------------------------------------------
# charged atoms
# ---------------------------------------------------------------------------


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChargedAtomSet:
    """Heavy atoms with positions (Å), partial charges (e) and vdW radii (Å).

    ``atoms`` holds the source records (or is empty for synthetic sets) and
    ``misses`` counts table lookups that fell back to zero charge.
    """

    positions: np.ndarray
    charges: np.ndarray
    radii: np.ndarray
    atoms: tuple = ()
    misses: int = 0

    def __post_init__(self):
        pos = _frozen(self.positions).reshape(-1, 3)
        q = _frozen(self.charges).reshape(-1)
        r = _frozen(self.radii).reshape(-1)
        if not (len(pos) == len(q) == len(r)):
            raise ValueError("positions, charges and radii differ in length")
        if not np.all(np.isfinite(q)) or not np.all(np.isfinite(pos)):
            raise ValueError("non-finite charge or position")
        if np.any(r <= 0):
            raise ValueError("radii must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "charges", q)
        object.__setattr__(self, "radii", r)

    def __len__(self) -> int:
        return len(self.charges)

    @classmethod
    def from_arrays(cls, positions, charges, radii=None) -> "ChargedAtomSet":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        if radii is None:
            radii = np.full(len(positions), 1.5)
        return cls(positions, charges, radii)

    def negated(self) -> "ChargedAtomSet":
        return ChargedAtomSet(self.positions, -self.charges, self.radii, self.atoms, self.misses)


def assign_charges(
    structure: ProteinStructure,
    table: ChargeTable | None = None,
    radii: RadiusTable | None = None,
    strict: bool = True,
) -> ChargedAtomSet:
    """Give every heavy atom of ``structure`` a partial charge and a radius.

    Hydrogens are skipped. A (residue, atom) pair missing from ``table`` raises
    :class:`ChargeTableMiss` when ``strict``; otherwise it gets charge 0 and is
    counted in ``misses``.
    """
    table = table or load_charge_table()
    radii = radii or load_radius_table()
    atoms, pos, q, r = [], [], [], []
    misses = 0
    for atom in structure.atoms():
        if atom.is_hydrogen:
            continue
        charge = table.lookup(atom.residue_name, atom.name)
        if charge is None:
            if strict:
                raise ChargeTableMiss(
                    f"no charge for {atom.residue_name} {atom.name} "
                    f"(chain {atom.chain_id!r} residue {atom.residue_seq})"
                )
            charge = 0.0
            misses += 1
        atoms.append(atom)
        pos.append(atom.position)
        q.append(charge)
        r.append(radii.lookup(atom.residue_name, atom.name, atom.element))
    return ChargedAtomSet(np.reshape(pos, (-1, 3)), q, r, tuple(atoms), misses)


def net_charge(atom_set: ChargedAtomSet) -> float:
    # fsum is exactly rounded, hence independent of atom order
    return math.fsum(atom_set.charges.tolist())


# ---------------------------------------------------------------------------
# physical constants
# ---------------------------------------------------------------------------


def bjerrum_length(temperature: float = 298.15, dielectric: float = 1.0) -> float:
    """Bjerrum length in Å: distance at which two unit charges interact with energy kT."""
    e, eps0, kb = constants.e, constants.epsilon_0, constants.k
    return e**2 / (4.0 * math.pi * eps0 * dielectric * kb * temperature) * 1e10


def debye_kappa(ionic_strength: float, temperature: float = 298.15, dielectric: float = 80.0) -> float:
    """Inverse Debye length (1/Å) for a 1:1 electrolyte of the given ionic strength (mol/L)."""
    if ionic_strength <= 0:
        return 0.0
    number_density = ionic_strength * constants.N_A * 1e-27  # ions per Å^3 per species
    return math.sqrt(8.0 * math.pi * bjerrum_length(temperature, dielectric) * number_density)


def _screened_sum(positions, charges, points, kappa, dielectric, lb0, chunk=4096):
    out = np.zeros(len(points))
    if len(charges) == 0:
        return out
    for start in range(0, len(points), chunk):
        block = points[start : start + chunk]
        d = np.sqrt(((block[:, None, :] - positions[None, :, :]) ** 2).sum(axis=-1))
        terms = charges[None, :] * np.exp(-kappa * d) / d
        out[start : start + chunk] = terms.sum(axis=1) * (lb0 / dielectric)
    return out


def analytic_screened_coulomb(
    atom_set: ChargedAtomSet,
    point: Sequence[float],
    kappa: float,
    dielectric: float,
    temperature: float = 298.15,
) -> float:
    """Superposed Debye-Hückel potential (kT/e) of ``atom_set`` at ``point``."""
    if len(atom_set) == 0:
        return 0.0
    p = np.asarray(point, dtype=float).reshape(1, 3)
    d = np.sqrt(((atom_set.positions - p) ** 2).sum(axis=1))
    if d.min() <= 1e-6:
        raise SingularPoint(f"point {tuple(p[0])} coincides with a charge")
    return float(_screened_sum(atom_set.positions, atom_set.charges, p, kappa, dielectric,
                               bjerrum_length(temperature))[0])


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    grid_dim: int | tuple[int, int, int] = 65
    spacing: float = 1.0
    solute_dielectric: float = 2.0
    solvent_dielectric: float = 80.0
    ionic_strength: float = 0.145
    temperature: float = 298.15
    tolerance: float = 1e-6
    max_iterations: int = 20000
    sor_omega: float = 1.9
    center: tuple[float, float, float] | None = None
    margin: float = 5.0

    def __post_init__(self):
        dims = self.dims
        if any(d < 17 or d % 2 == 0 for d in dims):
            raise ValueError(f"grid_dim must be odd and >= 17, got {self.grid_dim}")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0.0 < self.sor_omega < 2.0:
            raise ValueError("sor_omega must lie in (0, 2)")
        if self.solute_dielectric <= 0 or self.solvent_dielectric <= 0:
            raise ValueError("dielectrics must be positive")
        if self.ionic_strength < 0 or self.temperature <= 0:
            raise ValueError("ionic strength must be >= 0 and temperature > 0")

    @property
    def dims(self) -> tuple[int, int, int]:
        if isinstance(self.grid_dim, int):
            return (self.grid_dim,) * 3
        return tuple(int(d) for d in self.grid_dim)

    @property
    def kappa(self) -> float:
        return debye_kappa(self.ionic_strength, self.temperature, self.solvent_dielectric)


@dataclass(frozen=True, eq=False)
class PotentialGrid:
    dims: tuple[int, int, int]
    spacing: float
    origin: tuple[float, float, float]
    values: np.ndarray  # indexed [ix, iy, iz]
    converged: bool = True
    iterations: int = 0
    final_residual: float = 0.0

    def node_positions(self, axis: int) -> np.ndarray:
        return self.origin[axis] + self.spacing * np.arange(self.dims[axis])


def fit_grid_dim(atom_set: ChargedAtomSet, spacing: float, margin: float = 5.0,
                 minimum: int = 17) -> tuple[int, int, int]:
    """Smallest odd per-axis node counts whose centroid-centred grid holds every atom + margin."""
    if len(atom_set) == 0:
        return (minimum,) * 3
    center = atom_set.positions.mean(axis=0)
    reach = np.abs(atom_set.positions - center).max(axis=0) + margin
    half = np.ceil(reach / spacing).astype(int) + 1
    return tuple(max(minimum, 2 * int(h) + 1) for h in half)


@numba.njit(cache=True)
def _sor_sweep(phi, ex, ey, ez, diag, src, omega):
    nx, ny, nz = phi.shape
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                acc = (ex[i - 1, j, k] * phi[i - 1, j, k] + ex[i, j, k] * phi[i + 1, j, k]
                       + ey[i, j - 1, k] * phi[i, j - 1, k] + ey[i, j, k] * phi[i, j + 1, k]
                       + ez[i, j, k - 1] * phi[i, j, k - 1] + ez[i, j, k] * phi[i, j, k + 1]
                       + src[i, j, k])
                phi[i, j, k] = (1.0 - omega) * phi[i, j, k] + omega * (acc / diag[i, j, k])


@numba.njit(cache=True)
def _residual_norm(phi, ex, ey, ez, diag, src):
    nx, ny, nz = phi.shape
    total = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            for k in range(1, nz - 1):
                r = (ex[i - 1, j, k] * phi[i - 1, j, k] + ex[i, j, k] * phi[i + 1, j, k]
                     + ey[i, j - 1, k] * phi[i, j - 1, k] + ey[i, j, k] * phi[i, j + 1, k]
                     + ez[i, j, k - 1] * phi[i, j, k - 1] + ez[i, j, k] * phi[i, j, k + 1]
                     + src[i, j, k] - diag[i, j, k] * phi[i, j, k])
                total += r * r
    return math.sqrt(total)


def _solute_mask(atom_set: ChargedAtomSet, origin, spacing, dims) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    axes = [origin[a] + spacing * np.arange(dims[a]) for a in range(3)]
    for p, r in zip(atom_set.positions, atom_set.radii):
        lo = [max(0, int(math.floor((p[a] - r - origin[a]) / spacing))) for a in range(3)]
        hi = [min(dims[a], int(math.ceil((p[a] + r - origin[a]) / spacing)) + 1) for a in range(3)]
        if any(h <= l for l, h in zip(lo, hi)):
            continue
        dx = (axes[0][lo[0]:hi[0]] - p[0])[:, None, None]
        dy = (axes[1][lo[1]:hi[1]] - p[1])[None, :, None]
        dz = (axes[2][lo[2]:hi[2]] - p[2])[None, None, :]
        mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= dx * dx + dy * dy + dz * dz <= r * r
    return mask


def _spread_charges(atom_set: ChargedAtomSet, origin, spacing, dims) -> np.ndarray:
    rho = np.zeros(dims)
    if len(atom_set) == 0:
        return rho
    f = (atom_set.positions - np.asarray(origin)) / spacing
    base = np.minimum(np.floor(f).astype(int), np.asarray(dims) - 2)
    t = f - base
    for corner in range(8):
        ox, oy, oz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        w = ((t[:, 0] if ox else 1 - t[:, 0]) * (t[:, 1] if oy else 1 - t[:, 1])
             * (t[:, 2] if oz else 1 - t[:, 2]))
        np.add.at(rho, (base[:, 0] + ox, base[:, 1] + oy, base[:, 2] + oz), w * atom_set.charges)
    return rho


def _boundary_mask(dims) -> np.ndarray:
    mask = np.zeros(dims, dtype=bool)
    mask[0, :, :] = mask[-1, :, :] = True
    mask[:, 0, :] = mask[:, -1, :] = True
    mask[:, :, 0] = mask[:, :, -1] = True
    return mask


def solve_potential(atom_set: ChargedAtomSet, config: SolverConfig | None = None) -> PotentialGrid:
    """Solve the linearized Poisson-Boltzmann equation for ``atom_set``.

    Nodes inside any atom's vdW sphere take the solute dielectric and carry no
    ionic screening; all other nodes take the solvent dielectric and screening
    ``kappa``. Boundary faces are fixed to the Debye-Hückel superposition and
    charges are spread to their 8 surrounding nodes by trilinear weights.

    Raises
    ------
    GridTooSmall
        If some atom centre lies closer than ``config.margin`` Å to the grid edge.
    NonFiniteDivergence
        If the iteration produces a non-finite value.
    """
    config = config or SolverConfig()
    dims = config.dims
    h = config.spacing
    if config.center is not None:
        center = np.asarray(config.center, dtype=float)
    elif len(atom_set):
        center = atom_set.positions.mean(axis=0)
    else:
        center = np.zeros(3)
    origin = center - h * (np.asarray(dims) - 1) / 2.0
    upper = origin + h * (np.asarray(dims) - 1)

    if len(atom_set):
        lo = atom_set.positions.min(axis=0) - config.margin
        hi = atom_set.positions.max(axis=0) + config.margin
        if np.any(lo < origin - 1e-9) or np.any(hi > upper + 1e-9):
            raise GridTooSmall(
                f"grid {dims} x {h} Å does not hold atoms plus a {config.margin} Å margin"
            )

    lb0 = bjerrum_length(config.temperature)
    kappa = config.kappa
    solute = _solute_mask(atom_set, origin, h, dims)
    eps = np.where(solute, config.solute_dielectric, config.solvent_dielectric)
    # harmonic means on the links between neighbouring nodes
    ex = 2.0 * eps[:-1] * eps[1:] / (eps[:-1] + eps[1:])
    ey = 2.0 * eps[:, :-1] * eps[:, 1:] / (eps[:, :-1] + eps[:, 1:])
    ez = 2.0 * eps[:, :, :-1] * eps[:, :, 1:] / (eps[:, :, :-1] + eps[:, :, 1:])
    screening = np.where(solute, 0.0, config.solvent_dielectric * kappa**2 * h * h)

    diag = np.ones(dims)
    diag[1:-1, 1:-1, 1:-1] = (
        ex[:-1, 1:-1, 1:-1] + ex[1:, 1:-1, 1:-1]
        + ey[1:-1, :-1, 1:-1] + ey[1:-1, 1:, 1:-1]
        + ez[1:-1, 1:-1, :-1] + ez[1:-1, 1:-1, 1:]
        + screening[1:-1, 1:-1, 1:-1]
    )
    src = _spread_charges(atom_set, origin, h, dims) * (4.0 * math.pi * lb0 / h)

    phi = np.zeros(dims)
    bmask = _boundary_mask(dims)
    if len(atom_set):
        axes = np.meshgrid(*(origin[a] + h * np.arange(dims[a]) for a in range(3)), indexing="ij")
        pts = np.stack([ax[bmask] for ax in axes], axis=1)
        phi[bmask] = _screened_sum(atom_set.positions, atom_set.charges, pts, kappa,
                                   config.solvent_dielectric, lb0)

    # interior starts at zero, so the first residual is the right-hand-side norm
    rhs_norm = _residual_norm(phi, ex, ey, ez, diag, src)

    iterations = 0
    residual = 0.0
    converged = rhs_norm == 0.0
    if not converged:
        residual = 1.0
        while iterations < config.max_iterations:
            _sor_sweep(phi, ex, ey, ez, diag, src, config.sor_omega)
            iterations += 1
            residual = _residual_norm(phi, ex, ey, ez, diag, src) / rhs_norm
            if not math.isfinite(residual):
                raise NonFiniteDivergence(f"non-finite residual after {iterations} sweeps")
            if residual <= config.tolerance:
                converged = True
                break
    if not np.all(np.isfinite(phi)):
        raise NonFiniteDivergence("non-finite potential")
    phi.setflags(write=False)
    return PotentialGrid(
        dims=dims,
        spacing=h,
        origin=tuple(float(o) for o in origin),
        values=phi,
        converged=converged,
        iterations=iterations,
        final_residual=float(residual),
    )


def potential_at_points(grid: PotentialGrid, points: Iterable[Sequence[float]]) -> np.ndarray:
    """Trilinearly interpolate ``grid`` at ``points`` (each inside the grid box)."""
    pts = np.asarray(list(points), dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return np.zeros(0)
    dims = np.asarray(grid.dims)
    f = (pts - np.asarray(grid.origin)) / grid.spacing
    slack = 1e-9
    bad = np.any((f < -slack) | (f > dims - 1 + slack), axis=1)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise OutOfGrid(f"point {idx} at {tuple(pts[idx])} lies outside the grid", idx)
    f = np.clip(f, 0, dims - 1)
    base = np.minimum(np.floor(f).astype(int), dims - 2)
    t = f - base
    v = grid.values
    out = np.zeros(len(pts))
    for corner in range(8):
        ox, oy, oz = corner & 1, (corner >> 1) & 1, (corner >> 2) & 1
        w = ((t[:, 0] if ox else 1 - t[:, 0]) * (t[:, 1] if oy else 1 - t[:, 1])
             * (t[:, 2] if oz else 1 - t[:, 2]))
        out += w * v[base[:, 0] + ox, base[:, 1] + oy, base[:, 2] + oz]
    return out


def write_grid(grid: PotentialGrid, fh: IO[str]) -> None:
    """Diagnostic text dump; node values follow in x-fastest order."""
    fh.write("# dbpred potential grid v1\n")
    fh.write("dims %d %d %d\n" % grid.dims)
    fh.write(f"spacing {grid.spacing!r}\n")
    fh.write("origin %r %r %r\n" % tuple(grid.origin))
    fh.write("units kT/e\n")
    fh.write(f"converged {int(grid.converged)} iterations {grid.iterations} "
             f"residual {grid.final_residual!r}\n")
    fh.write("values\n")
    for v in np.asarray(grid.values).ravel(order="F").tolist():
        fh.write(f"{v!r}\n")


def read_grid(fh: IO[str]) -> PotentialGrid:
    header = {}
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line == "values":
            break
        key, *rest = line.split()
        header[key] = rest
    dims = tuple(int(x) for x in header["dims"])
    values = np.array([float(x) for x in fh.read().split()])
    if values.size != np.prod(dims):
        raise ValueError(f"expected {np.prod(dims)} values, got {values.size}")
    conv = header.get("converged", ["1", "iterations", "0", "residual", "0.0"])
    return PotentialGrid(
        dims=dims,
        spacing=float(header["spacing"][0]),
        origin=tuple(float(x) for x in header["origin"]),
        values=values.reshape(dims, order="F"),
        converged=bool(int(conv[0])),
        iterations=int(conv[2]),
        final_residual=float(conv[4]),
    )
