"""Structure-to-feature-vector extraction for one manifest entry."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable

from .electrostatics import (
    ChargeTable,
    RadiusTable,
    SolverConfig,
    assign_charges,
    fit_grid_dim,
    load_charge_table,
    load_radius_table,
    net_charge,
    potential_at_points,
    solve_potential,
)
from .features import FeatureVector, assemble_features, overall_composition, surface_composition
from .structure_io import (
    DEFAULT_ENDPOINT,
    DatasetEntry,
    fetch_structure,
    parse_structure,
    select_chain,
    strip_nucleic,
)
from .surface import (
    classify_surface_residues,
    compute_sasa,
    detect_patches,
    largest_patch_size,
    load_reference_max,
    surface_atom_indices,
)

__all__ = ["ExtractionSettings", "ExtractionResult", "extract_entry"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExtractionSettings:
    solver: SolverConfig = field(default_factory=SolverConfig)
    # size the grid to each protein instead of using solver.grid_dim
    auto_grid: bool = True
    probe_radius: float = 1.4
    sasa_points: int = 960
    surface_threshold: float = 0.40
    patch_threshold: float = 0.0
    link_distance: float = 4.5
    charge_table: ChargeTable | None = None
    radius_table: RadiusTable | None = None
    reference_max: dict | None = None

    def resolved(self) -> "ExtractionSettings":
        """Copy with the bundled tables filled in where none were given."""
        return replace(
            self,
            charge_table=self.charge_table or load_charge_table(),
            radius_table=self.radius_table or load_radius_table(),
            reference_max=self.reference_max or load_reference_max(),
        )


@dataclass(frozen=True)
class ExtractionResult:
    features: FeatureVector
    charge_misses: int
    surface_empty: bool
    n_atoms: int
    n_patches: int
    solver_iterations: int
    solver_converged: bool


def extract_entry(
    entry: DatasetEntry,
    cache_dir: str | os.PathLike,
    settings: ExtractionSettings | None = None,
    endpoint: str = DEFAULT_ENDPOINT,
    offline: bool = False,
    transport: Callable[[str], bytes] | None = None,
) -> ExtractionResult:
    """Fetch, parse and featurize one (structure, chain) entry.

    Charge-table misses are tolerated (charge 0) and counted; every other
    failure propagates as the owning module's error.
    """
    settings = (settings or ExtractionSettings()).resolved()
    text = fetch_structure(entry.structure_id, endpoint, cache_dir, offline, transport)
    structure = parse_structure(text, entry.structure_id)
    protein, _ = strip_nucleic(select_chain(structure, entry.chain_id or None))
    overall = overall_composition(protein)

    atoms = assign_charges(protein, settings.charge_table, settings.radius_table, strict=False)
    if atoms.misses:
        log.warning("%s: %d atoms missing from the charge table, charged 0",
                    entry.source_id, atoms.misses)
    charge = net_charge(atoms)

    sasa = compute_sasa(atoms, settings.probe_radius, settings.sasa_points)
    classification = classify_surface_residues(sasa, settings.reference_max, settings.surface_threshold)
    surface, surface_empty = surface_composition(protein, classification)
    if surface_empty:
        log.warning("%s: no surface residues", entry.source_id)

    solver = settings.solver
    if settings.auto_grid:
        dims = fit_grid_dim(atoms, solver.spacing, solver.margin)
        solver = replace(solver, grid_dim=dims, center=None)
    grid = solve_potential(atoms, solver)
    if not grid.converged:
        log.warning("%s: solver stopped after %d iterations (residual %.3g)",
                    entry.source_id, grid.iterations, grid.final_residual)
    potentials = potential_at_points(grid, atoms.positions)
    patches = detect_patches(
        atoms,
        surface_atom_indices(atoms, classification),
        potentials,
        settings.patch_threshold,
        settings.link_distance,
    )

    vector = assemble_features(
        charge, largest_patch_size(patches), overall, surface, entry.label, entry.source_id
    )
    return ExtractionResult(
        vector, atoms.misses, surface_empty, len(atoms), len(patches),
        grid.iterations, grid.converged,
    )
