"""Generate the bundled sample: synthetic helix-bundle structures and a separable feature CSV.

Run from the repository root:

    python3 tools/build_sample.py

Coordinates come from idealized internal coordinates (bond lengths, angles,
torsions) placed with the NeRF construction, so the output is deterministic.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from dbpred.features import assemble_features, write_feature_csv
from dbpred.structure_io import BINDING, NON_BINDING, STANDARD_RESIDUES

OUT = Path(__file__).resolve().parents[1] / "src" / "dbpred" / "data" / "sample"

# (atom, ref1, ref2, ref3, bond, angle, torsion); refs are prior atoms in this residue
# or the backbone N/CA/C. Torsions in degrees.
SIDE_CHAINS: dict[str, list[tuple]] = {
    "GLY": [],
    "ALA": [],
    "SER": [("OG", "N", "CA", "CB", 1.42, 111.0, -60)],
    "CYS": [("SG", "N", "CA", "CB", 1.81, 114.0, -60)],
    "VAL": [("CG1", "N", "CA", "CB", 1.53, 110.5, 180), ("CG2", "N", "CA", "CB", 1.53, 110.5, -60)],
    "THR": [("OG1", "N", "CA", "CB", 1.43, 109.5, -60), ("CG2", "N", "CA", "CB", 1.53, 110.5, 180)],
    "LEU": [("CG", "N", "CA", "CB", 1.53, 116.0, -60), ("CD1", "CA", "CB", "CG", 1.53, 110.5, 180),
            ("CD2", "CA", "CB", "CG", 1.53, 110.5, 60)],
    "ILE": [("CG1", "N", "CA", "CB", 1.53, 110.0, -60), ("CG2", "N", "CA", "CB", 1.53, 110.5, 180),
            ("CD1", "CA", "CB", "CG1", 1.53, 114.0, 180)],
    "MET": [("CG", "N", "CA", "CB", 1.52, 114.0, -60), ("SD", "CA", "CB", "CG", 1.81, 112.7, 180),
            ("CE", "CB", "CG", "SD", 1.79, 100.5, 180)],
    "PRO": [("CG", "N", "CA", "CB", 1.50, 104.5, 30), ("CD", "CA", "CB", "CG", 1.51, 105.5, -35)],
    "PHE": [("CG", "N", "CA", "CB", 1.50, 114.0, -60), ("CD1", "CA", "CB", "CG", 1.39, 120.0, 90),
            ("CD2", "CA", "CB", "CG", 1.39, 120.0, -90), ("CE1", "CB", "CG", "CD1", 1.39, 120.0, 180),
            ("CE2", "CB", "CG", "CD2", 1.39, 120.0, 180), ("CZ", "CG", "CD1", "CE1", 1.39, 120.0, 0)],
    "TYR": [("CG", "N", "CA", "CB", 1.51, 114.0, -60), ("CD1", "CA", "CB", "CG", 1.39, 120.0, 90),
            ("CD2", "CA", "CB", "CG", 1.39, 120.0, -90), ("CE1", "CB", "CG", "CD1", 1.39, 120.0, 180),
            ("CE2", "CB", "CG", "CD2", 1.39, 120.0, 180), ("CZ", "CG", "CD1", "CE1", 1.39, 120.0, 0),
            ("OH", "CD1", "CE1", "CZ", 1.36, 120.0, 180)],
    "TRP": [("CG", "N", "CA", "CB", 1.50, 114.0, -60), ("CD1", "CA", "CB", "CG", 1.37, 127.0, 90),
            ("CD2", "CA", "CB", "CG", 1.43, 126.6, -90), ("NE1", "CB", "CG", "CD1", 1.38, 110.0, 180),
            ("CE2", "CB", "CG", "CD2", 1.41, 107.3, 180), ("CE3", "CB", "CG", "CD2", 1.40, 133.9, 0),
            ("CZ2", "CG", "CD2", "CE2", 1.40, 122.3, 180), ("CZ3", "CG", "CD2", "CE3", 1.39, 118.8, 180),
            ("CH2", "CD2", "CE2", "CZ2", 1.37, 117.5, 0)],
    "HIS": [("CG", "N", "CA", "CB", 1.50, 114.0, -60), ("ND1", "CA", "CB", "CG", 1.38, 122.7, 90),
            ("CD2", "CA", "CB", "CG", 1.36, 131.0, -90), ("CE1", "CB", "CG", "ND1", 1.32, 109.0, 180),
            ("NE2", "CB", "CG", "CD2", 1.37, 107.0, 180)],
    "ASP": [("CG", "N", "CA", "CB", 1.52, 113.0, -60), ("OD1", "CA", "CB", "CG", 1.25, 119.0, 0),
            ("OD2", "CA", "CB", "CG", 1.25, 119.0, 180)],
    "ASN": [("CG", "N", "CA", "CB", 1.52, 113.0, -60), ("OD1", "CA", "CB", "CG", 1.23, 121.0, 0),
            ("ND2", "CA", "CB", "CG", 1.33, 116.0, 180)],
    "GLU": [("CG", "N", "CA", "CB", 1.52, 114.0, -60), ("CD", "CA", "CB", "CG", 1.52, 113.0, 180),
            ("OE1", "CB", "CG", "CD", 1.25, 119.0, 0), ("OE2", "CB", "CG", "CD", 1.25, 119.0, 180)],
    "GLN": [("CG", "N", "CA", "CB", 1.52, 114.0, -60), ("CD", "CA", "CB", "CG", 1.52, 113.0, 180),
            ("OE1", "CB", "CG", "CD", 1.23, 121.0, 0), ("NE2", "CB", "CG", "CD", 1.33, 116.0, 180)],
    "LYS": [("CG", "N", "CA", "CB", 1.52, 114.0, -60), ("CD", "CA", "CB", "CG", 1.52, 111.0, 180),
            ("CE", "CB", "CG", "CD", 1.52, 111.0, 180), ("NZ", "CG", "CD", "CE", 1.49, 111.0, 180)],
    "ARG": [("CG", "N", "CA", "CB", 1.52, 114.0, -60), ("CD", "CA", "CB", "CG", 1.52, 111.0, 180),
            ("NE", "CB", "CG", "CD", 1.46, 112.0, 180), ("CZ", "CG", "CD", "NE", 1.33, 124.0, 180),
            ("NH1", "CD", "NE", "CZ", 1.33, 120.0, 0), ("NH2", "CD", "NE", "CZ", 1.33, 120.0, 180)],
}

CORE = ["LEU", "ILE", "VAL", "ALA", "PHE", "MET", "LEU", "ALA"]
NEUTRAL_SURFACE = ["SER", "THR", "ASN", "GLN", "GLY", "PRO", "TYR", "TRP", "HIS", "CYS", "ALA"]


def place(a, b, c, bond, angle, torsion):
    """Position of d given a, b, c with |cd| = bond, angle bcd, torsion abcd (degrees)."""
    angle, torsion = math.radians(angle), math.radians(torsion)
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = np.array([-bond * math.cos(angle),
                   bond * math.sin(angle) * math.cos(torsion),
                   bond * math.sin(angle) * math.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def build_helix(sequence, phi=-57.0, psi=-47.0, omega=180.0):
    """Heavy-atom residues [(name, {atom: xyz})] of an ideal alpha helix."""
    n = np.array([0.0, 1.458, 0.0])
    ca = np.zeros(3)
    c = np.array([1.525, 0.0, 0.0])
    residues = []
    for i, name in enumerate(sequence):
        if i:
            prev = residues[-1][1]
            n = place(prev["N"], prev["CA"], prev["C"], 1.329, 116.2, psi)
            ca = place(prev["CA"], prev["C"], n, 1.458, 121.7, omega)
            c = place(prev["C"], n, ca, 1.525, 111.2, phi)
        atoms = {"N": n, "CA": ca, "C": c}
        residues.append((name, atoms))
    for i, (name, atoms) in enumerate(residues):
        if i + 1 < len(residues):
            atoms["O"] = place(residues[i + 1][1]["N"], atoms["CA"], atoms["C"], 1.231, 120.5, 180.0)
        else:
            atoms["O"] = place(atoms["N"], atoms["CA"], atoms["C"], 1.231, 120.5, psi + 180.0)
            atoms["OXT"] = place(atoms["N"], atoms["CA"], atoms["C"], 1.25, 117.0, psi)
        if name != "GLY":
            atoms["CB"] = place(atoms["C"], atoms["N"], atoms["CA"], 1.53, 110.5, -122.5)
        for atom, r1, r2, r3, bond, angle, torsion in SIDE_CHAINS[name]:
            atoms[atom] = place(atoms[r1], atoms[r2], atoms[r3], bond, angle, torsion)
    return residues


def _orient(residues, center, flip):
    """Align the helix axis with z, optionally reverse it, and move its centroid to ``center``."""
    ca = np.array([a["CA"] for _, a in residues])
    mean = ca.mean(axis=0)
    _, _, vt = np.linalg.svd(ca - mean)
    axis = vt[0] * (1 if (ca[-1] - ca[0]) @ vt[0] > 0 else -1)
    z = np.array([0.0, 0.0, 1.0])
    v = np.cross(axis, z)
    s, cth = np.linalg.norm(v), axis @ z
    if s < 1e-12:
        rot = np.eye(3)
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        rot = np.eye(3) + vx + vx @ vx * ((1 - cth) / s**2)
    if flip:
        rot = np.diag([1.0, -1.0, -1.0]) @ rot
    return [(name, {k: rot @ (x - mean) + center for k, x in atoms.items()}) for name, atoms in residues]


def design_sequence(rng, length, charged, n_charged):
    """Heptad-like pattern: core at a/d positions, chosen charges spread over the surface."""
    seq = []
    for i in range(length):
        if i % 7 in (0, 3):
            seq.append(CORE[rng.integers(len(CORE))])
        else:
            seq.append(NEUTRAL_SURFACE[rng.integers(len(NEUTRAL_SURFACE))])
    surface_pos = [i for i in range(length) if i % 7 not in (0, 3)]
    for i in rng.choice(surface_pos, size=min(n_charged, len(surface_pos)), replace=False):
        seq[i] = charged[rng.integers(len(charged))]
    return seq


def build_bundle(rng, n_helices, helix_len, charged, n_charged, spacing=10.0):
    """Chain residues of an antiparallel helix bundle, with loop-free helix ends."""
    chain = []
    # neighbouring helix axes ``spacing`` Å apart
    radius = spacing / (2 * math.sin(math.pi / n_helices))
    for h in range(n_helices):
        theta = 2 * math.pi * h / n_helices
        center = np.array([radius * math.cos(theta), radius * math.sin(theta), 0.0])
        seq = design_sequence(rng, helix_len, charged, n_charged)
        helix = build_helix(seq)
        # only the last helix keeps its terminal OXT
        if h + 1 < n_helices:
            helix[-1][1].pop("OXT")
        chain.extend(_orient(helix, center, flip=bool(h % 2)))
    return chain


def pseudo_dna(center, n_pairs=8, rise=3.4, radius=9.0):
    """Two antiparallel phosphate-sugar strands (DA/DT) as a double helix."""
    strands = []
    for strand, resname, phase in ((0, "DA", 0.0), (1, "DT", math.pi)):
        residues = []
        for i in range(n_pairs):
            k = i if strand == 0 else n_pairs - 1 - i
            t = 2 * math.pi * k / 10.0 + phase
            z = rise * k - rise * (n_pairs - 1) / 2
            p = center + np.array([radius * math.cos(t), radius * math.sin(t), z])
            c1 = center + np.array([0.6 * radius * math.cos(t + 0.4), 0.6 * radius * math.sin(t + 0.4), z])
            n9 = center + np.array([0.3 * radius * math.cos(t + 0.5), 0.3 * radius * math.sin(t + 0.5), z])
            residues.append((resname, {"P": p, "C1'": c1, "N9" if resname == "DA" else "N1": n9}))
        strands.append(residues)
    return strands


def _atom_line(record, serial, name, altloc, resname, chain, seq, xyz, element, occupancy=1.0):
    field = f" {name:<3}" if len(name) < 4 else name
    return (f"{record:<6}{serial:>5} {field}{altloc}{resname:>3} {chain}{seq:>4}    "
            f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{occupancy:6.2f}{20.0:6.2f}          {element:>2}")


def write_pdb(path, structure_id, chains, hetero=(), altloc_residue=None, extra_model=None):
    """Write chains [(chain_id, residues)] as fixed-column records."""
    lines = [f"HEADER    SYNTHETIC HELIX BUNDLE                  16-OCT-26   {structure_id}"]
    body = []
    serial = 1
    for chain_id, residues in chains:
        for seq, (resname, atoms) in enumerate(residues, start=1):
            for name, xyz in atoms.items():
                element = name[0] if name[0] != "C" or resname not in ("DA", "DT") else "C"
                if altloc_residue == (chain_id, seq):
                    body.append(_atom_line("ATOM", serial, name, "A", resname, chain_id, seq, xyz, element, 0.6))
                    serial += 1
                    body.append(_atom_line("ATOM", serial, name, "B", resname, chain_id, seq,
                                           xyz + 0.4, element, 0.4))
                else:
                    body.append(_atom_line("ATOM", serial, name, " ", resname, chain_id, seq, xyz, element))
                serial += 1
        last = residues[-1]
        body.append(f"TER   {serial:>5}      {last[0]:>3} {chain_id}{len(residues):>4}")
        serial += 1
    for i, xyz in enumerate(hetero, start=1):
        body.append(_atom_line("HETATM", serial, "O", " ", "HOH", "W", i, xyz, "O"))
        serial += 1
    if extra_model is None:
        lines += body
    else:
        lines.append("MODEL        1")
        lines += body
        lines.append("ENDMDL")
        lines.append("MODEL        2")
        lines += [ln[:30] + "".join(f"{float(ln[30 + 8 * k:38 + 8 * k]) + extra_model:8.3f}" for k in range(3))
                  + ln[54:] if ln.startswith(("ATOM", "HETATM")) else ln for ln in body]
        lines.append("ENDMDL")
    lines.append("END")
    path.write_text("\n".join(lines) + "\n")


POSITIVE = ["LYS", "ARG", "LYS", "ARG", "HIS"]
NEGATIVE = ["ASP", "GLU", "ASP", "GLU"]


def build_structures(rng):
    specs = [
        # id, label, helices, length, charged pool, charges per helix, features
        ("9ZB1", BINDING, 3, 18, POSITIVE, 7, {"dna": True}),
        ("9ZB2", BINDING, 4, 16, POSITIVE, 6, {"second_chain": True, "water": True, "altloc": True}),
        ("9ZB3", BINDING, 3, 20, POSITIVE, 8, {"model": True}),
        ("9ZB4", BINDING, 4, 18, POSITIVE, 7, {}),
        ("9ZN1", NON_BINDING, 3, 18, NEGATIVE, 7, {"second_chain": True}),
        ("9ZN2", NON_BINDING, 4, 16, NEGATIVE, 6, {"water": True}),
        ("9ZN3", NON_BINDING, 3, 20, NEGATIVE, 8, {}),
        ("9ZN4", NON_BINDING, 4, 18, NEGATIVE, 7, {}),
    ]
    manifest = ["structure_id,chain_id,label"]
    for sid, label, helices, length, pool, n_charged, extras in specs:
        chains = [("A", build_bundle(rng, helices, length, pool, n_charged))]
        if extras.get("second_chain"):
            other = build_bundle(rng, 2, 14, NEGATIVE if label == BINDING else POSITIVE, 4)
            other = [(n, {k: v + np.array([0.0, 0.0, 40.0]) for k, v in a.items()}) for n, a in other]
            chains.append(("B", other))
        if extras.get("dna"):
            for chain_id, strand in zip("CD", pseudo_dna(np.array([0.0, 22.0, 0.0]))):
                chains.append((chain_id, strand))
        water = [np.array([30.0 + 3.0 * i, 0.0, 0.0]) for i in range(3)] if extras.get("water") else ()
        write_pdb(
            OUT / "structures" / f"{sid}.pdb", sid, chains, water,
            altloc_residue=("A", 5) if extras.get("altloc") else None,
            extra_model=25.0 if extras.get("model") else None,
        )
        manifest.append(f"{sid},A,{label}")
    (OUT / "manifest.csv").write_text("\n".join(manifest) + "\n")


def separable_rows(rng, n_per_class=30, concentration=400.0):
    """Labeled 42-feature rows drawn around one composition profile per class.

    Charge and patch size ranges do not overlap between classes, and each
    class has its own mean composition, so every block carries class signal.
    """
    idx = {r: i for i, r in enumerate(STANDARD_RESIDUES)}
    rows = []
    for label, sign, boost in ((BINDING, 1, ("LYS", "ARG")), (NON_BINDING, -1, ("ASP", "GLU"))):
        profile = rng.dirichlet(np.full(20, 5.0))
        for r in boost:
            profile[idx[r]] += 0.1
        profile /= profile.sum()
        tag = "B" if sign > 0 else "N"
        for k in range(n_per_class):
            overall = rng.dirichlet(profile * concentration) * 100.0
            surface = rng.dirichlet(profile * concentration) * 100.0
            charge = sign * rng.uniform(6.0, 14.0)
            patch = int(rng.integers(90, 200)) if sign > 0 else int(rng.integers(5, 60))
            rows.append(assemble_features(charge, patch, overall, surface, label, f"SYN{tag}{k:02d}"))
    return rows


def main():
    rng = np.random.default_rng(20261016)
    (OUT / "structures").mkdir(parents=True, exist_ok=True)
    build_structures(rng)
    with open(OUT / "separable.csv", "w") as fh:
        write_feature_csv(separable_rows(rng), fh)


if __name__ == "__main__":
    main()
