"""Fixed-column structure files, labeled dataset manifests, and structure retrieval.

Only the subset of the fixed-column format needed downstream is handled:
ATOM/HETATM coordinates, MODEL/ENDMDL (first model only) and the HEADER id.
"""

from __future__ import annotations

import csv
import io
import math
import os
import re
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np
from scipy.spatial import cKDTree

from .errors import ChainNotFound, FetchError, IdError, ManifestError, ParseError

__all__ = [
    "BINDING",
    "NON_BINDING",
    "LABELS",
    "STANDARD_RESIDUES",
    "NUCLEIC_RESIDUES",
    "DEFAULT_ENDPOINT",
    "AtomRecord",
    "Residue",
    "Chain",
    "ProteinStructure",
    "DatasetEntry",
    "DatasetManifest",
    "parse_structure",
    "serialize_structure",
    "select_chain",
    "strip_nucleic",
    "load_manifest",
    "dump_manifest",
    "fetch_structure",
    "label_binding_residues",
]

BINDING = "binding"
NON_BINDING = "non-binding"
LABELS = (BINDING, NON_BINDING)

# alphabetical by 3-letter code; this order is also the feature order
STANDARD_RESIDUES = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
NUCLEIC_RESIDUES = frozenset(
    {"DA", "DC", "DG", "DT", "DU", "DI", "A", "C", "G", "U", "I"}
)

DEFAULT_ENDPOINT = "https://files.rcsb.org/download/{id}.pdb"
_ID_RE = re.compile(r"^[0-9][A-Za-z0-9]{3}$")
_HYDROGENS = frozenset({"H", "D"})

ResidueKey = tuple[str, int, str]


@dataclass(frozen=True)
class AtomRecord:
    serial: int
    name: str
    residue_name: str
    chain_id: str
    residue_seq: int
    position: tuple[float, float, float]
    element: str
    is_hetero: bool = False
    insertion_code: str = ""

    @property
    def residue_key(self) -> ResidueKey:
        return (self.chain_id, self.residue_seq, self.insertion_code)

    @property
    def is_hydrogen(self) -> bool:
        return self.element.upper() in _HYDROGENS


@dataclass(frozen=True)
class Residue:
    chain_id: str
    residue_seq: int
    residue_name: str
    insertion_code: str
    atoms: tuple[AtomRecord, ...]

    @property
    def key(self) -> ResidueKey:
        return (self.chain_id, self.residue_seq, self.insertion_code)

    @property
    def is_standard(self) -> bool:
        return self.residue_name in STANDARD_RESIDUES

    @property
    def is_nucleic(self) -> bool:
        return self.residue_name in NUCLEIC_RESIDUES


@dataclass(frozen=True)
class Chain:
    chain_id: str
    residues: tuple[Residue, ...]


@dataclass(frozen=True)
class ProteinStructure:
    id: str
    chains: tuple[Chain, ...]
    hetero: tuple[AtomRecord, ...] = ()

    @property
    def chain_ids(self) -> list[str]:
        return [c.chain_id for c in self.chains]

    def residues(self) -> Iterator[Residue]:
        for chain in self.chains:
            yield from chain.residues

    def atoms(self) -> Iterator[AtomRecord]:
        for residue in self.residues():
            yield from residue.atoms

    def coordinates(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms()], dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class DatasetEntry:
    structure_id: str
    chain_id: str
    label: str

    @property
    def source_id(self) -> str:
        return f"{self.structure_id}{'_' + self.chain_id if self.chain_id else ''}"


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[DatasetEntry, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[DatasetEntry]:
        return iter(self.entries)


# ---------------------------------------------------------------------------
# fixed-column parsing
# ---------------------------------------------------------------------------


def _infer_element(name_field: str) -> str:
    # element is right-justified in columns 13-14 by convention
    head = "".join(ch for ch in name_field[:2] if ch.isalpha())
    if head:
        return head.upper()
    letters = "".join(ch for ch in name_field if ch.isalpha())
    return letters[:1].upper()


def _parse_atom_line(line: str, lineno: int) -> tuple[AtomRecord, str]:
    line = line.rstrip("\n").ljust(80)
    record = line[0:6]
    try:
        serial = int(line[6:11])
    except ValueError:
        raise ParseError(f"malformed serial field {line[6:11]!r}", lineno) from None
    name_field = line[12:16]
    name = name_field.strip()
    alt_loc = line[16]
    residue_name = line[17:20].strip()
    chain_id = line[21]
    try:
        residue_seq = int(line[22:26])
    except ValueError:
        raise ParseError(f"malformed residue number {line[22:26]!r}", lineno) from None
    insertion_code = line[26].strip()
    try:
        x = float(line[30:38])
        y = float(line[38:46])
        z = float(line[46:54])
    except ValueError:
        raise ParseError(f"malformed coordinate field {line[30:54]!r}", lineno) from None
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise ParseError("non-finite coordinate", lineno)
    if not name or not residue_name:
        raise ParseError("empty atom or residue name", lineno)
    element = line[76:78].strip().upper() or _infer_element(name_field)
    atom = AtomRecord(
        serial=serial,
        name=name,
        residue_name=residue_name,
        chain_id=chain_id,
        residue_seq=residue_seq,
        position=(x, y, z),
        element=element,
        is_hetero=record == "HETATM",
        insertion_code=insertion_code,
    )
    return atom, alt_loc


def parse_structure(text: str, structure_id: str = "") -> ProteinStructure:
    """Parse fixed-column structure text into a :class:`ProteinStructure`.

    ATOM records build the chain/residue hierarchy; HETATM records are kept
    in ``structure.hetero``. Only the first MODEL is read and only the first
    alternate location of each atom is kept.

    Raises
    ------
    ParseError
        On empty input, a file without coordinate records, or a malformed
        numeric field (the error carries the 1-based line number).
    """
    if not text or not text.strip():
        raise ParseError("empty structure text")

    # chain_id -> {residue identity -> [first-seen order, name, atoms]}
    chains: dict[str, dict[tuple[int, str], list]] = {}
    hetero: list[AtomRecord] = []
    seen_atoms: set[tuple] = set()
    order = 0
    models_seen = 0
    found = False

    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[0:6]
        if record.startswith("HEADER") and not structure_id:
            structure_id = line[62:66].strip()
        elif record.startswith("MODEL"):
            models_seen += 1
        elif record.startswith("ENDMDL"):
            if models_seen >= 1:
                break
        elif record in ("ATOM  ", "HETATM"):
            atom, alt_loc = _parse_atom_line(line, lineno)
            found = True
            ident = (atom.is_hetero, atom.residue_key, atom.name)
            if ident in seen_atoms:
                # later altLoc variants (or duplicated names) are dropped
                continue
            seen_atoms.add(ident)
            if atom.is_hetero:
                hetero.append(atom)
                continue
            residues = chains.setdefault(atom.chain_id, {})
            res_id = (atom.residue_seq, atom.insertion_code)
            if res_id not in residues:
                residues[res_id] = [order, atom.residue_name, []]
                order += 1
            residues[res_id][2].append(atom)

    if not found:
        raise ParseError("no ATOM/HETATM records")

    built = []
    for chain_id, residues in chains.items():
        ordered = sorted(residues.items(), key=lambda kv: (kv[0][0], kv[1][0]))
        built.append(
            Chain(
                chain_id,
                tuple(
                    Residue(chain_id, seq, name, icode, tuple(atoms))
                    for (seq, icode), (_, name, atoms) in ordered
                ),
            )
        )
    return ProteinStructure(structure_id, tuple(built), tuple(hetero))


def _format_atom(atom: AtomRecord) -> str:
    if len(atom.name) >= 4 or len(atom.element) == 2:
        name_field = f"{atom.name:<4}"
    else:
        name_field = f" {atom.name:<3}"
    record = "HETATM" if atom.is_hetero else "ATOM  "
    x, y, z = atom.position
    return (
        f"{record}{atom.serial:>5} {name_field} {atom.residue_name:>3} "
        f"{atom.chain_id or ' ':1}{atom.residue_seq:>4}{atom.insertion_code or ' ':1}   "
        f"{x:8.3f}{y:8.3f}{z:8.3f}{1.0:6.2f}{0.0:6.2f}          {atom.element:>2}"
    )


def serialize_structure(structure: ProteinStructure) -> str:
    """Write a structure back to the fixed-column format."""
    lines = []
    if structure.id:
        lines.append(f"{'HEADER':<62}{structure.id:<4}")
    for chain in structure.chains:
        for residue in chain.residues:
            lines.extend(_format_atom(a) for a in residue.atoms)
        lines.append("TER")
    lines.extend(_format_atom(a) for a in structure.hetero)
    lines.append("END")
    return "\n".join(lines) + "\n"


def select_chain(structure: ProteinStructure, chain_id: str | None) -> ProteinStructure:
    """Restrict ``structure`` to one chain; a blank id returns it unchanged."""
    if chain_id is None or not chain_id.strip():
        return structure
    for chain in structure.chains:
        if chain.chain_id == chain_id:
            hetero = tuple(a for a in structure.hetero if a.chain_id == chain_id)
            return replace(structure, chains=(chain,), hetero=hetero)
    raise ChainNotFound(f"chain {chain_id!r} not in structure {structure.id!r}")


def strip_nucleic(structure: ProteinStructure) -> tuple[ProteinStructure, list[AtomRecord]]:
    """Split nucleic-acid residues out of the chains.

    Returns the protein-only structure and the removed nucleic-acid atoms.
    Chains left empty are dropped.
    """
    chains = []
    nucleic: list[AtomRecord] = []
    for chain in structure.chains:
        kept = []
        for residue in chain.residues:
            if residue.is_nucleic:
                nucleic.extend(residue.atoms)
            else:
                kept.append(residue)
        if kept:
            chains.append(Chain(chain.chain_id, tuple(kept)))
    return replace(structure, chains=tuple(chains)), nucleic


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

MANIFEST_HEADER = ("structure_id", "chain_id", "label")


def load_manifest(text: str) -> DatasetManifest:
    """Parse manifest CSV text (header ``structure_id,chain_id,label``)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("empty manifest") from None
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestError(f"bad manifest header {header!r}")

    entries = []
    seen = set()
    for rowno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 3:
            raise ManifestError(f"row {rowno}: expected 3 fields, got {len(row)}")
        structure_id, chain_id, label = (cell.strip() for cell in row)
        if not _ID_RE.match(structure_id):
            raise ManifestError(f"row {rowno}: malformed structure id {structure_id!r}")
        if len(chain_id) > 1:
            raise ManifestError(f"row {rowno}: chain id must be one character")
        if label not in LABELS:
            raise ManifestError(f"row {rowno}: unknown label {label!r}")
        key = (structure_id.upper(), chain_id)
        if key in seen:
            raise ManifestError(f"row {rowno}: duplicate entry {structure_id},{chain_id}")
        seen.add(key)
        entries.append(DatasetEntry(structure_id.upper(), chain_id, label))
    return DatasetManifest(tuple(entries))


def dump_manifest(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in manifest:
        writer.writerow([e.structure_id, e.chain_id, e.label])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


def _urllib_transport(url: str) -> bytes:
    with urllib.request.urlopen(url, timeout=30) as response:
        return response.read()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_path(cache_dir: str | os.PathLike, structure_id: str) -> Path:
    return Path(cache_dir) / f"{structure_id.upper()}.pdb"


def fetch_structure(
    structure_id: str,
    endpoint: str = DEFAULT_ENDPOINT,
    cache_dir: str | os.PathLike = ".",
    offline: bool = False,
    transport: Callable[[str], bytes] | None = None,
) -> str:
    """Return structure-file text, from ``cache_dir`` if present, else via one GET.

    ``endpoint`` is a URL template containing ``{id}``. ``transport`` maps a
    URL to the response body and defaults to urllib; tests inject a stub.
    """
    if not _ID_RE.match(structure_id or ""):
        raise IdError(
            f"malformed structure id {structure_id!r}: expected a digit followed "
            "by three alphanumeric characters"
        )
    path = cache_path(cache_dir, structure_id)
    if path.is_file():
        return path.read_text()
    if offline:
        raise FetchError(f"{structure_id}: not cached and offline mode is on")

    url = endpoint.format(id=structure_id.upper())
    transport = transport or _urllib_transport
    try:
        body = transport(url)
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise FetchError(f"{structure_id}: GET {url} failed: {exc}") from exc
    if not body:
        raise FetchError(f"{structure_id}: empty response from {url}")
    _atomic_write(path, body)
    return body.decode("utf-8", errors="replace")


# ---------------------------------------------------------------------------
# contact labeling
# ---------------------------------------------------------------------------


def label_binding_residues(
    protein_atoms: Iterable[AtomRecord],
    dna_atoms: Iterable[AtomRecord],
    cutoff: float = 4.5,
) -> set[ResidueKey]:
    """Residues with a heavy atom within ``cutoff`` Å (inclusive) of any DNA atom."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    protein_atoms = [a for a in protein_atoms if not a.is_hydrogen]
    dna = np.array([a.position for a in dna_atoms], dtype=float).reshape(-1, 3)
    if not len(dna) or not protein_atoms:
        return set()
    tree = cKDTree(dna)
    coords = np.array([a.position for a in protein_atoms], dtype=float)
    nearest, _ = tree.query(coords, k=1)
    return {a.residue_key for a, d in zip(protein_atoms, nearest) if d <= cutoff}
