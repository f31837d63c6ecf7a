import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbpred.electrostatics import ChargedAtomSet
from dbpred.errors import ReferenceMiss
from dbpred.structure_io import AtomRecord
from dbpred.surface import (
    Patch,
    SasaResult,
    classify_surface_residues,
    compute_sasa,
    detect_patches,
    format_patch_report,
    largest_patch_size,
    load_reference_max,
    sphere_points,
)


def atoms_with_residues(positions, radii, residue_of):
    records = tuple(
        AtomRecord(i + 1, "CA", "ALA", "A", residue_of[i], tuple(map(float, p)), "C")
        for i, p in enumerate(positions)
    )
    return ChargedAtomSet(np.asarray(positions, dtype=float), np.zeros(len(positions)), radii, records)


def test_sphere_points_on_unit_sphere():
    pts = sphere_points(960)
    assert pts.shape == (960, 3)
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)
    assert np.allclose(pts.mean(axis=0), 0.0, atol=1e-2)


def test_isolated_atom():
    s = ChargedAtomSet.from_arrays([[0, 0, 0]], [0.0], [1.9])
    area = compute_sasa(s).per_atom_area[0]
    assert math.isclose(area, 4 * math.pi * 3.3**2, rel_tol=0.02)
    assert math.isclose(4 * math.pi * 3.3**2, 136.85, rel_tol=1e-4)


def test_separated_atoms_do_not_occlude():
    s = ChargedAtomSet.from_arrays([[0, 0, 0], [20, 0, 0]], [0.0, 0.0], [1.7, 2.0])
    res = compute_sasa(s)
    expected = 4 * math.pi * ((1.7 + 1.4) ** 2 + (2.0 + 1.4) ** 2)
    assert math.isclose(res.total, expected, rel_tol=1e-12)


def test_point_count_floor():
    s = ChargedAtomSet.from_arrays([[0, 0, 0]], [0.0], [1.9])
    with pytest.raises(ValueError):
        compute_sasa(s, points_per_atom=91)


def _monte_carlo_areas(centers, radii, probe, samples, rng):
    """Uniform random points on each expanded sphere, tested against the others."""
    expanded = radii + probe
    out = []
    for i, (c, r) in enumerate(zip(centers, expanded)):
        v = rng.normal(size=(samples, 3))
        pts = c + r * v / np.linalg.norm(v, axis=1, keepdims=True)
        free = np.ones(samples, dtype=bool)
        for j, (cj, rj) in enumerate(zip(centers, expanded)):
            if j != i:
                free &= np.linalg.norm(pts - cj, axis=1) >= rj
        out.append(4 * math.pi * r * r * free.mean())
    return np.array(out)


def test_overlapping_diatomic_against_monte_carlo():
    centers = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    radii = np.array([1.7, 1.7])
    got = compute_sasa(ChargedAtomSet.from_arrays(centers, [0, 0], radii)).per_atom_area
    oracle = _monte_carlo_areas(centers, radii, 1.4, 20_000, np.random.default_rng(0))
    assert np.allclose(got, oracle, rtol=0.05)


cloud = st.lists(st.tuples(*[st.floats(-6, 6)] * 3), min_size=1, max_size=12)


@settings(max_examples=40, deadline=None)
@given(cloud, st.tuples(*[st.floats(-6, 6)] * 3))
def test_adding_atom_never_increases_area(points, extra):
    pts = np.array(points)
    before = compute_sasa(ChargedAtomSet.from_arrays(pts, np.zeros(len(pts)), np.full(len(pts), 1.6)),
                          points_per_atom=240).per_atom_area
    grown = np.vstack([pts, extra])
    after = compute_sasa(ChargedAtomSet.from_arrays(grown, np.zeros(len(grown)), np.full(len(grown), 1.6)),
                         points_per_atom=240).per_atom_area
    assert np.all(after[:-1] <= before + 1e-12)


@settings(max_examples=40, deadline=None)
@given(cloud, st.data())
def test_bounds_and_residue_sums(points, data):
    n = len(points)
    radii = np.array(data.draw(st.lists(st.floats(1.0, 2.2), min_size=n, max_size=n)))
    residue_of = data.draw(st.lists(st.integers(1, 4), min_size=n, max_size=n))
    res = compute_sasa(atoms_with_residues(points, radii, residue_of), points_per_atom=120)
    cap = 4 * math.pi * (radii + 1.4) ** 2
    assert np.all(res.per_atom_area >= 0)
    assert np.all(res.per_atom_area <= cap * (1 + 1e-12))
    for key, total in res.per_residue_area.items():
        members = [i for i, r in enumerate(residue_of) if ("A", r, "") == key]
        assert abs(total - math.fsum(res.per_atom_area[members])) <= 1e-9


# -- classification ---------------------------------------------------------------


def _sasa(areas: dict, names: dict):
    return SasaResult(np.array(list(areas.values())), areas, 1.4, 960, names)


def test_threshold_is_strict():
    k1, k2, k3 = ("A", 1, ""), ("A", 2, ""), ("A", 3, "")
    sasa = _sasa({k1: 41.0, k2: 40.0, k3: 0.0}, {k1: "ALA", k2: "ALA", k3: "ALA"})
    c = classify_surface_residues(sasa, {"ALA": 100.0})
    assert c.surface == {k1}
    assert c.buried == {k2, k3}
    assert c.relative_accessibility[k3] == 0.0
    assert not (c.surface & c.buried)


def test_reference_miss():
    k = ("A", 1, "")
    with pytest.raises(ReferenceMiss):
        classify_surface_residues(_sasa({k: 10.0}, {k: "XYZ"}), {"ALA": 100.0})


def test_bundled_reference_table():
    ref = load_reference_max()
    assert len(ref) == 20
    assert all(v > 0 for v in ref.values())


# -- patches ------------------------------------------------------------------------


def test_no_positive_atoms():
    s = ChargedAtomSet.from_arrays(np.zeros((3, 3)), [0, 0, 0])
    assert detect_patches(s, {0, 1, 2}, [-1.0, 0.0, -0.5]) == []


def test_single_component():
    s = ChargedAtomSet.from_arrays([[0, 0, 0], [3, 0, 0], [0, 3, 0]], [0, 0, 0])
    patches = detect_patches(s, {0, 1, 2}, [1.0, 2.0, 3.0])
    assert len(patches) == 1
    assert patches[0].size == 3 and patches[0].atom_indices == {0, 1, 2}
    assert math.isclose(patches[0].mean_potential, 2.0)


def test_link_distance_inclusive():
    s = ChargedAtomSet.from_arrays([[0, 0, 0], [4.5, 0, 0]], [0, 0])
    assert len(detect_patches(s, {0, 1}, [1.0, 1.0])) == 1


def _oracle_components(pos, nodes, link):
    """Brute-force O(n^2) union-find."""
    parent = {i: i for i in nodes}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for a in nodes:
        for b in nodes:
            if a < b and np.linalg.norm(pos[a] - pos[b]) <= link:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    groups = {}
    for i in nodes:
        groups.setdefault(find(i), set()).add(i)
    return sorted(map(frozenset, groups.values()), key=lambda g: (-len(g), min(g)))


@pytest.mark.parametrize("seed", range(5))
def test_patches_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 20, (50, 3))
    pot = rng.normal(size=50)
    surface = set(rng.choice(50, 40, replace=False).tolist())
    s = ChargedAtomSet.from_arrays(pos, np.zeros(50))
    got = [p.atom_indices for p in detect_patches(s, surface, pot)]
    nodes = sorted(i for i in surface if pot[i] > 0)
    assert got == _oracle_components(pos, nodes, 4.5)
    # partition: every above-threshold surface atom in exactly one patch
    members = [i for p in got for i in p]
    assert sorted(members) == nodes


@settings(max_examples=30, deadline=None)
@given(st.integers(5, 40), st.randoms(use_true_random=False), st.integers(0, 2**31))
def test_patches_invariant_under_reordering(n, rnd, seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 15, (n, 3))
    pot = rng.normal(size=n)
    perm = list(range(n))
    rnd.shuffle(perm)
    a = detect_patches(ChargedAtomSet.from_arrays(pos, np.zeros(n)), range(n), pot)
    b = detect_patches(ChargedAtomSet.from_arrays(pos[perm], np.zeros(n)), range(n), pot[perm])
    mapped = sorted((frozenset(int(perm[i]) for i in p.atom_indices) for p in b),
                    key=lambda g: (-len(g), min(g)))
    assert [p.atom_indices for p in a] == mapped
    assert sorted(p.size for p in a) == sorted(p.size for p in b)


def test_largest_patch_size():
    assert largest_patch_size([]) == 0
    patches = [Patch(frozenset(range(k)), k, 1.0) for k in (3, 7, 2)]
    assert largest_patch_size(patches) == 7


def test_patch_report():
    patches = [Patch(frozenset({0, 1}), 2, 1.5), Patch(frozenset({5}), 1, 0.25)]
    assert format_patch_report(patches) == "patch_rank,size,mean_potential\n1,2,1.5\n2,1,0.25\n"
