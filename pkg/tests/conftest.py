from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from dbpred.features import FeatureVector, Normalizer
from dbpred.structure_io import BINDING, NON_BINDING

SAMPLE = Path(str(resources.files("dbpred.data").joinpath("sample")))

# (criterion, passed, detail) lines collected by the acceptance suite
VERDICTS: list[tuple[str, bool, str]] = []


def atom_line(serial, name, resname, chain, seq, xyz, element=None, record="ATOM", altloc=" "):
    """One fixed-column coordinate record."""
    element = element or name[0]
    field = f" {name:<3}" if len(name) < 4 else name
    return (f"{record:<6}{serial:>5} {field}{altloc}{resname:>3} {chain}{seq:>4}    "
            f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}{1.0:6.2f}{0.0:6.2f}          {element:>2}")


def rows_from(X, y, names=None):
    """FeatureVectors from an array and +1/-1 (or label string) targets."""
    out = []
    for i, (x, t) in enumerate(zip(np.asarray(X, dtype=float), y)):
        label = t if isinstance(t, str) else (BINDING if t > 0 else NON_BINDING)
        out.append(FeatureVector(x, label, f"r{i}"))
    return out


def identity_for(dim):
    return Normalizer.identity(dim, tuple(f"x{i}" for i in range(dim)))


@pytest.fixture(scope="session")
def sample_dir():
    return SAMPLE


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
