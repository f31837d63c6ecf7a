"""Run configuration: an INI file plus command-line overrides.

Sections and keys (all optional; defaults in brackets)::

    [paths]       manifest, cache [cache], charge_table, radius_table,
                  reference_sasa, output_dir [.], endpoint
    [run]         seed [0], jobs [1], offline [false], normalize [true], verbosity [0]
    [solver]      grid_dim [auto], spacing [1.0], solute_dielectric [2.0],
                  solvent_dielectric [80.0], ionic_strength [0.145],
                  temperature [298.15], tolerance [1e-6], max_iterations [20000],
                  sor_omega [1.9], margin [5.0]
    [surface]     probe_radius [1.4], sasa_points [960], threshold [0.40]
    [patch]       potential_threshold [0.0], link_distance [4.5]
    [svm]         kernel [anova], gamma [2], degree [5], c [1.0],
                  kkt_tolerance [1e-3], max_passes [10000]
    [ccnn]        max_hidden_units [5], topology [flat], candidate_pool [8],
                  output_epochs [500], candidate_epochs [300], learning_rate [1.0],
                  target_error [0.01], patience [50]
    [evaluation]  repeats [10], train_fraction [0.8], gamma_range [1-100],
                  degree_range [1-10], hidden_range [1-50], topologies [flat]

Ranges are ``a-b`` (inclusive) or comma lists.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .ccnn import CcnnConfig
from .electrostatics import SolverConfig, load_charge_table, load_radius_table
from .pipeline import ExtractionSettings
from .structure_io import DEFAULT_ENDPOINT
from .surface import load_reference_max
from .svm import KernelSpec, SvmConfig

__all__ = ["RunConfig", "load_config", "parse_range"]

DEFAULTS: dict[str, dict[str, str]] = {
    "paths": {
        "manifest": "", "cache": "cache", "charge_table": "", "radius_table": "",
        "reference_sasa": "", "output_dir": ".", "endpoint": DEFAULT_ENDPOINT,
    },
    "run": {"seed": "0", "jobs": "1", "offline": "false", "normalize": "true", "verbosity": "0"},
    "solver": {
        "grid_dim": "auto", "spacing": "1.0", "solute_dielectric": "2.0",
        "solvent_dielectric": "80.0", "ionic_strength": "0.145", "temperature": "298.15",
        "tolerance": "1e-6", "max_iterations": "20000", "sor_omega": "1.9", "margin": "5.0",
    },
    "surface": {"probe_radius": "1.4", "sasa_points": "960", "threshold": "0.40"},
    "patch": {"potential_threshold": "0.0", "link_distance": "4.5"},
    "svm": {
        "kernel": "anova", "gamma": "2", "degree": "5", "c": "1.0",
        "kkt_tolerance": "1e-3", "max_passes": "10000",
    },
    "ccnn": {
        "max_hidden_units": "5", "topology": "flat", "candidate_pool": "8",
        "output_epochs": "500", "candidate_epochs": "300", "learning_rate": "1.0",
        "target_error": "0.01", "patience": "50",
    },
    "evaluation": {
        "repeats": "10", "train_fraction": "0.8", "gamma_range": "1-100",
        "degree_range": "1-10", "hidden_range": "1-50", "topologies": "flat",
    },
}


def parse_range(text: str, kind=int) -> list:
    """``"1-5"`` -> [1..5]; ``"1,3,8"`` -> [1, 3, 8]."""
    m = re.fullmatch(r"\s*(-?\d+)\s*-\s*(-?\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        values = [kind(v) for v in range(lo, hi + 1)]
    else:
        values = [kind(v.strip()) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError(f"empty range {text!r}")
    return values


@dataclass(frozen=True)
class RunConfig:
    values: dict = field(default_factory=dict)

    def get(self, section: str, key: str) -> str:
        return self.values[section][key]

    def getint(self, section, key) -> int:
        return int(self.get(section, key))

    def getfloat(self, section, key) -> float:
        return float(self.get(section, key))

    def getbool(self, section, key) -> bool:
        v = self.get(section, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"[{section}] {key}: not a boolean: {v!r}")

    def path(self, key: str) -> Path | None:
        v = self.get("paths", key)
        return Path(v) if v else None

    @property
    def seed(self) -> int:
        return self.getint("run", "seed")

    @property
    def jobs(self) -> int:
        return max(1, self.getint("run", "jobs"))

    @property
    def normalize(self) -> bool:
        return self.getbool("run", "normalize")

    @property
    def offline(self) -> bool:
        return self.getbool("run", "offline")

    def fingerprint(self) -> str:
        canonical = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def with_overrides(self, overrides: dict[tuple[str, str], object]) -> "RunConfig":
        values = {s: dict(kv) for s, kv in self.values.items()}
        for (section, key), v in overrides.items():
            if v is None:
                continue
            if key not in values.get(section, {}):
                raise KeyError(f"unknown setting [{section}] {key}")
            values[section][key] = str(v).lower() if isinstance(v, bool) else str(v)
        return RunConfig(values)

    # -- typed views --------------------------------------------------------

    def solver_config(self) -> SolverConfig:
        g = self.get("solver", "grid_dim").strip().lower()
        return SolverConfig(
            grid_dim=65 if g == "auto" else int(g),
            spacing=self.getfloat("solver", "spacing"),
            solute_dielectric=self.getfloat("solver", "solute_dielectric"),
            solvent_dielectric=self.getfloat("solver", "solvent_dielectric"),
            ionic_strength=self.getfloat("solver", "ionic_strength"),
            temperature=self.getfloat("solver", "temperature"),
            tolerance=self.getfloat("solver", "tolerance"),
            max_iterations=self.getint("solver", "max_iterations"),
            sor_omega=self.getfloat("solver", "sor_omega"),
            margin=self.getfloat("solver", "margin"),
        )

    def extraction_settings(self) -> ExtractionSettings:
        charge, radius, ref = (self.path(k) for k in ("charge_table", "radius_table", "reference_sasa"))
        return ExtractionSettings(
            solver=self.solver_config(),
            auto_grid=self.get("solver", "grid_dim").strip().lower() == "auto",
            probe_radius=self.getfloat("surface", "probe_radius"),
            sasa_points=self.getint("surface", "sasa_points"),
            surface_threshold=self.getfloat("surface", "threshold"),
            patch_threshold=self.getfloat("patch", "potential_threshold"),
            link_distance=self.getfloat("patch", "link_distance"),
            charge_table=load_charge_table(charge) if charge else None,
            radius_table=load_radius_table(radius) if radius else None,
            reference_max=load_reference_max(ref) if ref else None,
        ).resolved()

    def svm_config(self) -> SvmConfig:
        kind = self.get("svm", "kernel")
        gamma = self.getfloat("svm", "gamma") if kind in ("radial", "anova") else None
        degree = self.getint("svm", "degree") if kind in ("polynomial", "anova") else None
        return SvmConfig(
            kernel=KernelSpec(kind, gamma, degree),
            C=self.getfloat("svm", "c"),
            kkt_tolerance=self.getfloat("svm", "kkt_tolerance"),
            max_passes=self.getint("svm", "max_passes"),
            seed=self.seed,
        )

    def ccnn_config(self) -> CcnnConfig:
        return CcnnConfig(
            max_hidden_units=self.getint("ccnn", "max_hidden_units"),
            topology=self.get("ccnn", "topology"),
            candidate_pool=self.getint("ccnn", "candidate_pool"),
            output_epochs=self.getint("ccnn", "output_epochs"),
            candidate_epochs=self.getint("ccnn", "candidate_epochs"),
            learning_rate=self.getfloat("ccnn", "learning_rate"),
            target_error=self.getfloat("ccnn", "target_error"),
            patience=self.getint("ccnn", "patience"),
            seed=self.seed,
        )

    def validate(self) -> None:
        """Build every typed view once so bad values fail at load time."""
        for key in ("manifest", "charge_table", "radius_table", "reference_sasa"):
            p = self.path(key)
            if p is not None and not p.is_file():
                raise FileNotFoundError(f"[paths] {key}: no such file: {p}")
        self.solver_config()
        self.svm_config()
        self.ccnn_config()
        ev = self.values["evaluation"]
        if int(ev["repeats"]) < 1:
            raise ValueError("[evaluation] repeats must be >= 1")
        if not 0 < float(ev["train_fraction"]) < 1:
            raise ValueError("[evaluation] train_fraction must lie in (0, 1)")
        for key in ("gamma_range", "degree_range", "hidden_range"):
            parse_range(ev[key])
        self.seed, self.jobs, self.normalize, self.offline


def load_config(path: str | os.PathLike | None = None) -> RunConfig:
    """Defaults, then the INI file at ``path`` (relative paths resolved against its directory)."""
    values = {s: dict(kv) for s, kv in DEFAULTS.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        with open(path) as fh:
            parser.read_file(fh)
        base = Path(path).resolve().parent
        for section in parser.sections():
            if section not in values:
                raise KeyError(f"unknown config section [{section}]")
            for key, v in parser.items(section):
                if key not in values[section]:
                    raise KeyError(f"unknown setting [{section}] {key}")
                if section == "paths" and key != "endpoint" and v and not os.path.isabs(v):
                    v = str(base / v)
                values[section][key] = v
    return RunConfig(values)
