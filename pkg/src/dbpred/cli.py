"""``dbp`` command-line front end.

Exit codes: 0 success, 2 input error, 3 data error, 4 schema error, 5 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import errors
from .ccnn import load_ccnn, predict_ccnn, save_ccnn, train_ccnn
from .config import RunConfig, load_config, parse_range
from .evaluation import ccnn_learner, jackknife_evaluate, svm_learner, sweep_ccnn, sweep_svm
from .features import FEATURE_NAMES, FeatureVector, Normalizer, read_feature_csv, write_feature_csv
from .pipeline import extract_entry
from .structure_io import BINDING, LABELS, STANDARD_RESIDUES, fetch_structure, load_manifest
from .svm import load_svm, predict_svm, save_svm, train_svm

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_SCHEMA, EXIT_INTERNAL = 0, 2, 3, 4, 5

log = logging.getLogger("dbpred")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# exception class -> exit code; first match wins
_EXIT_CODES = (
    (errors.SchemaError, EXIT_SCHEMA),
    (errors.ManifestError, EXIT_INPUT),
    (errors.IdError, EXIT_INPUT),
    (errors.ModelFormatError, EXIT_INPUT),
    (errors.ChargeTableError, EXIT_INPUT),
    (errors.DbpError, EXIT_DATA),
    (FileNotFoundError, EXIT_INPUT),
    (IsADirectoryError, EXIT_INPUT),
    (KeyError, EXIT_INPUT),
    (ValueError, EXIT_DATA),
)


def _exit_code(exc: BaseException) -> int:
    for cls, code in _EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        atomic_write_text(out, text)


def _read_text(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def _read_labeled(path: str) -> list[FeatureVector]:
    text = _read_text(path)
    header = next(csv.reader(io.StringIO(text)), [])
    if "label" not in header:
        raise CliError(f"{path}: no label column", EXIT_DATA)
    rows = read_feature_csv(text, require_labels=True)
    if not rows:
        raise CliError(f"{path}: no rows", EXIT_DATA)
    return rows


def _identity_for(rows) -> Normalizer:
    return Normalizer.identity(len(rows[0].values), FEATURE_NAMES)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fetch(cfg: RunConfig, args) -> int:
    ids = list(args.ids)
    if not ids:
        manifest = cfg.path("manifest")
        if manifest is None:
            raise CliError("give structure ids or --manifest", EXIT_INPUT)
        ids = sorted({e.structure_id for e in load_manifest(_read_text(manifest))})
    failed = 0
    for sid in ids:
        try:
            fetch_structure(sid, cfg.get("paths", "endpoint"), cfg.get("paths", "cache"), cfg.offline)
            print(f"{sid}\tok")
        except (errors.FetchError, errors.IdError) as exc:
            failed += 1
            log.error("%s", exc)
            print(f"{sid}\tfailed")
    if failed:
        log.error("%d of %d structures not fetched", failed, len(ids))
        return EXIT_DATA
    return EXIT_OK


def _extract_one(args):
    entry, cache, settings, endpoint, offline = args
    try:
        return entry, extract_entry(entry, cache, settings, endpoint, offline), None
    except Exception as exc:  # reported per entry, never aborts the run
        return entry, None, f"{type(exc).__name__}: {exc}"


def cmd_extract(cfg: RunConfig, args) -> int:
    manifest_path = cfg.path("manifest")
    if manifest_path is None:
        raise CliError("extract needs --manifest", EXIT_INPUT)
    try:
        manifest = load_manifest(_read_text(manifest_path))
    except OSError as exc:
        raise CliError(f"cannot read manifest: {exc}", EXIT_INPUT) from exc
    settings = cfg.extraction_settings()
    jobs = [(e, cfg.get("paths", "cache"), settings, cfg.get("paths", "endpoint"), cfg.offline)
            for e in manifest]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_extract_one, jobs))
    else:
        results = [_extract_one(j) for j in jobs]

    rows, failed = [], 0
    for entry, result, error in results:
        if error is not None:
            failed += 1
            log.error("%s: %s", entry.source_id, error)
            continue
        if result.surface_empty:
            log.warning("%s: surface composition block is all zero", entry.source_id)
        rows.append(result.features)
    _emit(write_feature_csv(rows), args.output)
    print(f"extracted {len(rows)} of {len(manifest)} entries ({failed} failed)", file=sys.stderr)
    return EXIT_DATA if failed else EXIT_OK


def _train(cfg: RunConfig, learner: str, rows):
    normalizer = None if cfg.normalize else _identity_for(rows)
    if learner == "svm":
        model = train_svm(rows, cfg.svm_config(), normalizer)
        return model, save_svm(model), (
            f"svm kernel={model.kernel.kind} gamma={model.kernel.gamma} degree={model.kernel.degree} "
            f"C={model.C} support_vectors={len(model.support_vectors)} converged={model.converged}"
        )
    model = train_ccnn(rows, cfg.ccnn_config(), normalizer)
    last = model.trace[-1]
    return model, save_ccnn(model), (
        f"ccnn topology={model.topology} budget={model.max_hidden_units} "
        f"hidden_units={model.n_hidden} error={last.error:.6g} train_accuracy={last.accuracy:.4f}"
    )


def _with_fingerprint(model_text: str, cfg: RunConfig) -> str:
    doc = json.loads(model_text)
    doc["config_sha256"] = cfg.fingerprint()
    doc["seed"] = cfg.seed
    return json.dumps(doc, indent=1) + "\n"


def cmd_train(cfg: RunConfig, args) -> int:
    rows = _read_labeled(args.features)
    _, text, summary = _train(cfg, args.learner, rows)
    _emit(_with_fingerprint(text, cfg), args.output)
    print(summary, file=sys.stderr)
    return EXIT_OK


def _learner(cfg: RunConfig, name: str):
    return svm_learner(cfg.svm_config()) if name == "svm" else ccnn_learner(cfg.ccnn_config())


def cmd_evaluate(cfg: RunConfig, args) -> int:
    rows = _read_labeled(args.features)
    repeats = args.repeats or cfg.getint("evaluation", "repeats")
    report = jackknife_evaluate(
        _learner(cfg, args.learner), rows, repeats, cfg.seed,
        train_fraction=cfg.getfloat("evaluation", "train_fraction"),
        normalize=cfg.normalize,
    )
    doc = {
        "learner": args.learner,
        "config_sha256": cfg.fingerprint(),
        "seed": cfg.seed,
        "rows": len(rows),
        **report.to_dict(),
    }
    _emit(json.dumps(doc, indent=1) + "\n", args.output)

    def pct(v):
        return "undefined" if v is None else f"{100 * v:.2f}%"

    print(f"accuracy {pct(report.mean_accuracy)}  sensitivity {pct(report.mean_sensitivity)}  "
          f"specificity {pct(report.mean_specificity)}  ({repeats} repeats)", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    rows = _read_labeled(args.features)
    ev = cfg.values["evaluation"]
    repeats = args.repeats or int(ev["repeats"])
    if args.learner == "svm":
        report = sweep_svm(
            rows, parse_range(ev["gamma_range"], float), parse_range(ev["degree_range"]),
            cfg.svm_config(), repeats, cfg.seed, cfg.jobs, cfg.normalize,
        )
    else:
        topologies = [t.strip() for t in ev["topologies"].split(",") if t.strip()]
        report = sweep_ccnn(
            rows, parse_range(ev["hidden_range"]), topologies,
            cfg.ccnn_config(), repeats, cfg.seed, cfg.jobs, cfg.normalize,
        )
    _emit(report.to_csv(), args.output)
    if args.output and args.output != "-":
        meta = {
            "learner": args.learner,
            "config_sha256": cfg.fingerprint(),
            "seed": cfg.seed,
            "best_row": report.best_index,
            "errors": {str(i): r.error for i, r in enumerate(report.rows) if r.error},
        }
        atomic_write_text(args.output + ".json", json.dumps(meta, indent=1) + "\n")
    best = report.best
    if best is None:
        print("no cell produced a defined accuracy", file=sys.stderr)
        return EXIT_DATA
    params = " ".join(f"{k}={v}" for k, v in best.params)
    print(f"best {params} mean_accuracy={best.mean_accuracy:.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    text = _read_text(args.model)
    try:
        fmt = json.loads(text).get("format")
    except (json.JSONDecodeError, AttributeError) as exc:
        raise errors.ModelFormatError(f"{args.model}: not a model file") from exc
    if fmt == "dbpred-svm":
        model, predict = load_svm(text), predict_svm
    else:
        model, predict = load_ccnn(text), predict_ccnn
    rows = read_feature_csv(_read_text(args.features), names=model.schema)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source_id", "predicted_label", "score"])
    for row in rows:
        label, score = predict(model, row)
        writer.writerow([row.source_id, label, repr(float(score))])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def charge_histogram(charges, edges) -> list[int]:
    """Counts per half-open bin ``[edges[i], edges[i+1])``; the last bin is closed."""
    counts, _ = np.histogram(np.asarray(charges, dtype=float), bins=np.asarray(edges, dtype=float))
    return counts.tolist()


def build_report(rows: list[FeatureVector], bin_width: float = 2.0) -> str:
    """Per-class overall-charge histograms and per-class mean compositions as one CSV."""
    if not rows:
        raise errors.InsufficientData("no rows to report on")
    charges = [r.values[0] for r in rows]
    lo = math.floor(min(charges) / bin_width) * bin_width
    hi = (math.floor(max(charges) / bin_width) + 1) * bin_width
    edges = [lo + i * bin_width for i in range(int(round((hi - lo) / bin_width)) + 1)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["section", "label", "item", "low", "high", "value"])
    classes = [lab for lab in LABELS if any(r.label == lab for r in rows)]
    for lab in classes:
        counts = charge_histogram([r.values[0] for r in rows if r.label == lab], edges)
        for i, c in enumerate(counts):
            writer.writerow(["charge_histogram", lab, "", repr(edges[i]), repr(edges[i + 1]), c])
    for section, offset in (("overall_composition", 2), ("surface_composition", 22)):
        for lab in classes:
            block = np.stack([r.values[offset:offset + 20] for r in rows if r.label == lab])
            for res, mean in zip(STANDARD_RESIDUES, block.mean(axis=0)):
                writer.writerow([section, lab, res, "", "", repr(float(mean))])
    return buf.getvalue()


def cmd_report(cfg: RunConfig, args) -> int:
    rows = _read_labeled(args.features)
    classes = {r.label for r in rows}
    if len(classes) < 2:
        log.warning("only one class present (%s); one block per section", classes.pop())
    _emit(build_report(rows, args.bin_width), args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="INI run configuration")
    p.add_argument("--seed", type=int, default=d, help="top-level random seed")
    p.add_argument("--jobs", type=int, default=d, help="worker processes")
    p.add_argument("--offline", action="store_true", default=d, help="never touch the network")
    p.add_argument("--no-normalize", dest="no_normalize", action="store_true", default=d,
                   help="train on raw feature values")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dbp", description="DNA-binding protein prediction")
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, func):
        p = sub.add_parser(name, help=help_text)
        _add_globals(p, suppress=True)
        p.set_defaults(func=func)
        return p

    p = add("fetch", "download structures into the cache", cmd_fetch)
    p.add_argument("ids", nargs="*", help="structure ids (default: every manifest id)")
    p.add_argument("--manifest")
    p.add_argument("--cache")

    p = add("extract", "compute feature rows for a manifest", cmd_extract)
    p.add_argument("--manifest")
    p.add_argument("--cache")
    p.add_argument("-o", "--output", help="feature CSV (default stdout)")

    for name, func, help_text in (
        ("train", cmd_train, "fit a model on a labeled feature CSV"),
        ("evaluate", cmd_evaluate, "repeated random-split evaluation"),
        ("sweep", cmd_sweep, "hyperparameter grid of repeated evaluations"),
    ):
        p = add(name, help_text, func)
        p.add_argument("features")
        p.add_argument("--learner", choices=("svm", "ccnn"), default="svm")
        p.add_argument("-o", "--output")
        p.add_argument("--gamma", type=float)
        p.add_argument("--degree", type=int)
        p.add_argument("-C", dest="C", type=float)
        p.add_argument("--hidden", type=int, help="CCNN hidden-unit budget")
        p.add_argument("--topology", choices=("flat", "cascade"))
        if name != "train":
            p.add_argument("--repeats", type=int)
        if name == "sweep":
            p.add_argument("--gamma-range")
            p.add_argument("--degree-range")
            p.add_argument("--hidden-range")
            p.add_argument("--topologies")

    p = add("predict", "label rows with a trained model", cmd_predict)
    p.add_argument("model")
    p.add_argument("features")
    p.add_argument("-o", "--output")

    p = add("report", "charge histograms and composition means per class", cmd_report)
    p.add_argument("features")
    p.add_argument("--bin-width", type=float, default=2.0)
    p.add_argument("-o", "--output")
    return parser


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        ("run", "seed"): g("seed"),
        ("run", "jobs"): g("jobs"),
        ("run", "offline"): True if g("offline") else None,
        ("run", "normalize"): False if g("no_normalize") else None,
        ("paths", "manifest"): g("manifest"),
        ("paths", "cache"): g("cache"),
        ("svm", "gamma"): g("gamma"),
        ("svm", "degree"): g("degree"),
        ("svm", "c"): g("C"),
        ("ccnn", "max_hidden_units"): g("hidden"),
        ("ccnn", "topology"): g("topology"),
        ("evaluation", "gamma_range"): g("gamma_range"),
        ("evaluation", "degree_range"): g("degree_range"),
        ("evaluation", "hidden_range"): g("hidden_range"),
        ("evaluation", "topologies"): g("topologies"),
    }


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(2, args.verbose or 0)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config).with_overrides(_overrides(args))
        cfg.validate()
    except (OSError, KeyError, ValueError) as exc:
        print(f"dbp: configuration error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(cfg, args)
    except CliError as exc:
        print(f"dbp {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:
        code = _exit_code(exc)
        print(f"dbp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        if code == EXIT_INTERNAL:
            log.exception("internal error")
        return code


if __name__ == "__main__":
    sys.exit(main())
