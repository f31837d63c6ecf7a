"""Jack-knife evaluation (repeated random 80/20 splits), metrics and parameter sweeps."""

from __future__ import annotations

import hashlib
import io
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np

from .ccnn import CcnnConfig, predict_ccnn, train_ccnn
from .errors import DbpError, DimensionError, EmptyEvaluation, EvaluationImpossible, InsufficientData
from .features import FEATURE_NAMES, FeatureVector, Normalizer, fit_normalizer
from .structure_io import BINDING, NON_BINDING
from .svm import KernelSpec, SvmConfig, predict_svm, train_svm

__all__ = [
    "ConfusionCounts",
    "MetricsReport",
    "Learner",
    "RepeatResult",
    "EvaluationReport",
    "SweepRow",
    "SweepReport",
    "confusion",
    "metrics",
    "jackknife_split",
    "derive_seed",
    "svm_learner",
    "ccnn_learner",
    "jackknife_evaluate",
    "sweep_svm",
    "sweep_ccnn",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    counts: ConfusionCounts
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None


def confusion(predicted: Sequence[str], actual: Sequence[str]) -> ConfusionCounts:
    if len(predicted) != len(actual):
        raise DimensionError(f"{len(predicted)} predictions for {len(actual)} labels")
    tp = tn = fp = fn = 0
    for p, a in zip(predicted, actual):
        if p == BINDING and a == BINDING:
            tp += 1
        elif p == NON_BINDING and a == NON_BINDING:
            tn += 1
        elif p == BINDING:
            fp += 1
        else:
            fn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(counts: ConfusionCounts) -> MetricsReport:
    """Accuracy, sensitivity and specificity; a metric with a zero denominator is None."""
    if counts.total == 0:
        raise EmptyEvaluation("no evaluated rows")
    return MetricsReport(
        counts,
        accuracy=(counts.tp + counts.tn) / counts.total,
        sensitivity=_ratio(counts.tp, counts.tp + counts.fn),
        specificity=_ratio(counts.tn, counts.tn + counts.fp),
    )


def jackknife_split(n: int, train_fraction: float = 0.8, rng_seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Random disjoint (train, test) index arrays with ``floor(train_fraction * n)`` training rows."""
    if n < 2:
        raise InsufficientData("need at least 2 rows to split")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    n_train = math.floor(n * train_fraction)
    perm = np.random.default_rng(rng_seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _stable_hash(obj: Any) -> int:
    return int.from_bytes(hashlib.sha256(repr(obj).encode()).digest()[:8], "little")


def derive_seed(seed: int, cell: tuple = (), repeat: int = 0, attempt: int = 0) -> int:
    """Independent, reproducible 32-bit seed for one (cell, repeat, attempt)."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _stable_hash(tuple(cell)), repeat, attempt])
    return int(ss.generate_state(1)[0])


# ---------------------------------------------------------------------------
# learners
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Learner:
    """Bundles a fit routine with the matching predict routine.

    ``fit(rows, normalizer, seed)`` returns a model; ``predict(model, row)``
    returns ``(label, score)``; ``converged(model)`` reports training status.
    """

    name: str
    fit: Callable[[Sequence[FeatureVector], Normalizer, int], Any]
    predict: Callable[[Any, FeatureVector], tuple[str, float]]
    converged: Callable[[Any], bool] = lambda model: True


@dataclass(frozen=True)
class _SvmFit:
    config: SvmConfig

    def __call__(self, rows, normalizer, seed):
        return train_svm(rows, replace(self.config, seed=seed), normalizer)


@dataclass(frozen=True)
class _CcnnFit:
    config: CcnnConfig

    def __call__(self, rows, normalizer, seed):
        return train_ccnn(rows, replace(self.config, seed=seed), normalizer)


def _svm_converged(model) -> bool:
    return model.converged


def _ccnn_converged(model) -> bool:
    return True


def svm_learner(config: SvmConfig | None = None) -> Learner:
    return Learner("svm", _SvmFit(config or SvmConfig()), predict_svm, _svm_converged)


def ccnn_learner(config: CcnnConfig | None = None) -> Learner:
    return Learner("ccnn", _CcnnFit(config or CcnnConfig()), predict_ccnn, _ccnn_converged)


# ---------------------------------------------------------------------------
# repeated evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RepeatResult:
    repeat: int
    seed: int
    redraws: int
    metrics: MetricsReport
    converged: bool


def _mean_sd(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None, 0
    sd = statistics.pstdev(vals) if len(vals) > 1 else 0.0
    return math.fsum(vals) / len(vals), sd, len(vals)


@dataclass(frozen=True)
class EvaluationReport:
    repeats: tuple[RepeatResult, ...]
    mean_accuracy: float | None
    mean_sensitivity: float | None
    mean_specificity: float | None
    sd_accuracy: float | None
    sd_sensitivity: float | None
    sd_specificity: float | None
    defined: dict = field(default_factory=dict)
    mean_counts: dict = field(default_factory=dict)

    @property
    def converged_fraction(self) -> float:
        return sum(r.converged for r in self.repeats) / len(self.repeats)

    @classmethod
    def aggregate(cls, repeats: Sequence[RepeatResult]) -> "EvaluationReport":
        acc = _mean_sd(r.metrics.accuracy for r in repeats)
        sen = _mean_sd(r.metrics.sensitivity for r in repeats)
        spe = _mean_sd(r.metrics.specificity for r in repeats)
        counts = {
            k: math.fsum(getattr(r.metrics.counts, k) for r in repeats) / len(repeats)
            for k in ("tp", "tn", "fp", "fn")
        }
        return cls(
            tuple(repeats), acc[0], sen[0], spe[0], acc[1], sen[1], spe[1],
            {"accuracy": acc[2], "sensitivity": sen[2], "specificity": spe[2]},
            counts,
        )

    def to_dict(self) -> dict:
        return {
            "repeats": [
                {
                    "repeat": r.repeat,
                    "seed": r.seed,
                    "redraws": r.redraws,
                    "converged": r.converged,
                    "counts": asdict(r.metrics.counts),
                    "accuracy": r.metrics.accuracy,
                    "sensitivity": r.metrics.sensitivity,
                    "specificity": r.metrics.specificity,
                }
                for r in self.repeats
            ],
            "aggregate": {
                "mean_accuracy": self.mean_accuracy,
                "mean_sensitivity": self.mean_sensitivity,
                "mean_specificity": self.mean_specificity,
                "sd_accuracy": self.sd_accuracy,
                "sd_sensitivity": self.sd_sensitivity,
                "sd_specificity": self.sd_specificity,
                "defined_repeats": dict(self.defined),
                "mean_counts": dict(self.mean_counts),
                "converged_fraction": self.converged_fraction,
            },
        }


def jackknife_evaluate(
    learner: Learner,
    rows: Sequence[FeatureVector],
    repeats: int = 10,
    rng_seed: int = 0,
    train_fraction: float = 0.8,
    normalize: bool = True,
    normalizer_fn: Callable[[Sequence[FeatureVector]], Normalizer] = fit_normalizer,
    cell: tuple = (),
    max_redraws: int = 100,
) -> EvaluationReport:
    """Average test metrics over ``repeats`` random train/test splits.

    Each repeat draws a fresh split from a seed derived from ``rng_seed``,
    ``cell`` and the repeat index, fits the normalizer on the training rows
    only, trains, and scores the held-out rows. Splits whose training part
    holds a single class are redrawn.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    labels = [r.label for r in rows]
    if any(lab not in (BINDING, NON_BINDING) for lab in labels):
        raise ValueError("every row needs a class label")
    n = len(rows)
    n_train = math.floor(n * train_fraction) if n >= 2 else 0
    if set(labels) != {BINDING, NON_BINDING} or n_train < 2:
        raise EvaluationImpossible("no achievable training split holds both classes")

    results = []
    for rep in range(repeats):
        for attempt in range(max_redraws):
            seed = derive_seed(rng_seed, cell, rep, attempt)
            train_idx, test_idx = jackknife_split(n, train_fraction, seed)
            if len({labels[i] for i in train_idx}) == 2:
                break
            log.info("repeat %d: single-class training split (seed %d), redrawing", rep, seed)
        else:
            raise EvaluationImpossible(f"repeat {rep}: {max_redraws} single-class splits in a row")
        train = [rows[i] for i in train_idx]
        test = [rows[i] for i in test_idx]
        if normalize:
            normalizer = normalizer_fn(train)
        else:
            normalizer = Normalizer.identity(len(rows[0].values), _names_for(rows[0]))
        model = learner.fit(train, normalizer, seed)
        predicted = [learner.predict(model, row)[0] for row in test]
        counts = confusion(predicted, [r.label for r in test])
        results.append(RepeatResult(rep, seed, attempt, metrics(counts), bool(learner.converged(model))))
    return EvaluationReport.aggregate(results)


def _names_for(row: FeatureVector) -> tuple[str, ...]:
    n = len(row.values)
    return FEATURE_NAMES if n == len(FEATURE_NAMES) else tuple(f"f{i}" for i in range(n))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    params: tuple[tuple[str, Any], ...]
    report: EvaluationReport | None
    error: str | None = None

    @property
    def mean_accuracy(self) -> float | None:
        return None if self.report is None else self.report.mean_accuracy


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    repeats: int
    seed: int

    @property
    def best_index(self) -> int | None:
        best, best_acc = None, -math.inf
        for i, row in enumerate(self.rows):
            acc = row.mean_accuracy
            if acc is not None and acc > best_acc:
                best, best_acc = i, acc
        return best

    @property
    def best(self) -> SweepRow | None:
        i = self.best_index
        return None if i is None else self.rows[i]

    def cell(self, **params) -> SweepRow | None:
        for row in self.rows:
            if all(dict(row.params).get(k) == v for k, v in params.items()):
                return row
        return None

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None else repr(v)

        buf = io.StringIO()
        buf.write("param_1,param_2,mean_accuracy,mean_sensitivity,mean_specificity,"
                  "sd_accuracy,repeats,converged_fraction\n")
        for row in self.rows:
            p = [v for _, v in row.params] + [""] * 2
            r = row.report
            fields = [str(p[0]), str(p[1])]
            if r is None:
                fields += ["", "", "", "", str(self.repeats), ""]
            else:
                fields += [fmt(r.mean_accuracy), fmt(r.mean_sensitivity), fmt(r.mean_specificity),
                           fmt(r.sd_accuracy), str(len(r.repeats)), fmt(r.converged_fraction)]
            buf.write(",".join(fields) + "\n")
        return buf.getvalue()


def _run_cell(args) -> SweepRow:
    learner, rows, params, repeats, seed, normalize = args
    cell = tuple(v for _, v in params)
    try:
        report = jackknife_evaluate(learner, rows, repeats, seed, normalize=normalize, cell=cell)
        return SweepRow(params, report)
    except (DbpError, ValueError, ArithmeticError) as exc:
        log.warning("sweep cell %s failed: %s", dict(params), exc)
        return SweepRow(params, None, f"{type(exc).__name__}: {exc}")


def _run_grid(jobs_args, jobs: int) -> list[SweepRow]:
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_cell, jobs_args))  # map keeps grid order
    return [_run_cell(a) for a in jobs_args]


def sweep_svm(
    rows: Sequence[FeatureVector],
    gamma_range: Sequence[float] = range(1, 101),
    degree_range: Sequence[int] = range(1, 11),
    base_config: SvmConfig | None = None,
    repeats: int = 10,
    seed: int = 0,
    jobs: int = 1,
    normalize: bool = True,
) -> SweepReport:
    """ANOVA-kernel grid over (gamma, degree), gamma-major."""
    if not len(gamma_range) or not len(degree_range):
        raise ValueError("sweep ranges must be non-empty")
    base = base_config or SvmConfig()
    args = []
    for gamma in gamma_range:
        for degree in degree_range:
            config = replace(base, kernel=KernelSpec("anova", float(gamma), int(degree)))
            params = (("gamma", gamma), ("degree", degree))
            args.append((svm_learner(config), list(rows), params, repeats, seed, normalize))
    return SweepReport(tuple(_run_grid(args, jobs)), repeats, seed)


def sweep_ccnn(
    rows: Sequence[FeatureVector],
    hidden_range: Sequence[int] = range(1, 51),
    topologies: Sequence[str] = ("flat",),
    base_config: CcnnConfig | None = None,
    repeats: int = 10,
    seed: int = 0,
    jobs: int = 1,
    normalize: bool = True,
) -> SweepReport:
    """Fixed hidden-unit budgets for each topology, hidden-count-major."""
    if not len(hidden_range) or not len(topologies):
        raise ValueError("sweep ranges must be non-empty")
    base = base_config or CcnnConfig()
    args = []
    for hidden in hidden_range:
        for topology in topologies:
            config = replace(base, max_hidden_units=int(hidden), topology=topology, fixed_budget=True)
            params = (("hidden", hidden), ("topology", topology))
            args.append((ccnn_learner(config), list(rows), params, repeats, seed, normalize))
    return SweepReport(tuple(_run_grid(args, jobs)), repeats, seed)
