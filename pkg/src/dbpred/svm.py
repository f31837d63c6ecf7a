"""Soft-margin kernel SVM trained by sequential minimal optimization.

Classes are encoded as +1 (binding) and -1 (non-binding). The solver works on
the classification dual

    max  sum(a) - 1/2 sum_ij a_i a_j y_i y_j k(x_i, x_j)
    s.t. 0 <= a_i <= C,  sum(a_i y_i) = 0
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ModelFormatError, SchemaError, SingleClassError
from .features import FeatureVector, Normalizer, fit_normalizer
from .structure_io import BINDING, NON_BINDING

__all__ = [
    "KernelSpec",
    "SvmConfig",
    "SvmModel",
    "SmoResult",
    "kernel_eval",
    "gram_matrix",
    "smo",
    "train_svm",
    "predict_svm",
    "decision_function",
    "dual_objective",
    "kkt_violations",
    "save_svm",
    "load_svm",
]

KERNELS = ("dot", "polynomial", "radial", "anova")
MODEL_FORMAT = "dbpred-svm"
MODEL_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "anova"
    gamma: float | None = 2.0
    degree: int | None = 5

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind in ("radial", "anova") and not (self.gamma is not None and self.gamma > 0):
            raise ValueError(f"{self.kind} kernel needs gamma > 0")
        if self.kind in ("polynomial", "anova"):
            if self.degree is None or int(self.degree) != self.degree or self.degree < 1:
                raise ValueError(f"{self.kind} kernel needs a positive integer degree")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "degree": self.degree}


@dataclass(frozen=True)
class SvmConfig:
    kernel: KernelSpec = field(default_factory=KernelSpec)
    C: float = 1.0
    kkt_tolerance: float = 1e-3
    max_passes: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")


def gram_matrix(spec: KernelSpec, X, Y=None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == "dot":
        return X @ Y.T
    if spec.kind == "polynomial":
        return (X @ Y.T + 1.0) ** int(spec.degree)
    if spec.kind == "radial":
        d2 = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-spec.gamma * d2)
    # anova: (sum_k exp(-gamma (x_k - y_k)^2))^d, evaluated in row blocks
    out = np.empty((len(X), len(Y)))
    step = max(1, 2_000_000 // max(1, len(Y) * X.shape[1]))
    for start in range(0, len(X), step):
        diff = X[start:start + step, None, :] - Y[None, :, :]
        out[start:start + step] = np.exp(-spec.gamma * diff * diff).sum(axis=-1)
    return out ** int(spec.degree)


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(x) != len(y) or len(x) == 0:
        raise DimensionError(f"kernel arguments differ in length: {len(x)} vs {len(y)}")
    return float(gram_matrix(spec, x[None, :], y[None, :])[0, 0])


class _KernelCache:
    """Whole Gram matrix for small problems, otherwise an LRU cache of rows."""

    FULL_LIMIT = 2000

    def __init__(self, spec: KernelSpec, X: np.ndarray, max_rows: int = 512):
        self.spec = spec
        self.X = X
        self.full = gram_matrix(spec, X) if len(X) <= self.FULL_LIMIT else None
        self._rows: OrderedDict[int, np.ndarray] = OrderedDict()
        self.max_rows = max_rows
        self.diag = (np.diag(self.full).copy() if self.full is not None
                     else np.array([gram_matrix(spec, x[None, :])[0, 0] for x in X]))

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        cached = self._rows.get(i)
        if cached is None:
            cached = gram_matrix(self.spec, self.X[i:i + 1], self.X)[0]
            self._rows[i] = cached
            if len(self._rows) > self.max_rows:
                self._rows.popitem(last=False)
        else:
            self._rows.move_to_end(i)
        return cached


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    converged: bool
    passes: int
    steps: int


def _final_bias(alpha, y, g, C, eps):
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        return float(np.mean(y[free] - g[free]))
    lo, hi = -math.inf, math.inf
    for a, yi, gi in zip(alpha, y, g):
        bound = yi - gi  # b at which y_i f_i == 1
        at_zero = a <= eps
        if (yi > 0) == at_zero:
            lo = max(lo, bound)
        else:
            hi = min(hi, bound)
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    return lo if math.isfinite(lo) else (hi if math.isfinite(hi) else 0.0)


def kkt_violations(alpha, y, f, C, eps=1e-12) -> np.ndarray:
    """Per-sample KKT violation of the dual solution ``alpha`` given outputs ``f``."""
    margin = y * f - 1.0
    v = np.zeros(len(alpha))
    at_zero = alpha <= eps
    at_c = alpha >= C - eps
    free = ~at_zero & ~at_c
    v[at_zero] = np.maximum(0.0, -margin[at_zero])
    v[at_c] = np.maximum(0.0, margin[at_c])
    v[free] = np.abs(margin[free])
    return v


def smo(cache: _KernelCache | np.ndarray, y, C: float, tol: float = 1e-3,
        max_passes: int = 10000, seed: int = 0) -> SmoResult:
    """Platt's SMO on a kernel cache (or a precomputed Gram matrix)."""
    if isinstance(cache, np.ndarray):
        K = cache
        row = K.__getitem__
        diag = np.diag(K)
    else:
        row = cache.row
        diag = cache.diag
    y = np.asarray(y, dtype=float)
    n = len(y)
    rng = np.random.default_rng(seed)
    alpha = np.zeros(n)
    b = 0.0
    E = -y.copy()  # f - y with f = 0 initially
    eps = 1e-12
    steps = 0

    def take_step(i1, i2):
        nonlocal b, steps
        if i1 == i2:
            return False
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = E[i1], E[i2]
        s = y1 * y2
        if y1 != y2:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if H - L <= eps:
            return False
        k1, k2 = row(i1), row(i2)
        k11, k22, k12 = diag[i1], diag[i2], k1[i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0:
            a2n = min(H, max(L, a2 + y2 * (E1 - E2) / eta))
        else:
            f1 = y1 * (E1 - b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 - b) - s * a1 * k12 - a2 * k22
            L1, H1 = a1 + s * (a2 - L), a1 + s * (a2 - H)
            l_obj = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 + s * L * L1 * k12
            h_obj = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 + s * H * H1 * k12
            if l_obj < h_obj - 1e-12:
                a2n = L
            elif l_obj > h_obj + 1e-12:
                a2n = H
            else:
                a2n = a2
        if abs(a2n - a2) < 1e-12 * (a2n + a2 + 1e-12):
            return False
        a1n = a1 + s * (a2 - a2n)
        a1n = min(C, max(0.0, a1n))
        d1, d2 = y1 * (a1n - a1), y2 * (a2n - a2)
        b1 = b - E1 - d1 * k11 - d2 * k12
        b2 = b - E2 - d1 * k12 - d2 * k22
        if eps < a1n < C - eps:
            bn = b1
        elif eps < a2n < C - eps:
            bn = b2
        else:
            bn = 0.5 * (b1 + b2)
        E[:] += d1 * k1 + d2 * k2 + (bn - b)
        alpha[i1], alpha[i2] = a1n, a2n
        b = bn
        steps += 1
        return True

    def examine(i2):
        r2 = E[i2] * y[i2]
        a2 = alpha[i2]
        if not ((r2 < -tol and a2 < C - eps) or (r2 > tol and a2 > eps)):
            return 0
        free = np.flatnonzero((alpha > eps) & (alpha < C - eps))
        if len(free) > 1:
            i1 = int(free[np.argmax(np.abs(E[free] - E[i2]))])
            if take_step(i1, i2):
                return 1
        if len(free):
            start = int(rng.integers(len(free)))
            for i1 in np.roll(free, -start):
                if take_step(int(i1), i2):
                    return 1
        start = int(rng.integers(n))
        for i1 in np.roll(np.arange(n), -start):
            if take_step(int(i1), i2):
                return 1
        return 0

    passes = 0
    changed = 0
    examine_all = True
    while (changed > 0 or examine_all) and passes < max_passes:
        changed = 0
        if examine_all:
            for i in range(n):
                changed += examine(i)
        else:
            for i in np.flatnonzero((alpha > eps) & (alpha < C - eps)):
                changed += examine(int(i))
        passes += 1
        if examine_all:
            examine_all = False
        elif changed == 0:
            examine_all = True

    g = E + y - b  # sum_j a_j y_j k_ij
    bias = _final_bias(alpha, y, g, C, eps)
    converged = bool(np.all(kkt_violations(alpha, y, g + bias, C) <= tol))
    return SmoResult(alpha, bias, converged, passes, steps)


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # normalized feature space
    dual_coefficients: np.ndarray  # alpha_i * y_i
    bias: float
    kernel: KernelSpec
    C: float
    normalizer: Normalizer
    schema: tuple[str, ...]
    converged: bool = True

    def __post_init__(self):
        sv = np.asarray(self.support_vectors, dtype=float).reshape(len(self.dual_coefficients), -1)
        coef = np.asarray(self.dual_coefficients, dtype=float).reshape(-1)
        alpha = np.abs(coef)
        if np.any(alpha <= 0) or np.any(alpha > self.C * (1 + 1e-12)):
            raise ModelFormatError("support vector coefficients must satisfy 0 < alpha <= C")
        if abs(coef.sum()) > 1e-6:
            raise ModelFormatError(f"sum(alpha*y) = {coef.sum():.3g}, expected 0")
        if len(coef) and sv.shape[1] != len(self.schema):
            raise ModelFormatError("support vector width differs from schema")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coefficients", coef)

    @property
    def alphas(self) -> np.ndarray:
        return np.abs(self.dual_coefficients)


def _labels_to_y(rows: Sequence[FeatureVector]) -> np.ndarray:
    y = []
    for r in rows:
        if r.label not in (BINDING, NON_BINDING):
            raise ValueError(f"{r.source_id}: row has no class label")
        y.append(1.0 if r.label == BINDING else -1.0)
    return np.array(y)


def train_svm(rows: Sequence[FeatureVector], config: SvmConfig | None = None,
              normalizer: Normalizer | None = None) -> SvmModel:
    """Fit an SVM; ``normalizer`` defaults to z-scores of ``rows``."""
    config = config or SvmConfig()
    y = _labels_to_y(rows)
    if len(set(y.tolist())) < 2:
        raise SingleClassError("training rows contain a single class")
    if normalizer is None:
        normalizer = fit_normalizer(rows)
    X = normalizer.transform(np.stack([r.values for r in rows]))
    result = smo(_KernelCache(config.kernel, X), y, config.C, config.kkt_tolerance,
                 config.max_passes, config.seed)
    sv = result.alpha > 0
    return SvmModel(
        support_vectors=X[sv],
        dual_coefficients=result.alpha[sv] * y[sv],
        bias=result.bias,
        kernel=config.kernel,
        C=config.C,
        normalizer=normalizer,
        schema=tuple(normalizer.names),
        converged=result.converged,
    )


def decision_function(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.schema):
        raise SchemaError(f"expected {len(model.schema)} features, got {X.shape[1]}")
    Z = model.normalizer.transform(X)
    if len(model.dual_coefficients) == 0:
        return np.full(len(Z), model.bias)
    return gram_matrix(model.kernel, Z, model.support_vectors) @ model.dual_coefficients + model.bias


def predict_svm(model: SvmModel, x: FeatureVector | Sequence[float]) -> tuple[str, float]:
    """Label and decision value; a decision of exactly 0 counts as binding."""
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    if values.ndim != 1 or len(values) != len(model.schema):
        raise SchemaError(f"expected {len(model.schema)} features, got {values.size}")
    f = float(decision_function(model, values[None, :])[0])
    return (BINDING if f >= 0 else NON_BINDING), f


def dual_objective(model: SvmModel) -> float:
    """Dual objective at the model's alphas (non-support vectors contribute nothing)."""
    coef = model.dual_coefficients
    if len(coef) == 0:
        return 0.0
    K = gram_matrix(model.kernel, model.support_vectors)
    return float(model.alphas.sum() - 0.5 * coef @ K @ coef)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_svm(model: SvmModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kernel": model.kernel.to_dict(),
        "C": model.C,
        "bias": model.bias,
        "converged": model.converged,
        "schema": list(model.schema),
        "normalizer": model.normalizer.to_dict(),
        "dual_coefficients": model.dual_coefficients.tolist(),
        "support_vectors": model.support_vectors.tolist(),
    }
    return json.dumps(doc, indent=1) + "\n"


def load_svm(text: str) -> SvmModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError("not a dbpred SVM model (format/version mismatch)")
    try:
        k = doc["kernel"]
        return SvmModel(
            support_vectors=np.array(doc["support_vectors"], dtype=float),
            dual_coefficients=np.array(doc["dual_coefficients"], dtype=float),
            bias=float(doc["bias"]),
            kernel=KernelSpec(k["kind"], k.get("gamma"), k.get("degree")),
            C=float(doc["C"]),
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            schema=tuple(doc["schema"]),
            converged=bool(doc.get("converged", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc
