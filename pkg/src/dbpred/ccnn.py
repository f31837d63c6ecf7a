"""Cascade-correlation network with a single sigmoid output.

Training alternates two phases. The output phase fits the output weights
(over inputs, bias and every installed hidden unit) by gradient descent on the
mean squared error against 0/1 targets. The candidate phase trains a pool of
tanh units to maximize the covariance magnitude between their output and the
current residual error; the best one is installed and its incoming weights
are never touched again.

With ``topology="cascade"`` a new unit also sees all earlier hidden units;
with ``topology="flat"`` it sees only the inputs and bias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, ModelFormatError, SchemaError, SingleClassError
from .features import FeatureVector, Normalizer, fit_normalizer
from .structure_io import BINDING, NON_BINDING

__all__ = [
    "CcnnConfig",
    "CcnnModel",
    "TracePhase",
    "candidate_correlation",
    "candidate_score_and_grad",
    "output_loss_and_grad",
    "train_ccnn",
    "forward",
    "predict_ccnn",
    "save_ccnn",
    "load_ccnn",
]

MODEL_FORMAT = "dbpred-ccnn"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CcnnConfig:
    max_hidden_units: int = 5
    topology: str = "flat"
    candidate_pool: int = 8
    output_epochs: int = 500
    candidate_epochs: int = 300
    learning_rate: float = 1.0
    target_error: float = 0.01
    # stop early once every output is within this distance of its target
    score_threshold: float | None = 0.4
    patience: int = 50
    seed: int = 0
    weight_init_range: float = 0.5
    # install exactly max_hidden_units units regardless of the stop criteria
    fixed_budget: bool = False

    def __post_init__(self):
        if self.max_hidden_units < 0:
            raise ValueError("max_hidden_units must be >= 0")
        if self.topology not in ("cascade", "flat"):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.candidate_pool < 1:
            raise ValueError("candidate_pool must be >= 1")
        if not self.learning_rate > 0 or not self.weight_init_range > 0:
            raise ValueError("learning_rate and weight_init_range must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class TracePhase:
    phase: str  # "output" or "install"
    hidden_units: int
    error: float
    accuracy: float
    hidden_weights: tuple[np.ndarray, ...]
    correlation: float | None = None


@dataclass(frozen=True, eq=False)
class CcnnModel:
    input_dim: int
    topology: str
    hidden_weights: tuple[np.ndarray, ...]
    output_weights: np.ndarray
    normalizer: Normalizer
    schema: tuple[str, ...]
    max_hidden_units: int = 0
    trace: tuple[TracePhase, ...] = field(default=(), repr=False)

    def __post_init__(self):
        for k, w in enumerate(self.hidden_weights, start=1):
            expected = self.input_dim + 1 + (k - 1 if self.topology == "cascade" else 0)
            if len(w) != expected:
                raise ModelFormatError(f"hidden unit {k} has {len(w)} weights, expected {expected}")
        if len(self.output_weights) != self.input_dim + 1 + len(self.hidden_weights):
            raise ModelFormatError("output weight count does not match the network")
        if not all(np.all(np.isfinite(w)) for w in (*self.hidden_weights, self.output_weights)):
            raise ModelFormatError("non-finite weight")

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_weights)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def candidate_correlation(candidate_outputs, residuals) -> float:
    """|sum_p (V_p - mean V)(E_p - mean E)| for a single output unit."""
    v = np.asarray(candidate_outputs, dtype=float).reshape(-1)
    e = np.asarray(residuals, dtype=float).reshape(-1)
    if len(v) != len(e):
        raise DimensionError(f"length mismatch: {len(v)} vs {len(e)}")
    if len(v) < 2:
        raise DimensionError("need at least 2 patterns")
    return float(abs(np.dot(v - v.mean(), e - e.mean())))


def candidate_score_and_grad(w, inputs, residuals) -> tuple[float, np.ndarray]:
    """Correlation score of a tanh unit with weights ``w`` and its gradient."""
    v = np.tanh(inputs @ w)
    ec = residuals - residuals.mean()
    cov = float(np.dot(v - v.mean(), ec))
    grad = np.sign(cov) * (inputs.T @ (ec * (1.0 - v * v)))
    return abs(cov), grad


def output_loss_and_grad(w, inputs, targets) -> tuple[float, np.ndarray]:
    """Mean squared error of the sigmoid output and its gradient in ``w``."""
    o = _sigmoid(inputs @ w)
    err = o - targets
    loss = float(np.mean(err * err))
    grad = inputs.T @ (err * o * (1.0 - o)) * (2.0 / len(targets))
    return loss, grad


def _augment(X):
    return np.hstack([X, np.ones((len(X), 1))])


def _train_output(Z, t, w, config):
    loss, grad = output_loss_and_grad(w, Z, t)
    best_w, best_loss = w.copy(), loss
    stale = 0
    for _ in range(config.output_epochs):
        w = w - config.learning_rate * grad
        loss, grad = output_loss_and_grad(w, Z, t)
        if loss < best_loss - 1e-12:
            best_w, best_loss = w.copy(), loss
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best_w, best_loss


def _train_candidate(inputs, residuals, w, config):
    scale = config.learning_rate / len(residuals)
    score, grad = candidate_score_and_grad(w, inputs, residuals)
    best_w, best_score = w.copy(), score
    stale = 0
    for _ in range(config.candidate_epochs):
        w = w + scale * grad
        score, grad = candidate_score_and_grad(w, inputs, residuals)
        if score > best_score + 1e-12:
            best_w, best_score = w.copy(), score
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best_w, best_score


def _targets(rows: Sequence[FeatureVector]) -> np.ndarray:
    t = []
    for r in rows:
        if r.label not in (BINDING, NON_BINDING):
            raise ValueError(f"{r.source_id}: row has no class label")
        t.append(1.0 if r.label == BINDING else 0.0)
    return np.array(t)


def _done(o, t, config) -> bool:
    if float(np.mean((o - t) ** 2)) <= config.target_error:
        return True
    return config.score_threshold is not None and bool(np.all(np.abs(o - t) < config.score_threshold))


def train_ccnn(rows: Sequence[FeatureVector], config: CcnnConfig | None = None,
               normalizer: Normalizer | None = None) -> CcnnModel:
    """Grow and train a cascade-correlation network on labeled rows."""
    config = config or CcnnConfig()
    t = _targets(rows)
    if len(set(t.tolist())) < 2:
        raise SingleClassError("training rows contain a single class")
    if normalizer is None:
        normalizer = fit_normalizer(rows)
    X = normalizer.transform(np.stack([r.values for r in rows]))
    rng = np.random.default_rng(config.seed)
    r = config.weight_init_range

    base = _augment(X)
    Z = base
    hidden: list[np.ndarray] = []
    w_out = rng.uniform(-r, r, Z.shape[1])
    w_out, loss = _train_output(Z, t, w_out, config)
    o = _sigmoid(Z @ w_out)
    trace = [TracePhase("output", 0, loss, float(np.mean((o >= 0.5) == (t == 1))), ())]

    while len(hidden) < config.max_hidden_units and (config.fixed_budget or not _done(o, t, config)):
        residuals = o - t
        cand_inputs = Z if config.topology == "cascade" else base
        best_w, best_s = None, -1.0
        for _ in range(config.candidate_pool):
            w0 = rng.uniform(-r, r, cand_inputs.shape[1])
            w, s = _train_candidate(cand_inputs, residuals, w0, config)
            if s > best_s:
                best_w, best_s = w, s
        best_w.setflags(write=False)
        hidden.append(best_w)
        Z = np.hstack([Z, np.tanh(cand_inputs @ best_w)[:, None]])
        w_out, loss = _train_output(Z, t, np.append(w_out, 0.0), config)
        o = _sigmoid(Z @ w_out)
        trace.append(TracePhase(
            "install", len(hidden), loss, float(np.mean((o >= 0.5) == (t == 1))),
            tuple(w.copy() for w in hidden), best_s,
        ))

    return CcnnModel(
        input_dim=X.shape[1],
        topology=config.topology,
        hidden_weights=tuple(hidden),
        output_weights=w_out,
        normalizer=normalizer,
        schema=tuple(normalizer.names),
        max_hidden_units=config.max_hidden_units,
        trace=tuple(trace),
    )


def forward(model: CcnnModel, X) -> np.ndarray:
    """Output activations for raw (un-normalized) feature rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.input_dim:
        raise SchemaError(f"expected {model.input_dim} features, got {X.shape[1]}")
    base = _augment(model.normalizer.transform(X))
    Z = base
    for w in model.hidden_weights:
        inputs = Z if model.topology == "cascade" else base
        Z = np.hstack([Z, np.tanh(inputs @ w)[:, None]])
    return _sigmoid(Z @ model.output_weights)


def predict_ccnn(model: CcnnModel, x: FeatureVector | Sequence[float]) -> tuple[str, float]:
    """Label and output; an output of exactly 0.5 counts as binding."""
    values = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=float)
    if values.ndim != 1 or len(values) != model.input_dim:
        raise SchemaError(f"expected {model.input_dim} features, got {values.size}")
    out = float(forward(model, values[None, :])[0])
    return (BINDING if out >= 0.5 else NON_BINDING), out


def save_ccnn(model: CcnnModel) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "topology": model.topology,
        "max_hidden_units": model.max_hidden_units,
        "input_dim": model.input_dim,
        "schema": list(model.schema),
        "normalizer": model.normalizer.to_dict(),
        "hidden_units": [w.tolist() for w in model.hidden_weights],
        "output_weights": model.output_weights.tolist(),
        "trace": [
            {"phase": p.phase, "hidden_units": p.hidden_units, "error": p.error,
             "accuracy": p.accuracy}
            for p in model.trace
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def load_ccnn(text: str) -> CcnnModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"not a model file: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise ModelFormatError("not a dbpred CCNN model (format/version mismatch)")
    try:
        return CcnnModel(
            input_dim=int(doc["input_dim"]),
            topology=doc["topology"],
            hidden_weights=tuple(np.array(w, dtype=float) for w in doc["hidden_units"]),
            output_weights=np.array(doc["output_weights"], dtype=float),
            normalizer=Normalizer.from_dict(doc["normalizer"]),
            schema=tuple(doc["schema"]),
            max_hidden_units=int(doc.get("max_hidden_units", len(doc["hidden_units"]))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model file: {exc}") from exc
