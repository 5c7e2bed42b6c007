"""Linear soft-margin SVM (SMO), metrics and stratified cross-validation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MODEL_VERSION = 1


class SvmConvergenceError(RuntimeError):
    def __init__(self, message: str, objective: float):
        super().__init__(f"{message} (final objective {objective:.6g})")
        self.objective = objective


@dataclass
class LinearModel:
    w: np.ndarray
    b: float
    scale: np.ndarray  # (d, 2) per-feature (min, max) seen at training
    c: float = 1.0
    objective_history: list[float] = field(default_factory=list, repr=False, compare=False)
    duality_gap: float = 0.0

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.scale[:, 0], self.scale[:, 1]
        span = np.where(hi > lo, hi - lo, 1.0)
        return (x - lo) / span

    def decision(self, x) -> np.ndarray:
        return self.transform(x) @ self.w + self.b

    def predict(self, x) -> np.ndarray:
        return (self.decision(x) > 0).astype(np.int8)

    def to_dict(self) -> dict:
        return {"w": [float(v) for v in self.w], "b": float(self.b),
                "scale": [[float(a), float(b)] for a, b in self.scale],
                "c": float(self.c), "version": MODEL_VERSION}

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported classifier version {d.get('version')!r}")
        return cls(np.array(d["w"], dtype=np.float64), float(d["b"]),
                   np.array(d["scale"], dtype=np.float64), float(d["c"]))

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def _fit_scale(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x.min(axis=0), x.max(axis=0)])


def primal_objective(w, b, x, y, c) -> float:
    margins = y * (x @ w + b)
    return 0.5 * float(w @ w) + c * float(np.maximum(0.0, 1.0 - margins).sum())


def svm_train(points, labels, c: float = 1.0, seed: int = 0, tol: float = 1e-6,
              max_iter: int = 100_000) -> LinearModel:
    """Minimise 1/2|w|^2 + c * sum hinge on min-max scaled features.

    Dual SMO with maximal-violating-pair selection. The solver is
    deterministic; ``seed`` is accepted for interface symmetry only.
    ``objective_history`` holds the dual objective after every step (it never
    increases).
    """
    del seed
    x_raw = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if x_raw.ndim != 2 or x_raw.shape[0] != labels.shape[0]:
        raise ValueError("points must be (n, d) with one label per point")
    if not ((labels == 1).any() and (labels == 0).any()):
        raise ValueError("svm_train needs both classes present")
    scale = _fit_scale(x_raw)
    model = LinearModel(np.zeros(x_raw.shape[1]), 0.0, scale, c)
    x = model.transform(x_raw)
    y = np.where(labels == 1, 1.0, -1.0)
    n = x.shape[0]
    sq = (x * x).sum(axis=1)

    alpha = np.zeros(n)
    w = np.zeros(x.shape[1])
    grad = -np.ones(n)  # gradient of the dual objective: y * (x @ w) - 1
    history = [0.0]
    dual = 0.0
    for it in range(max_iter + 1):
        yg = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        gap = yg[i] - yg[j]
        if gap < tol:
            break
        if it == max_iter:
            raise SvmConvergenceError("SMO did not converge", dual)
        # two-variable step along alpha_i * y_i + alpha_j * y_j = const
        kii, kjj, kij = sq[i], sq[j], float(x[i] @ x[j])
        eta = max(kii + kjj - 2.0 * kij, 1e-12)
        step = gap / eta
        # box limits for alpha_i moving by +y_i*step and alpha_j by -y_j*step
        lim_i = (c - alpha[i]) if y[i] > 0 else alpha[i]
        lim_j = alpha[j] if y[j] > 0 else (c - alpha[j])
        step = min(step, lim_i, lim_j)
        di = y[i] * step
        dj = -y[j] * step
        alpha[i] += di
        alpha[j] += dj
        dw = di * y[i] * x[i] + dj * y[j] * x[j]
        w += dw
        grad = y * (x @ w) - 1.0
        dual = 0.5 * float(w @ w) - float(alpha.sum())
        history.append(dual)

    yg = -y * grad
    free = (alpha > 1e-12) & (alpha < c - 1e-12)
    if free.any():
        b = float(yg[free].mean())
    else:
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        hi = yg[up].max() if up.any() else 0.0
        lo = yg[low].min() if low.any() else 0.0
        b = float((hi + lo) / 2.0)
    model.w = w
    model.b = b
    model.objective_history = history
    model.duality_gap = primal_objective(w, b, x, y, c) + dual
    if not np.any(w):
        raise SvmConvergenceError("degenerate solution with w = 0", dual)
    return model


def svm_predict(model: LinearModel, point) -> tuple[int, float]:
    """(label, margin) for one (dist, ewma) point."""
    if hasattr(point, "as_array"):
        point = point.as_array()
    margin = float(model.decision(np.asarray(point, dtype=np.float64)[None])[0])
    return (1 if margin > 0 else 0), margin


# ------------------------------------------------------------------ metrics


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    fold_mean: float | None = None
    fold_std: float | None = None
    fold_scores: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def evaluate(predictions, truth) -> EvalReport:
    p = np.asarray(predictions).astype(int)
    t = np.asarray(truth).astype(int)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions vs {t.shape[0]} labels")
    tp = int(((p == 1) & (t == 1)).sum())
    fp = int(((p == 1) & (t == 0)).sum())
    fn = int(((p == 0) & (t == 1)).sum())
    tn = int(((p == 0) & (t == 0)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / p.size if p.size else 0.0
    return EvalReport(precision, recall, f1, tp, fp, fn, tn, accuracy)


def stratified_folds(labels, folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.shape[0], dtype=int)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(idx.size) % folds
    return fold_of


def cross_validate(points, labels, folds: int = 5, seed: int = 0, c: float = 1.0) -> EvalReport:
    x = np.asarray(points, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    counts = [int((y == k).sum()) for k in (0, 1)]
    if min(counts) < folds:
        raise ValueError(f"need at least {folds} samples per class, got {counts}")
    fold_of = stratified_folds(y, folds, seed)
    preds = np.empty_like(y)
    scores = []
    for k in range(folds):
        test = fold_of == k
        model = svm_train(x[~test], y[~test], c=c, seed=seed)
        preds[test] = model.predict(x[test])
        scores.append(float((preds[test] == y[test]).mean()))
    report = evaluate(preds, y)
    report.fold_scores = scores
    report.fold_mean = float(np.mean(scores))
    report.fold_std = float(np.std(scores))
    return report


def accuracy_outside(predictions, truth, transitions, margin: int) -> float:
    """Accuracy over frames farther than ``margin`` from every transition."""
    p = np.asarray(predictions)
    t = np.asarray(truth)
    keep = np.ones(p.shape[0], dtype=bool)
    for tr in transitions:
        keep[max(0, tr - margin):tr + margin + 1] = False
    if not keep.any():
        return math.nan
    return float((p[keep] == t[keep]).mean())
