"""Time-series features, k-means labelling and the class checks used before training."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

BALANCE_MIN = 0.2
BALANCE_MAX = 5.0


class DegenerateClusteringError(ValueError):
    pass


class IndistinguishableStatesError(ValueError):
    pass


@dataclass(frozen=True)
class EwmaParams:
    alpha: float
    window: int

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")

    @classmethod
    def from_fps(cls, fps: float, window: int | None = None) -> "EwmaParams":
        """alpha = 2 / (s + 1) with a one-second window, s = fps."""
        s = max(1, int(round(fps)))
        return cls(2.0 / (s + 1.0), s if window is None else int(window))

    def weights(self, n: int) -> np.ndarray:
        """Weights for the newest ``n`` samples, newest first."""
        return (1.0 - self.alpha) ** np.arange(n)


@dataclass
class FeaturePoint:
    dist: float
    ewma: float
    label: int | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.dist, self.ewma])


def _weighted_tail(tail: np.ndarray, weights: np.ndarray) -> float:
    """``tail`` oldest to newest; ``weights`` newest first, same length."""
    return float(np.dot(weights, tail[::-1]) / weights.sum())


def ewma_window(series, params: EwmaParams, at: int) -> float:
    """EWMA of the ``params.window`` samples ending at position ``at``.

    ``series`` is a sequence of Dist values (one per frame, in order). The
    window is truncated at the series start.
    """
    values = np.asarray(series, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty series")
    if not 0 <= at < values.size:
        raise ValueError(f"index {at} outside series of length {values.size}")
    lo = max(0, at - params.window + 1)
    tail = values[lo:at + 1]
    return _weighted_tail(tail, params.weights(tail.size))


class EwmaStream:
    """Ring-buffer EWMA for live frames; equals :func:`ewma_window` sample by sample."""

    def __init__(self, params: EwmaParams):
        self.params = params
        self._buf: deque[float] = deque(maxlen=params.window)
        self._weights = params.weights(params.window)

    def push(self, value: float) -> float:
        self._buf.append(float(value))
        tail = np.fromiter(self._buf, dtype=np.float64, count=len(self._buf))
        return _weighted_tail(tail, self._weights[:tail.size])

    def reset(self):
        self._buf.clear()


def ewma_series(series, params: EwmaParams) -> np.ndarray:
    stream = EwmaStream(params)
    return np.array([stream.push(v) for v in np.asarray(series, dtype=np.float64)])


def build_dataset(series, params: EwmaParams) -> np.ndarray:
    """(n, 2) array of (dist, ewma) per frame; time is dropped."""
    values = np.asarray(series, dtype=np.float64)
    if values.size <= params.window:
        raise ValueError(
            f"series of {values.size} frames is too short for a {params.window}-frame window"
        )
    if (values < 0).any():
        raise ValueError("Dist values must be non-negative")
    return np.column_stack([values, ewma_series(values, params)])


# ------------------------------------------------------------------ k-means


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: list[float] = field(default_factory=list)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    # argmin returns the first minimum, so ties go to the lower-index centroid
    labels = np.argmin(d2, axis=1)
    return labels, d2[np.arange(points.shape[0]), labels]


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    for _ in range(1, k):
        d2 = np.min(((points[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(points[int(rng.integers(n))])
            continue
        idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        centers.append(points[min(idx, n - 1)])
    return np.array(centers, dtype=np.float64)


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iter: int,
           tol: float) -> KMeansResult:
    history = []
    labels, d2 = _assign(points, centroids)
    history.append(float(d2.sum()))
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(centroids.shape[0]):
            members = points[labels == j]
            if members.size:
                new[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the worst-fit point
                new[j] = points[int(np.argmax(d2))]
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        labels, d2 = _assign(points, centroids)
        history.append(float(d2.sum()))
        if shift < tol:
            break
    return KMeansResult(labels, centroids, float(d2.sum()), n_iter, history)


def exact_two_means(points: np.ndarray) -> np.ndarray:
    """Minimum-inertia 2-partition of planar points (labels 0/1).

    The optimal clusters are separated by a line, so the optimum is a
    threshold split of the points projected on some direction. Projection
    orders only change at directions orthogonal to a point difference; one
    direction inside every arc between those is enough. O(n^3 log n).
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    i, j = np.triu_indices(n, 1)
    diff = pts[j] - pts[i]
    diff = diff[(diff != 0).any(axis=1)]
    crit = np.unique(np.mod(np.arctan2(diff[:, 1], diff[:, 0]) + np.pi / 2, np.pi))
    if crit.size == 0:
        crit = np.array([0.0])
    mids = (crit + np.append(crit[1:], crit[0] + np.pi)) / 2.0
    total_sq = float((pts ** 2).sum())
    total = pts.sum(axis=0)
    k = np.arange(1, n)[:, None]
    best, best_split = np.inf, None
    for theta in mids:
        order = np.argsort(pts @ np.array([np.cos(theta), np.sin(theta)]), kind="stable")
        head = np.cumsum(pts[order], axis=0)[:-1]
        inertia = total_sq - (head ** 2).sum(1) / k[:, 0] - ((total - head) ** 2).sum(1) / (n - k[:, 0])
        m = int(np.argmin(inertia))
        if best_split is None or inertia[m] < best - 1e-12 * max(1.0, best):
            best, best_split = float(inertia[m]), (order, m + 1)
    order, cut = best_split
    labels = np.zeros(n, dtype=np.intp)
    labels[order[cut:]] = 1
    return labels


EXACT_MAX_POINTS = 32


def kmeans2(points, seed: int = 42, n_init: int = 10, max_iter: int = 300,
            tol: float = 1e-6) -> KMeansResult:
    """Two-cluster k-means: k-means++ seeding, Lloyd updates, best of ``n_init`` runs.

    Sets of at most ``EXACT_MAX_POINTS`` points also get a Lloyd run started
    from the exact optimum, since a handful of seeds can all stall in the same
    local minimum on tiny inputs.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] < 2 or np.all(pts == pts[0]):
        raise DegenerateClusteringError("degenerate clustering: need at least two distinct points")
    rng = np.random.default_rng(seed)
    starts = [_kmeanspp(pts, 2, rng) for _ in range(n_init)]
    if pts.shape[0] <= EXACT_MAX_POINTS:
        labels = exact_two_means(pts)
        starts.append(np.array([pts[labels == c].mean(axis=0) for c in (0, 1)]))
    best = None
    for init in starts:
        run = _lloyd(pts, init, max_iter, tol)
        if best is None or run.inertia < best.inertia - 1e-12 * max(1.0, best.inertia):
            best = run
    return best


def label_by_origin(labels, centroids) -> np.ndarray:
    """Relabel so that the cluster whose centroid is farther from the origin is 1."""
    labels = np.asarray(labels)
    c = np.asarray(centroids, dtype=np.float64)
    norms = np.sqrt((c ** 2).sum(axis=1))
    if np.isclose(norms[0], norms[1], rtol=1e-12, atol=1e-12):
        raise IndistinguishableStatesError("indistinguishable states: centroids equidistant from origin")
    far = int(np.argmax(norms))
    return (labels == far).astype(np.int8)


def balance_check(labels) -> float:
    """count(label 1) / count(label 0); 0 or inf when a class is empty."""
    labels = np.asarray(labels)
    pos = int((labels == 1).sum())
    neg = int((labels == 0).sum())
    if neg == 0:
        return float("inf") if pos else 0.0
    return pos / neg


def is_balanced(ratio: float) -> bool:
    return BALANCE_MIN <= ratio <= BALANCE_MAX


def class_coefficient(labels, open_frame: int, n_frames: int) -> float:
    """|N_negative - N_openframe| / N_frames for a clip that switches on once."""
    if n_frames <= 0:
        raise ValueError("n_frames must be positive")
    n_negative = int((np.asarray(labels) == 0).sum())
    return abs(n_negative - int(open_frame)) / n_frames


def centroid_gap(points, seed: int = 42) -> float:
    """Horizontal distance between the two k-means centroids (0 if degenerate)."""
    try:
        res = kmeans2(points, seed=seed)
    except DegenerateClusteringError:
        return 0.0
    return float(abs(res.centroids[1, 0] - res.centroids[0, 0]))
