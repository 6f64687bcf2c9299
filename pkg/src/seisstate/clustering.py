"""k-means++ seeding, Lloyd iteration, validation indices, and k selection.

Everything here is deterministic given an integer seed: seeding uses a
dedicated PCG64 generator, restarts get SHA-derived sub-seeds, and every
reduction (best restart, ranking ties) is resolved by a fixed index order,
so results do not depend on thread count or execution order.

Distances are squared Euclidean; assignment ties go to the lowest centroid
index.  Empty clusters during iteration are repaired by moving the empty
centroid onto the point currently farthest from its own centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import errors
from ._util import derive_seed, parallel_map
from .features import FeatureLayout, Standardizer


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise errors.ShapeMismatch(f"expected a 2-D data matrix, got shape {X.shape}")
    if X.size and not np.isfinite(X).all():
        raise errors.ShapeMismatch("data matrix contains non-finite entries")
    return X


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances, clamped at zero."""
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        - 2.0 * (X @ C.T)
        + np.einsum("ij,ij->i", C, C)[None, :]
    )
    return np.maximum(d2, 0.0, out=d2)


def kmeanspp_seed(X, k: int, rng_seed: int) -> np.ndarray:
    """Choose k initial centroids by D^2-weighted sampling.

    The first centroid is uniform over rows; each later one is drawn with
    probability proportional to its squared distance to the nearest chosen
    centroid.  If every remaining distance is zero (duplicate-heavy data),
    the draw falls back to uniform over not-yet-chosen rows.
    """
    X = _as_matrix(X)
    n = X.shape[0]
    if n == 0:
        raise errors.EmptyData("cannot seed on an empty matrix")
    if not 1 <= k <= n:
        raise errors.KTooLarge(f"k={k} outside [1, {n}]")
    rng = np.random.default_rng(rng_seed)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen[-1]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            remaining = np.setdiff1d(np.arange(n), np.asarray(chosen))
            idx = int(remaining[rng.integers(remaining.size)])
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return X[chosen].copy()


@dataclass(frozen=True)
class LloydResult:
    """One converged (or iteration-capped) Lloyd run."""

    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations: int
    inertia_history: tuple[float, ...]


def _assign_and_repair(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Nearest-centroid assignment plus empty-cluster repair.

    Returns (assignments, possibly-updated centroids, inertia for the
    returned state).  Repair moves each empty centroid onto the point
    farthest from its currently assigned centroid, which never increases
    the cost of the returned state.
    """
    k = C.shape[0]
    d2 = _sq_dists(X, C)
    assign = np.argmin(d2, axis=1)
    counts = np.bincount(assign, minlength=k)
    if (counts == 0).any():
        C = C.copy()
        point_d2 = d2[np.arange(X.shape[0]), assign].copy()
        for j in np.flatnonzero(counts == 0):
            p = int(np.argmax(point_d2))
            C[j] = X[p]
            assign[p] = j
            point_d2[p] = -np.inf
        diff = X - C[assign]
        inertia = float(np.einsum("ij,ij->", diff, diff))
    else:
        inertia = float(d2[np.arange(X.shape[0]), assign].sum())
    return assign, C, inertia


def lloyd(X, init_centroids, max_iter: int = 300, tol: float = 1e-6) -> LloydResult:
    """Alternate assignment and centroid update from a fixed initialization.

    Stops when the largest centroid movement is at most ``tol`` or after
    ``max_iter`` iterations.  The returned assignments are always the
    nearest-centroid assignment for the returned centroids, and the recorded
    per-iteration inertia sequence is non-increasing.
    """
    X = _as_matrix(X)
    C = np.array(init_centroids, dtype=np.float64)
    if C.ndim != 2 or C.shape[1] != X.shape[1]:
        raise errors.ShapeMismatch(
            f"init centroids shape {C.shape} incompatible with data shape {X.shape}"
        )
    if not 1 <= C.shape[0] <= X.shape[0]:
        raise errors.KTooLarge(f"k={C.shape[0]} outside [1, {X.shape[0]}]")
    if max_iter < 1:
        raise errors.ConfigError("max_iter must be >= 1")

    history: list[float] = []
    assign = np.zeros(X.shape[0], dtype=np.intp)
    iterations = 0
    onehot_k = C.shape[0]
    for _ in range(max_iter):
        iterations += 1
        assign, C, inertia = _assign_and_repair(X, C)
        history.append(inertia)
        indicator = assign[:, None] == np.arange(onehot_k)[None, :]
        counts = indicator.sum(axis=0)
        new_C = (indicator.T.astype(np.float64) @ X) / counts[:, None]
        movement = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        if movement <= tol:
            break
        C = new_C
    return LloydResult(
        centroids=C,
        assignments=assign,
        inertia=history[-1],
        iterations=iterations,
        inertia_history=tuple(history),
    )


def fit_kmeans(
    X,
    k: int,
    restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-6,
    seed: int = 0,
    threads: int = 1,
) -> LloydResult:
    """Best of ``restarts`` seeded k-means++ / Lloyd runs, by final inertia.

    Restart r uses the sub-seed derived from ``(seed, "restart", r)``; ties on
    inertia resolve to the lowest restart index, so the winner is independent
    of the execution order of the restarts.
    """
    if restarts < 1:
        raise errors.ConfigError("restarts must be >= 1")
    X = _as_matrix(X)

    def run(r: int) -> LloydResult:
        init = kmeanspp_seed(X, k, derive_seed(seed, "restart", r))
        return lloyd(X, init, max_iter=max_iter, tol=tol)

    results = parallel_map(run, list(range(restarts)), threads)
    best = min(range(restarts), key=lambda r: (results[r].inertia, r))
    return results[best]


# --- fitted model -------------------------------------------------------------

@dataclass(frozen=True)
class ClusterModel:
    """Centroids in standardized feature space plus everything needed to reuse them."""

    k: int
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    standardizer: Standardizer
    feature_layout: FeatureLayout
    config_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        C = np.array(self.centroids, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != self.k:
            raise errors.ShapeMismatch(f"centroids shape {C.shape} does not match k={self.k}")
        if not np.isfinite(C).all():
            raise errors.ShapeMismatch("centroids must be finite")
        if self.inertia < 0:
            raise errors.ShapeMismatch("inertia must be non-negative")
        C.setflags(write=False)
        object.__setattr__(self, "centroids", C)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def raw_centroids(self) -> np.ndarray:
        """Centroids mapped back to raw channel units (nm/s for BLRMS inputs)."""
        return self.standardizer.invert(self.centroids)

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "centroids": [[float(v) for v in row] for row in self.centroids],
            "inertia": float(self.inertia),
            "iterations": int(self.iterations),
            "seed": int(self.seed),
            "feature_layout": self.feature_layout.column_names(),
            "standardizer": self.standardizer.to_json(),
            "config_echo": self.config_echo,
        }

    @staticmethod
    def from_json(obj: dict) -> "ClusterModel":
        return ClusterModel(
            k=int(obj["k"]),
            centroids=np.array(obj["centroids"], dtype=np.float64),
            inertia=float(obj["inertia"]),
            iterations=int(obj["iterations"]),
            seed=int(obj["seed"]),
            standardizer=Standardizer.from_json(obj["standardizer"]),
            feature_layout=FeatureLayout.from_column_names(obj["feature_layout"]),
            config_echo=dict(obj.get("config_echo", {})),
        )


def predict(model: ClusterModel, x) -> int | np.ndarray:
    """Nearest-centroid cluster index for raw-unit input(s); ties to lowest index."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    pts = model.standardizer.apply(x[None, :] if single else x)
    idx = np.argmin(_sq_dists(pts, model.centroids), axis=1)
    return int(idx[0]) if single else idx


# --- validation indices ---------------------------------------------------------

def _check_clustered(X, assignments) -> tuple[np.ndarray, np.ndarray, int]:
    X = _as_matrix(X)
    assign = np.asarray(assignments)
    if assign.shape != (X.shape[0],):
        raise errors.ShapeMismatch("assignments must be one label per row")
    k = int(assign.max()) + 1 if assign.size else 0
    counts = np.bincount(assign, minlength=k)
    if (counts == 0).any():
        raise errors.ShapeMismatch("cluster ids must be contiguous and non-empty")
    if k < 2:
        raise errors.SingleCluster("need at least two clusters")
    return X, assign, k


_SIL_BLOCK = 512


def silhouette(X, assignments) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Points in singleton clusters contribute 0, as do points whose intra- and
    inter-cluster mean distances are both zero.  Computed in row blocks so
    memory stays O(block * n) for large inputs.
    """
    X, assign, k = _check_clustered(X, assignments)
    n = X.shape[0]
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    onehot = (assign[:, None] == np.arange(k)[None, :]).astype(np.float64)
    x_sq = np.einsum("ij,ij->i", X, X)
    scores = np.empty(n)
    for lo in range(0, n, _SIL_BLOCK):
        hi = min(lo + _SIL_BLOCK, n)
        d2 = x_sq[lo:hi, None] - 2.0 * (X[lo:hi] @ X.T) + x_sq[None, :]
        dist = np.sqrt(np.maximum(d2, 0.0))
        cluster_sums = dist @ onehot  # (block, k)
        rows = np.arange(lo, hi)
        own = assign[rows]
        own_counts = counts[own]
        with np.errstate(invalid="ignore", divide="ignore"):
            a = cluster_sums[np.arange(hi - lo), own] / (own_counts - 1.0)
        mean_other = cluster_sums / counts[None, :]
        mean_other[np.arange(hi - lo), own] = np.inf
        b = mean_other.min(axis=1)
        s = np.zeros(hi - lo)
        ok = own_counts > 1.0
        denom = np.maximum(a, b)
        valid = ok & (denom > 0.0)
        s[valid] = (b[valid] - a[valid]) / denom[valid]
        scores[lo:hi] = s
    return float(scores.mean())


def _cluster_centroids(X: np.ndarray, assign: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    onehot = (assign[:, None] == np.arange(k)[None, :]).astype(np.float64)
    counts = onehot.sum(axis=0)
    return (onehot.T @ X) / counts[:, None], counts


def davies_bouldin(X, assignments) -> float:
    """Davies-Bouldin index: mean over clusters of the worst similarity ratio."""
    X, assign, k = _check_clustered(X, assignments)
    centroids, _ = _cluster_centroids(X, assign, k)
    scatter = np.empty(k)
    for j in range(k):
        member = X[assign == j]
        scatter[j] = np.sqrt(((member - centroids[j]) ** 2).sum(axis=1)).mean()
    sep = np.sqrt(_sq_dists(centroids, centroids))
    off_diag = ~np.eye(k, dtype=bool)
    if (sep[off_diag] == 0.0).any():
        raise errors.CoincidentCentroids("two centroids coincide; index undefined")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = (scatter[:, None] + scatter[None, :]) / sep
    ratio[~off_diag] = -np.inf
    return float(ratio.max(axis=1).mean())


def calinski_harabasz(X, assignments) -> float:
    """Calinski-Harabasz index: between-cluster over within-cluster dispersion."""
    X, assign, k = _check_clustered(X, assignments)
    n = X.shape[0]
    if n <= k:
        raise errors.DegenerateInput(f"need more points than clusters, got n={n}, k={k}")
    centroids, counts = _cluster_centroids(X, assign, k)
    overall = X.mean(axis=0)
    between = float((counts * ((centroids - overall) ** 2).sum(axis=1)).sum())
    diff = X - centroids[assign]
    within = float(np.einsum("ij,ij->", diff, diff))
    if within == 0.0:
        return float("inf") if between > 0.0 else 0.0
    return (between / (k - 1)) / (within / (n - k))


# --- k selection -----------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    """Per-k validation scores over a grid, plus the aggregated ranking."""

    grid: dict
    ranked: tuple[int, ...]
    rank_by: str

    def to_json(self) -> dict:
        return {
            "scores": {str(k): dict(v) for k, v in sorted(self.grid.items())},
            "ranked_k": list(self.ranked),
            "rank_by": self.rank_by,
        }

    @staticmethod
    def from_json(obj: dict) -> "ValidationReport":
        grid = {int(k): dict(v) for k, v in obj["scores"].items()}
        return ValidationReport(grid, tuple(int(k) for k in obj["ranked_k"]), obj["rank_by"])


def select_k(
    X,
    k_grid: Sequence[int],
    restarts: int = 10,
    rng_seed: int = 0,
    max_iter: int = 300,
    tol: float = 1e-6,
    threads: int = 1,
    external_scorer: Callable[[int, np.ndarray], float] | None = None,
) -> ValidationReport:
    """Grid-search cluster counts and rank them.

    For each k the best-of-restarts model (by inertia) is scored with the
    three intrinsic indices.  The default ranking averages the per-index
    ranks (silhouette and Calinski-Harabasz descending, Davies-Bouldin
    ascending); ties go to the smaller k.  When ``external_scorer`` is given
    it replaces the intrinsic ranking: k's are ordered by descending score,
    e.g. the peak per-state event-rate excess against a trigger catalog.
    """
    X = _as_matrix(X)
    ks = sorted(set(int(k) for k in k_grid))
    if not ks:
        raise errors.ConfigError("empty k grid")
    if ks[0] < 2 or ks[-1] > X.shape[0] - 1:
        raise errors.KTooLarge(f"k grid must lie within [2, {X.shape[0] - 1}] for n={X.shape[0]}")

    grid: dict[int, dict[str, float]] = {}
    external: dict[int, float] = {}
    for k in ks:
        fit = fit_kmeans(
            X, k, restarts=restarts, max_iter=max_iter, tol=tol,
            seed=derive_seed(rng_seed, "grid", k), threads=threads,
        )
        grid[k] = {
            "silhouette": silhouette(X, fit.assignments),
            "davies_bouldin": davies_bouldin(X, fit.assignments),
            "calinski_harabasz": calinski_harabasz(X, fit.assignments),
            "inertia": fit.inertia,
        }
        if external_scorer is not None:
            external[k] = float(external_scorer(k, fit.assignments))

    if external_scorer is not None:
        ranked = tuple(sorted(ks, key=lambda k: (-external[k], k)))
        for k in ks:
            grid[k]["external_score"] = external[k]
        rank_by = "external"
    else:
        sil = rankdata([-grid[k]["silhouette"] for k in ks], method="average")
        ch = rankdata([-grid[k]["calinski_harabasz"] for k in ks], method="average")
        db = rankdata([grid[k]["davies_bouldin"] for k in ks], method="average")
        mean_rank = (sil + ch + db) / 3.0
        order = sorted(range(len(ks)), key=lambda i: (mean_rank[i], ks[i]))
        ranked = tuple(ks[i] for i in order)
        rank_by = "intrinsic"
    return ValidationReport(grid, ranked, rank_by)
