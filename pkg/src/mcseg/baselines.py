"""Classical comparison methods: nearest-median classification and fuzzy
c-means clustering.

The median classifier stores one per-class component-wise median vector
and assigns each pixel to the class whose median has the highest cosine
similarity. ``literal_min=True`` flips the rule to lowest similarity,
matching the formula some references print; it is kept only so both
behaviors can be compared.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ArgumentError
from .volume import LabelMap, MultiChannelVolume


@dataclass(frozen=True)
class MedianModel:
    """One component-wise median vector per class."""

    medians: np.ndarray  # (n_classes, dim) float64

    def __post_init__(self):
        m = np.ascontiguousarray(self.medians, dtype=np.float64)
        if m.ndim != 2 or min(m.shape) < 1:
            raise ArgumentError(f"medians must be (n_classes, dim), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ArgumentError("medians must be finite")
        norms = np.linalg.norm(m, axis=1)
        if np.any(norms == 0):
            bad = int(np.argmin(norms))
            raise ArgumentError(f"class {bad} has a zero-norm median; cosine undefined")
        m.flags.writeable = False
        object.__setattr__(self, "medians", m)

    @property
    def n_classes(self) -> int:
        return self.medians.shape[0]


@dataclass(frozen=True)
class KnnScanStats:
    elapsed_s: float
    zero_pixels: int


def fit_medians(vectors: np.ndarray, classes: np.ndarray, n_classes: int) -> MedianModel:
    """Per-class, per-dimension lower median of the training pixels.

    Even-count sets take the lower of the two middle values, so every
    median component is an actual data value.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    classes = np.asarray(classes)
    if vectors.ndim != 2 or vectors.shape[0] != classes.shape[0]:
        raise ArgumentError(
            f"need matching (N, dim) vectors and (N,) classes, got "
            f"{vectors.shape} and {classes.shape}"
        )
    medians = np.empty((n_classes, vectors.shape[1]))
    for c in range(n_classes):
        rows = vectors[classes == c]
        if rows.shape[0] == 0:
            raise ArgumentError(f"class {c} has no pixels; cannot take a median")
        lower = (rows.shape[0] - 1) // 2
        medians[c] = np.sort(rows, axis=0)[lower]
    return MedianModel(medians)


def knn_classify(x: np.ndarray, m: MedianModel, literal_min: bool = False) -> int:
    """Class whose median is most (or with ``literal_min`` least) cosine-similar."""
    x = np.asarray(x, dtype=np.float64)
    nx = np.linalg.norm(x)
    if nx == 0:
        raise ArgumentError("cannot classify a zero vector under cosine similarity")
    sims = (m.medians @ x) / (np.linalg.norm(m.medians, axis=1) * nx)
    return int(np.argmin(sims) if literal_min else np.argmax(sims))


def knn_segment(
    v: MultiChannelVolume, m: MedianModel, literal_min: bool = False
) -> tuple[LabelMap, KnnScanStats]:
    """Classify every pixel; zero-norm pixels get class 0 and are tallied."""
    if v.channels != m.medians.shape[1]:
        raise ArgumentError(
            f"volume has {v.channels} channels, medians have {m.medians.shape[1]} dims"
        )
    t0 = time.perf_counter()
    X = v.data.reshape(v.channels, -1).astype(np.float64)
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    sims = (m.medians @ X) / (np.linalg.norm(m.medians, axis=1)[:, None] * safe[None, :])
    pred = np.argmin(sims, axis=0) if literal_min else np.argmax(sims, axis=0)
    pred[zero] = 0
    elapsed = time.perf_counter() - t0
    labels = LabelMap(
        pred.reshape(v.height, v.width).astype(np.uint8), n_classes=m.n_classes
    )
    return labels, KnnScanStats(elapsed_s=elapsed, zero_pixels=int(zero.sum()))


@dataclass(frozen=True)
class FuzzyState:
    """Result of fuzzy c-means: centers, memberships and the objective trace."""

    centers: np.ndarray        # (m, dim)
    memberships: np.ndarray    # (n, m), rows sum to 1
    fuzzifier: float
    objective_history: tuple[float, ...]
    converged: bool
    iterations: int


def _memberships(X: np.ndarray, centers: np.ndarray, h: float) -> np.ndarray:
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)  # (n, m)
    zero_rows = np.nonzero((d2 == 0).any(axis=1))[0]
    power = 1.0 / (h - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = d2 ** -power
        w = inv / inv.sum(axis=1, keepdims=True)
    for i in zero_rows:
        w[i] = 0.0
        w[i, int(np.argmax(d2[i] == 0))] = 1.0
    return w


def fuzzy_cmeans(
    X: np.ndarray,
    m: int,
    h: float = 2.0,
    tol: float = 1e-6,
    max_iter: int = 300,
    seed: int = 0,
) -> FuzzyState:
    """Alternate membership and center updates until centers stop moving.

    Minimizes sum_ij w_ij^h ||x_i - c_j||^2 with membership exponent
    2/(h-1); ``h`` is the fuzzifier (> 1). Initial centers are ``m``
    distinct data points drawn from the seeded stream. A point that
    coincides with a center gets membership 1 there and 0 elsewhere. The
    objective is recorded after every full update pair and never
    increases. If ``max_iter`` passes without the maximum center movement
    dropping below ``tol``, the state is returned flagged non-converged.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise ArgumentError("X is empty")
    if m < 1:
        raise ArgumentError(f"cluster count must be >= 1, got {m}")
    if m > n:
        raise ArgumentError(f"cannot place {m} distinct centers on {n} points")
    if not h > 1:
        raise ArgumentError(f"fuzzifier must be > 1, got {h}")

    gen = rng.stream(seed, rng.FCM_INIT)
    centers = X[gen.choice(n, size=m, replace=False)].copy()
    history: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        w = _memberships(X, centers, h)
        wh = w**h
        denom = wh.sum(axis=0)  # (m,)
        new_centers = centers.copy()
        ok = denom > 0
        new_centers[ok] = (wh.T[ok] @ X) / denom[ok, None]
        d2 = ((X[:, None, :] - new_centers[None, :, :]) ** 2).sum(axis=2)
        history.append(float((wh * d2).sum()))
        movement = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if movement < tol:
            converged = True
            break
    return FuzzyState(
        centers=centers,
        memberships=_memberships(X, centers, h),
        fuzzifier=h,
        objective_history=tuple(history),
        converged=converged,
        iterations=iterations,
    )
