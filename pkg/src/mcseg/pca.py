"""Channel reduction by power iteration with deflation.

A C-channel volume is flattened to a C x (H*W) matrix X. Components are
extracted one at a time: power iteration on the Gram operator of the
current deflated matrix yields the leading direction w, its singular value
is ||X_deflated^T w||, and the matrix is deflated by removing the w
component from every column before the next extraction. No centering is
applied by default; pass ``center=True`` to subtract channel means.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import ArgumentError, ConvergenceError, DegenerateError, DegenerateRangeError
from .volume import MultiChannelVolume

_ZERO_GRAM = 1e-300  # matvec results at float64 underflow scale count as null
_RANK_EPS = 1e-12  # deflated norms below this fraction of ||X|| count as rank 0


@dataclass(frozen=True)
class PcaModel:
    """Ordered orthonormal components over channel space."""

    components: np.ndarray       # (k, C), unit rows
    singular_values: np.ndarray  # (k,), non-increasing
    channel_count: int
    channel_means: np.ndarray | None = None  # set when fitted with centering

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def retain(self, k: int) -> "PcaModel":
        """Model restricted to the leading ``k`` components."""
        if not 1 <= k <= self.k:
            raise ArgumentError(f"cannot retain {k} of {self.k} components")
        return PcaModel(
            self.components[:k].copy(),
            self.singular_values[:k].copy(),
            self.channel_count,
            self.channel_means,
        )

    def validate(self, norm_tol: float = 1e-9, ortho_tol: float = 1e-8) -> None:
        """Raise if unit norms, orthogonality, or ordering are violated."""
        norms = np.linalg.norm(self.components, axis=1)
        if np.any(np.abs(norms - 1.0) > norm_tol):
            raise ArgumentError(f"component norms deviate from 1 by {np.abs(norms - 1).max():g}")
        gram = self.components @ self.components.T
        off = gram - np.diag(np.diag(gram))
        if np.abs(off).max(initial=0.0) > ortho_tol:
            raise ArgumentError(f"components not orthogonal: max dot {np.abs(off).max():g}")
        sv = self.singular_values
        if np.any(np.diff(sv) > norm_tol * max(1.0, float(sv[0]) if len(sv) else 1.0)):
            raise ArgumentError("singular values are not non-increasing")


def flatten(v: MultiChannelVolume) -> np.ndarray:
    """C x (H*W) float64 matrix; row c is channel c in row-major pixel order."""
    return v.data.reshape(v.channels, v.height * v.width).astype(np.float64)


def _orthogonalize(vec: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for b in basis:
        vec = vec - (b @ vec) * b
    return vec


def _fallback_direction(basis: list[np.ndarray], c: int, seed: int, s: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to ``basis`` for zero-variance slots."""
    candidates = [np.eye(c)[i] for i in range(c)]
    candidates.append(rng.stream(seed, rng.PCA_START + 7000 + s).normal(size=c))
    for cand in candidates:
        resid = _orthogonalize(cand.astype(np.float64), basis)
        n = np.linalg.norm(resid)
        if n > 0.5:
            return resid / n
    raise ArgumentError("no orthogonal direction left; basis already spans channel space")


def fit_pca(
    X: np.ndarray,
    k: int,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    *,
    center: bool = False,
    start_seed: int = 0,
) -> PcaModel:
    """Extract ``k`` components from the C x N matrix ``X``.

    Power iteration runs on the Gram operator of the deflated matrix and
    stops when successive unit iterates differ by less than ``tol`` in
    norm; exceeding ``max_iter`` raises :class:`ConvergenceError` with the
    achieved residual. Each component's sign is fixed so its
    largest-magnitude entry is non-negative.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ArgumentError(f"X must be 2-d, got shape {X.shape}")
    if np.isnan(X).any():
        raise ArgumentError("X contains NaN")
    c = X.shape[0]
    if not 1 <= k <= c:
        raise ArgumentError(f"k must be in [1, {c}], got {k}")

    means = None
    if center:
        means = X.mean(axis=1)
        X = X - means[:, None]

    resid = X.copy()
    scale = np.linalg.norm(X)
    comps: list[np.ndarray] = []
    svals: list[float] = []
    for s in range(k):
        if np.linalg.norm(resid) <= _RANK_EPS * max(scale, _ZERO_GRAM):
            # numerically rank-exhausted: any orthogonal direction, zero mass
            w = _fallback_direction(comps, c, start_seed, s)
            sigma = 0.0
        else:
            gram = resid @ resid.T
            v = rng.stream(start_seed, rng.PCA_START + s).normal(size=c)
            v = _orthogonalize(v, comps)
            n = np.linalg.norm(v)
            v = _fallback_direction(comps, c, start_seed, s) if n < 1e-12 else v / n
            converged = False
            residual = np.inf
            for _ in range(max_iter):
                u = _orthogonalize(gram @ v, comps)
                n = np.linalg.norm(u)
                if n <= _ZERO_GRAM:
                    # v lies in the null space of the deflated Gram operator
                    converged = True
                    break
                u /= n
                residual = float(np.linalg.norm(u - v))
                v = u
                if residual < tol:
                    converged = True
                    break
            if not converged:
                raise ConvergenceError(
                    f"component {s} did not converge after {max_iter} iterations "
                    f"(residual {residual:g}, tol {tol:g})",
                    residual=residual,
                )
            w = v
            sigma = float(np.linalg.norm(resid.T @ w))
        i = int(np.argmax(np.abs(w)))
        if w[i] < 0:
            w = -w
        comps.append(w)
        svals.append(sigma)
        resid -= np.outer(w, w @ resid)

    return PcaModel(
        components=np.vstack(comps),
        singular_values=np.asarray(svals, dtype=np.float64),
        channel_count=c,
        channel_means=means,
    )


def explained_ratio(m: PcaModel, top_n: int) -> float:
    """Share of total singular-value mass held by the leading ``top_n``.

    Requires a model fitted with all channel_count components so the
    denominator is complete.
    """
    if m.k < m.channel_count:
        raise ArgumentError(
            f"model holds {m.k} of {m.channel_count} components; fit with k=C "
            "to get exact denominators"
        )
    if not 1 <= top_n <= m.k:
        raise ArgumentError(f"top_n must be in [1, {m.k}], got {top_n}")
    total = float(m.singular_values.sum())
    if total <= 0.0:
        raise DegenerateError("all singular values are zero; ratio undefined")
    return float(m.singular_values[:top_n].sum() / total)


def transform(v: MultiChannelVolume, m: PcaModel) -> MultiChannelVolume:
    """Project ``v`` onto the model's components; output has ``m.k`` channels."""
    if v.channels != m.channel_count:
        raise ArgumentError(
            f"volume has {v.channels} channels, model expects {m.channel_count}"
        )
    X = flatten(v)
    if m.channel_means is not None:
        X = X - m.channel_means[:, None]
    Y = m.components @ X
    return MultiChannelVolume(Y.reshape(m.k, v.height, v.width).astype(np.float32))


def normalize_0_255(v: MultiChannelVolume) -> MultiChannelVolume:
    """Affine map of all channels jointly onto [0, 255].

    One global minimum and maximum are taken across every channel, so
    relative scale between channels is preserved exactly.
    """
    arr = v.data.astype(np.float64)
    gmin = float(arr.min())
    gmax = float(arr.max())
    if not gmax > gmin:
        raise DegenerateRangeError(f"volume is constant ({gmin}); cannot normalize")
    out = 255.0 * (arr - gmin) / (gmax - gmin)
    return MultiChannelVolume(out.astype(np.float32))
