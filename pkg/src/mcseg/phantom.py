"""Synthetic echo-decay phantoms and the boundary-ignoring relabel pass.

A phantom couples a deterministic multi-region label map (stacked bands on
the left, nested ellipses on the right, both with seeded jitter) with a
per-class exponential decay signal: a pixel of class ``c`` in channel ``t``
holds ``A_c * exp(-TE_t / T2_c)`` plus optional Gaussian noise. Identical
specs, including the seed, produce bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ArgumentError, ConfigError
from .volume import LabelMap, MultiChannelVolume

#: (amplitude, decay constant in ms) per class. Class 0 is a faint
#: background. Classes 1/4 and 3/5 share identical signal parameters and
#: differ only in region shape (band vs ellipse), so pixel-wise classifiers
#: cannot separate them while spatial-context models can. The layout uses
#: exactly three decay constants, so the noiseless signal matrix has rank 3.
DEFAULT_CLASS_PARAMS = (
    (2.0, 320.0),
    (210.0, 60.0),
    (105.0, 60.0),
    (140.0, 150.0),
    (210.0, 60.0),
    (140.0, 150.0),
)

#: Default echo times in ms: index 2..32 of an 8 ms ladder (the first rung
#: is skipped), giving 31 channels.
DEFAULT_ECHO_TIMES = tuple(8.0 * t for t in range(2, 33))


def _default_class_params(n_classes: int) -> tuple[tuple[float, float], ...]:
    if n_classes <= len(DEFAULT_CLASS_PARAMS):
        return DEFAULT_CLASS_PARAMS[:n_classes]
    extra = tuple(
        (80.0 + 35.0 * (c % 4), 45.0 + 40.0 * c)
        for c in range(len(DEFAULT_CLASS_PARAMS), n_classes)
    )
    return DEFAULT_CLASS_PARAMS + extra


@dataclass(frozen=True)
class PhantomSpec:
    """Full description of one synthetic sample; everything is seeded."""

    n_classes: int = 6
    channels: int = 31
    height: int = 64
    width: int = 40
    echo_times: tuple[float, ...] = DEFAULT_ECHO_TIMES
    class_params: tuple[tuple[float, float], ...] = field(default=None)  # type: ignore[assignment]
    noise_sigma: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.class_params is None:
            object.__setattr__(self, "class_params", _default_class_params(self.n_classes))
        object.__setattr__(self, "echo_times", tuple(float(t) for t in self.echo_times))
        object.__setattr__(
            self, "class_params", tuple((float(a), float(t2)) for a, t2 in self.class_params)
        )
        if self.n_classes < 2:
            raise ArgumentError("need at least 2 classes (one region over background)")
        if self.channels < 1 or self.height < 1 or self.width < 1:
            raise ArgumentError("channels, height and width must be >= 1")
        if len(self.echo_times) != self.channels:
            raise ArgumentError(
                f"{len(self.echo_times)} echo times for {self.channels} channels"
            )
        te = np.asarray(self.echo_times)
        if te[0] <= 0 or np.any(np.diff(te) <= 0):
            raise ArgumentError("echo times must be strictly increasing and positive")
        if len(self.class_params) != self.n_classes:
            raise ArgumentError(
                f"{len(self.class_params)} class params for {self.n_classes} classes"
            )
        for c, (amp, t2) in enumerate(self.class_params):
            if t2 <= 0:
                raise ArgumentError(f"class {c}: decay constant must be > 0, got {t2}")
            if amp < 0:
                raise ArgumentError(f"class {c}: amplitude must be >= 0, got {amp}")
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be >= 0")


def _region_labels(spec: PhantomSpec) -> np.ndarray:
    """Rasterize the seeded region layout: bands left, nested ellipses right."""
    h, w, n = spec.height, spec.width, spec.n_classes
    gen = rng.stream(spec.seed, rng.GEOMETRY)
    jitter = gen.uniform(-1.0, 1.0, size=16)  # fixed draw count, indexed below

    n_regions = n - 1
    n_ellipses = n_regions // 2
    n_bands = n_regions - n_ellipses

    labels = np.zeros((h, w), dtype=np.uint8)
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]

    if n_bands:
        x0 = (0.08 + 0.02 * jitter[0]) * w
        x1 = (0.52 + 0.02 * jitter[1]) * w
        y0 = (0.10 + 0.02 * jitter[2]) * h
        y1 = (0.90 + 0.02 * jitter[3]) * h
        edges = np.linspace(y0, y1, n_bands + 1)
        edges[1:-1] += 0.02 * h * jitter[4 : 4 + n_bands - 1]
        in_x = (xs >= x0) & (xs < x1)
        for b in range(n_bands):
            band = in_x & (ys >= edges[b]) & (ys < edges[b + 1])
            labels[band] = b + 1

    if n_ellipses:
        cx = (0.74 + 0.02 * jitter[8]) * w
        cy = (0.50 + 0.02 * jitter[9]) * h
        rx = (0.20 + 0.01 * jitter[10]) * w
        ry = (0.32 + 0.01 * jitter[11]) * h
        for e in range(n_ellipses):
            scale = 0.62**e
            inside = ((xs - cx) / (rx * scale)) ** 2 + ((ys - cy) / (ry * scale)) ** 2 <= 1.0
            labels[inside] = n_bands + 1 + e

    counts = np.bincount(labels.ravel(), minlength=n)
    for c in range(n):
        if counts[c] == 0:
            raise ConfigError(
                f"class {c} has zero area for a {h}x{w} layout with {n} classes; "
                "use a larger image or fewer classes"
            )
    return labels


def generate_phantom(spec: PhantomSpec) -> tuple[MultiChannelVolume, LabelMap]:
    """Generate the (volume, labels) pair described by ``spec``."""
    labels = _region_labels(spec)
    te = np.asarray(spec.echo_times, dtype=np.float64)
    amp = np.asarray([a for a, _ in spec.class_params], dtype=np.float64)
    t2 = np.asarray([t for _, t in spec.class_params], dtype=np.float64)
    # profiles[t, c] = A_c * exp(-TE_t / T2_c)
    profiles = amp[None, :] * np.exp(-te[:, None] / t2[None, :])
    data = profiles[:, labels]
    if spec.noise_sigma > 0:
        noise_gen = rng.stream(spec.seed, rng.NOISE)
        data = data + noise_gen.normal(0.0, spec.noise_sigma, size=data.shape)
    volume = MultiChannelVolume(data.astype(np.float32))
    return volume, LabelMap(labels, n_classes=spec.n_classes)


def ignore_boundary(lm: LabelMap, band_width: int) -> LabelMap:
    """Relabel inter-class boundary pixels to the ignore index.

    A pixel becomes ignore when any pixel within Chebyshev distance
    ``band_width`` holds a different, non-ignore label. Width 0 returns the
    input unchanged; the pass is idempotent for a fixed width.
    """
    if band_width < 0:
        raise ArgumentError(f"band_width must be >= 0, got {band_width}")
    if band_width == 0:
        return lm
    lab = lm.labels
    ign = lm.ignore_index
    h, w = lab.shape
    hit = np.zeros((h, w), dtype=bool)
    for dy in range(-band_width, band_width + 1):
        for dx in range(-band_width, band_width + 1):
            if dy == 0 and dx == 0:
                continue
            r0, r1 = max(0, -dy), h - max(0, dy)
            c0, c1 = max(0, -dx), w - max(0, dx)
            if r0 >= r1 or c0 >= c1:
                continue
            here = lab[r0:r1, c0:c1]
            there = lab[r0 + dy : r1 + dy, c0 + dx : c1 + dx]
            hit[r0:r1, c0:c1] |= (there != ign) & (there != here)
    out = lab.copy()
    out[hit] = ign
    return LabelMap(out, n_classes=lm.n_classes)
