"""Multi-channel volumes, label maps, and the bit-exact MCV container.

Container layout
----------------
An MCV file is::

    8 bytes   magic ``MCVOL\\x00\\x00\\x01``
    4 bytes   little-endian uint32 header length L
    L bytes   UTF-8 JSON header
    payload   raw values, little-endian

Volumes use the header ``{"dtype": "f32", "layout": "CHW", "shape":
[C, H, W]}`` followed by ``C*H*W`` float32 values in channel-major order.
Label maps use ``{"dtype": "u8", "layout": "HW", "shape": [H, W],
"n_classes": n}`` followed by ``H*W`` bytes; ``n_classes`` is optional on
read and defaults to 6. The ignore sentinel is always ``n_classes``.

Saving then loading reproduces the array bit-exactly. A payload shorter
than the header declares raises :class:`TruncationError`; any other
malformation raises :class:`FormatError`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError, TruncationError

MAGIC = b"MCVOL\x00\x00\x01"

#: RGB palette used by PPM export: 6 class colors plus the ignore color.
PALETTE = (
    (0, 0, 0),  # class 0 (conventionally background)
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (128, 128, 128),  # ignore
)


@dataclass(frozen=True)
class MultiChannelVolume:
    """A C x H x W stack of scalar intensities, channel-major float32."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 3:
            raise ArgumentError(f"volume data must be (C, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ArgumentError(f"volume dims must all be >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ArgumentError("volume intensities must be finite")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """An H x W map of class indices; ``n_classes`` is the ignore sentinel."""

    labels: np.ndarray
    n_classes: int = 6

    def __post_init__(self):
        if not 1 <= self.n_classes <= 255:
            raise ArgumentError(f"n_classes must be in [1, 255], got {self.n_classes}")
        arr = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ArgumentError(f"labels must be a non-empty (H, W) array, got shape {arr.shape}")
        if arr.max(initial=0) > self.n_classes:
            raise ArgumentError(
                f"labels must be < {self.n_classes} or the ignore value {self.n_classes}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def ignore_index(self) -> int:
        return self.n_classes

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def ignore_mask(self) -> np.ndarray:
        return self.labels == self.n_classes


def write_container(path, header: dict, payload: bytes) -> None:
    """Write a raw MCV container; ``header`` keys are kept in order."""
    blob = json.dumps(header).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write container to {path}: {exc}") from exc


def read_container(path) -> tuple[dict, bytes]:
    """Read a raw MCV container, returning (header, payload)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not an MCV container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if len(raw) < start + hlen:
        raise FormatError(f"{path}: header declares {hlen} bytes but file is shorter")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError(f"{path}: header must be a JSON object")
    return header, raw[start + hlen :]


def _check_shape(header: dict, path, rank: int) -> tuple[int, ...]:
    shape = header.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != rank
        or not all(isinstance(s, int) and s >= 1 for s in shape)
    ):
        raise FormatError(f"{path}: header shape must be {rank} positive ints, got {shape!r}")
    return tuple(shape)


def save_volume(path, v: MultiChannelVolume) -> None:
    """Write ``v`` so that :func:`load_volume` reproduces it bit-exactly."""
    header = {"dtype": "f32", "layout": "CHW", "shape": [v.channels, v.height, v.width]}
    write_container(path, header, v.data.astype("<f4", copy=False).tobytes())


def load_volume(path) -> MultiChannelVolume:
    header, payload = read_container(path)
    if header.get("dtype") != "f32":
        raise FormatError(f"{path}: unknown dtype tag {header.get('dtype')!r} (expected 'f32')")
    if header.get("layout") != "CHW":
        raise FormatError(f"{path}: unknown layout {header.get('layout')!r} (expected 'CHW')")
    c, h, w = _check_shape(header, path, 3)
    expected = 4 * c * h * w
    if len(payload) < expected:
        raise TruncationError(f"{path}: payload has {len(payload)} bytes, header needs {expected}")
    if len(payload) > expected:
        raise FormatError(f"{path}: payload has {len(payload) - expected} trailing bytes")
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    try:
        return MultiChannelVolume(data)
    except ArgumentError as exc:
        raise FormatError(f"{path}: stored volume is invalid: {exc}") from exc


def save_labels(path, lm: LabelMap) -> None:
    header = {
        "dtype": "u8",
        "layout": "HW",
        "shape": [lm.height, lm.width],
        "n_classes": lm.n_classes,
    }
    write_container(path, header, lm.labels.tobytes())


def load_labels(path) -> LabelMap:
    header, payload = read_container(path)
    if header.get("dtype") != "u8":
        raise FormatError(f"{path}: unknown dtype tag {header.get('dtype')!r} (expected 'u8')")
    if header.get("layout") != "HW":
        raise FormatError(f"{path}: unknown layout {header.get('layout')!r} (expected 'HW')")
    h, w = _check_shape(header, path, 2)
    if len(payload) < h * w:
        raise TruncationError(f"{path}: payload has {len(payload)} bytes, header needs {h * w}")
    if len(payload) > h * w:
        raise FormatError(f"{path}: payload has {len(payload) - h * w} trailing bytes")
    n_classes = header.get("n_classes", 6)
    if not isinstance(n_classes, int):
        raise FormatError(f"{path}: n_classes must be an int, got {n_classes!r}")
    labels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    try:
        return LabelMap(labels, n_classes=n_classes)
    except ArgumentError as exc:
        raise FormatError(f"{path}: stored labels are invalid: {exc}") from exc


def write_pgm(path, lm: LabelMap) -> None:
    """Export labels as binary PGM (P5); gray value = raw class index."""
    with open(path, "wb") as fh:
        fh.write(f"P5\n{lm.width} {lm.height}\n255\n".encode("ascii"))
        fh.write(lm.labels.tobytes())


def write_ppm(path, lm: LabelMap, palette=PALETTE) -> None:
    """Export labels as binary PPM (P6) using the fixed class palette.

    Classes beyond the palette reuse the last (ignore) entry.
    """
    table = np.array(palette, dtype=np.uint8)
    idx = np.minimum(lm.labels, len(palette) - 1)
    rgb = table[idx]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{lm.width} {lm.height}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
