"""Volumetric data types, preprocessing, 3D geometry and bit-exact file IO.

A Volume is a dense (C, D, H, W) float grid, a VoxelMask a (D, H, W) binary
grid, and a Box3D an axis-aligned box in normalized [0, 1] coordinates with
half-open extents. Boxes use the convention x<->W, y<->H, z<->D.

File format ("M3DV", shared by volumes and masks):
    magic   4 bytes  0x4D 0x33 0x44 0x56
    dtype   1 byte   0 = float32 little-endian, 1 = unsigned byte
    dims    4 x uint32 little-endian: C, D, H, W (masks store C = 1)
    payload row-major, W fastest
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    EmptyMaskError,
    InvalidBoxError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnknownDtypeError,
)

MAGIC = b"M3DV"
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_FOR_KIND = {"f": 0, "u": 1}


@dataclass
class Volume:
    """Dense 3D scalar grid with a channel axis, stored as (C, D, H, W)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4:
            raise ShapeMismatchError(f"volume needs (C, D, H, W), got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ShapeMismatchError(f"volume dims must all be >= 1, got {arr.shape}")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def spatial_shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


@dataclass
class VoxelMask:
    """Binary (D, H, W) occupancy grid; values are exactly 0 or 1."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ShapeMismatchError(f"mask needs (D, H, W), got shape {arr.shape}")
        arr = np.ascontiguousarray(arr != 0, dtype=np.uint8)
        self.data = arr

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned box, normalized [0,1] coordinates, half-open extents."""

    x1: float
    y1: float
    z1: float
    x2: float
    y2: float
    z2: float

    def __post_init__(self):
        for lo, hi, name in ((self.x1, self.x2, "x"), (self.y1, self.y2, "y"), (self.z1, self.z2, "z")):
            if not (0.0 <= lo < hi <= 1.0):
                raise InvalidBoxError(f"need 0 <= {name}1 < {name}2 <= 1, got ({lo}, {hi})")

    def volume(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1) * (self.z2 - self.z1)

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (self.x1, self.y1, self.z1, self.x2, self.y2, self.z2)

    def text(self) -> str:
        """Serialize with 3 decimal places, e.g. '(0.250, 0.188, ...)'."""
        return "(" + ", ".join(f"{c:.3f}" for c in self.as_tuple()) + ")"


def normalize_minmax(v: Volume) -> Volume:
    """Rescale intensities to [0, 1]; a constant volume maps to all zeros."""
    data = v.data
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        return Volume(np.zeros_like(data))
    return Volume((data - lo) / (hi - lo))


def _axis_lerp_indices(n_in: int, n_out: int):
    """Voxel-center source coordinates for one axis (align-corners-false)."""
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(centers).astype(np.int64)
    w = centers - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    return lo_c, hi_c, w.astype(np.float32)


def _axis_nearest_indices(n_in: int, n_out: int):
    idx = np.floor((np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out)).astype(np.int64)
    return np.clip(idx, 0, n_in - 1)


def resize_to_standard(v: Volume, target: tuple[int, int, int], mode: str = "trilinear") -> Volume:
    """Resize spatial dims to ``target`` (D, H, W).

    Trilinear interpolation samples voxel centers at (i + 0.5) / N; masks
    must use nearest mode so values stay binary.
    """
    if mode not in ("trilinear", "nearest"):
        raise ValueError(f"unknown resize mode {mode!r}")
    td, th, tw = target
    if min(td, th, tw) < 1:
        raise ShapeMismatchError(f"target dims must be >= 1, got {target}")
    data = v.data
    if data.shape[1:] == (td, th, tw):
        return Volume(data.copy())

    if mode == "nearest":
        di = _axis_nearest_indices(data.shape[1], td)
        hi = _axis_nearest_indices(data.shape[2], th)
        wi = _axis_nearest_indices(data.shape[3], tw)
        return Volume(data[:, di][:, :, hi][:, :, :, wi])

    out = data
    for axis, n_out in ((1, td), (2, th), (3, tw)):
        lo, hi2, w = _axis_lerp_indices(out.shape[axis], n_out)
        a = np.take(out, lo, axis=axis)
        b = np.take(out, hi2, axis=axis)
        shape = [1, 1, 1, 1]
        shape[axis] = n_out
        w = w.reshape(shape)
        out = a * (1.0 - w) + b * w
    return Volume(out.astype(np.float32))


def resize_mask(m: VoxelMask, target: tuple[int, int, int]) -> VoxelMask:
    """Nearest-neighbor mask resize (the only mode that keeps values binary)."""
    out = resize_to_standard(Volume(m.data[None].astype(np.float32)), target, mode="nearest")
    return VoxelMask(out.data[0])


def mask_to_box(m: VoxelMask) -> Box3D:
    """Tightest half-open normalized box containing every set voxel."""
    coords = np.argwhere(m.data)
    if coords.size == 0:
        raise EmptyMaskError("cannot bound an all-zero mask")
    d, h, w = m.shape
    (d1, h1, w1) = coords.min(axis=0)
    (d2, h2, w2) = coords.max(axis=0) + 1
    return Box3D(x1=w1 / w, y1=h1 / h, z1=d1 / d, x2=w2 / w, y2=h2 / h, z2=d2 / d)


def box_to_mask(box: Box3D, dims: tuple[int, int, int]) -> VoxelMask:
    """Rasterize a normalized box onto a (D, H, W) grid.

    A voxel is set when its center falls inside the half-open box.
    """
    d, h, w = dims
    zc = (np.arange(d) + 0.5) / d
    yc = (np.arange(h) + 0.5) / h
    xc = (np.arange(w) + 0.5) / w
    inside = (
        ((zc >= box.z1) & (zc < box.z2))[:, None, None]
        & ((yc >= box.y1) & (yc < box.y2))[None, :, None]
        & ((xc >= box.x1) & (xc < box.x2))[None, None, :]
    )
    return VoxelMask(inside.astype(np.uint8))


def box_iou(a: Box3D, b: Box3D) -> float:
    """Intersection over union by box volume; 0 when disjoint."""
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    iz = max(0.0, min(a.z2, b.z2) - max(a.z1, b.z1))
    inter = ix * iy * iz
    union = a.volume() + b.volume() - inter
    return inter / union if union > 0 else 0.0


def dice(a: VoxelMask, b: VoxelMask) -> float:
    """Dice overlap 2|a n b| / (|a| + |b|); defined 1.0 when both empty."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    na = a.count()
    nb = b.count()
    if na + nb == 0:
        return 1.0
    inter = int(np.logical_and(a.data, b.data).sum())
    return 2.0 * inter / (na + nb)


def _write_payload(path, arr: np.ndarray, code: int):
    c, d, h, w = arr.shape
    header = MAGIC + struct.pack("<BIIII", code, c, d, h, w)
    Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())


def write_volume(v: Volume, path) -> None:
    _write_payload(path, v.data.astype("<f4"), 0)


def write_mask(m: VoxelMask, path) -> None:
    _write_payload(path, m.data[None].astype("u1"), 1)


def _read_payload(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}")
    if len(raw) < 4 + 1 + 16:
        raise TruncatedPayloadError(f"{path}: header incomplete")
    code, c, d, h, w = struct.unpack("<BIIII", raw[4:21])
    if code not in _DTYPE_CODES:
        raise UnknownDtypeError(f"{path}: dtype code {code}")
    dt = _DTYPE_CODES[code]
    need = c * d * h * w * dt.itemsize
    body = raw[21:]
    if len(body) < need:
        raise TruncatedPayloadError(f"{path}: payload has {len(body)} bytes, header promises {need}")
    if len(body) > need:
        raise TruncatedPayloadError(f"{path}: {len(body) - need} trailing bytes after payload")
    return np.frombuffer(body, dtype=dt).reshape(c, d, h, w)


def read_volume(path) -> Volume:
    return Volume(_read_payload(path).astype(np.float32))


def read_mask(path) -> VoxelMask:
    arr = _read_payload(path)
    if arr.shape[0] != 1:
        raise ShapeMismatchError(f"{path}: mask file must store C=1, got C={arr.shape[0]}")
    return VoxelMask(arr[0])
