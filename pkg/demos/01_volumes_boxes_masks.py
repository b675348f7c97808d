"""Volumes, masks and boxes: the geometric vocabulary of the system.

Walk through min-max normalization, resizing, the mask -> box bound, IOU
and Dice overlap, and the bit-exact M3DV file format.

Run:  python demos/01_volumes_boxes_masks.py
"""

import tempfile
from pathlib import Path

import numpy as np

from vlm3d.volume import (Box3D, Volume, VoxelMask, box_iou, box_to_mask, dice,
                          mask_to_box, normalize_minmax, read_volume,
                          resize_to_standard, write_volume)

rng = np.random.default_rng(0)

# --- normalization ------------------------------------------------------
raw = Volume(rng.normal(40.0, 25.0, size=(1, 8, 32, 32)))
norm = normalize_minmax(raw)
print(f"normalized range: [{norm.data.min():.3f}, {norm.data.max():.3f}]")

# --- resizing to a standard grid ----------------------------------------
big = Volume(rng.random((1, 64, 128, 128), dtype=np.float32))
std = resize_to_standard(big, (32, 256, 256))
print(f"resize {big.spatial_shape} -> {std.spatial_shape} (trilinear, voxel centers)")

# --- masks and their bounding boxes --------------------------------------
mask = np.zeros((8, 16, 16), dtype=np.uint8)
mask[2:5, 3:9, 4:12] = 1
box = mask_to_box(VoxelMask(mask))
print(f"tightest box of the mask: {box.text()}")

# the rasterized box covers the mask's bound exactly
roundtrip = mask_to_box(box_to_mask(box, (8, 16, 16)))
print(f"box -> mask -> box IOU: {box_iou(box, roundtrip):.4f}")

# --- overlap metrics ------------------------------------------------------
a = Box3D(0, 0, 0, 0.5, 0.5, 0.5)
b = Box3D(0.25, 0.25, 0.25, 0.75, 0.75, 0.75)
print(f"offset-cube IOU: {box_iou(a, b):.6f}  (exact: 1/15 = {1 / 15:.6f})")

m1 = VoxelMask((rng.random((8, 8, 8)) > 0.6).astype(np.uint8))
m2 = VoxelMask((rng.random((8, 8, 8)) > 0.6).astype(np.uint8))
print(f"dice of two random masks: {dice(m1, m2):.4f}")

# --- bit-exact file IO ----------------------------------------------------
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "volume.m3dv"
    write_volume(norm, path)
    back = read_volume(path)
    print(f"M3DV round trip bit-exact: {np.array_equal(back.data, norm.data)}")
    print(f"file header starts with: {path.read_bytes()[:5]!r}")
