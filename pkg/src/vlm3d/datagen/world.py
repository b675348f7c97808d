"""Synthetic 3D-volume world with known ground truth.

Each scene places 1-4 non-overlapping objects (ellipsoid, box or tube
primitives) from the 12-term vocabulary on a phase-dependent background.
Ground truth is exact: per-object voxel masks, category intensities, the
acquisition plane encoded as an intensity ramp along one axis, and a
templated report that mentions every object exactly once.

Every volume carries two fixed calibration corners (one at 0.0, one at
1.0) so min-max normalization preserves absolute intensities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import templates as T
from ..errors import ConfigError
from ..volume import Box3D, Volume, VoxelMask, mask_to_box, write_mask, write_volume

PLANE_AXIS = {"axial": 0, "coronal": 1, "sagittal": 2}  # ramp axis (D, H, W)
PLANE_RAMP = 0.12
NOISE_STD = 0.01
MIN_DIM = 16


@dataclass
class SceneObject:
    category: str
    primitive: str  # ellipsoid | box | tube
    center: tuple[int, int, int]  # (d, h, w) voxels
    radii: tuple[int, int, int]
    intensity: float
    location: str = ""

    def __post_init__(self):
        if not self.location:
            self.location = ""


def _object_location(center: tuple[int, int, int], dims: tuple[int, int, int]) -> str:
    _, h, w = dims
    vertical = "upper" if center[1] < h / 2 else "lower"
    side = "left" if center[2] < w / 2 else "right"
    return f"{vertical} {side}"


def _raster(obj: SceneObject, dims: tuple[int, int, int]) -> np.ndarray:
    d, h, w = dims
    cz, cy, cx = obj.center
    rz, ry, rx = obj.radii
    zz = np.arange(d)[:, None, None]
    yy = np.arange(h)[None, :, None]
    xx = np.arange(w)[None, None, :]
    if obj.primitive == "ellipsoid":
        return (((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0
    if obj.primitive == "box":
        return (np.abs(zz - cz) <= rz) & (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    if obj.primitive == "tube":
        return ((((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) <= 1.0) & (np.abs(zz - cz) <= rz)
    raise ValueError(f"unknown primitive {obj.primitive!r}")


@dataclass
class SynthScene:
    seed: int
    index: int
    dims: tuple[int, int, int]
    plane: str
    phase: str
    objects: list[SceneObject]
    report_text: str = ""

    @property
    def scene_id(self) -> str:
        return f"scene_{self.index:04d}"

    def render(self) -> Volume:
        d, h, w = self.dims
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.index, 7]))
        vol = np.full((d, h, w), T.PHASE_BACKGROUND[self.phase], dtype=np.float32)
        vol += rng.normal(0.0, NOISE_STD, size=vol.shape).astype(np.float32)
        axis = PLANE_AXIS[self.plane]
        ramp = (np.arange(self.dims[axis], dtype=np.float32) / max(self.dims[axis] - 1, 1)) * PLANE_RAMP
        shape = [1, 1, 1]
        shape[axis] = self.dims[axis]
        vol += ramp.reshape(shape)
        for obj in self.objects:
            vol[_raster(obj, self.dims)] = obj.intensity
        vol = np.clip(vol, 0.0, 1.0)
        vol[:2, :2, :2] = 0.0
        vol[-2:, -2:, -2:] = 1.0
        return Volume(vol[None])

    def object_mask(self, i: int) -> VoxelMask:
        return VoxelMask(_raster(self.objects[i], self.dims).astype(np.uint8))

    def object_box(self, i: int) -> Box3D:
        return mask_to_box(self.object_mask(i))

    def organs(self) -> list[SceneObject]:
        return [o for o in self.objects if o.category in T.ORGANS]

    def abnormalities(self) -> list[SceneObject]:
        return [o for o in self.objects if o.category in T.ABNORMALITIES]

    def region_report(self, i: int) -> str:
        obj = self.objects[i]
        return f"A {obj.category} is present in the {obj.location} region of this scan."


def _build_scene(seed: int, index: int, dims: tuple[int, int, int]) -> SynthScene:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    d, h, w = dims
    plane = T.PLANES[rng.integers(len(T.PLANES))]
    phase = T.PHASES[rng.integers(len(T.PHASES))]
    # one organ per scene (visual organ identity stays an 8-way cue) plus
    # 0-3 abnormalities, keeping scenes at 1-4 objects total
    organs = [T.ORGANS[int(rng.integers(len(T.ORGANS)))]]
    n_abn = int(rng.integers(0, 4))
    abnormalities = list(rng.choice(T.ABNORMALITIES, size=n_abn, replace=False))

    objects: list[SceneObject] = []
    occupied: list[tuple] = []
    for category in organs + abnormalities:
        placed = False
        for _ in range(30):
            rz = int(rng.integers(2, max(d // 4, 3)))
            ry = int(rng.integers(4, max(h // 5, 6)))
            rx = int(rng.integers(4, max(w // 5, 6)))
            cz = int(rng.integers(rz + 2, d - rz - 2))
            cy = int(rng.integers(ry + 2, h - ry - 2))
            cx = int(rng.integers(rx + 2, w - rx - 2))
            lo = (cz - rz - 1, cy - ry - 1, cx - rx - 1)
            hi = (cz + rz + 1, cy + ry + 1, cx + rx + 1)
            clash = any(all(lo[k] <= ohi[k] and hi[k] >= olo[k] for k in range(3))
                        for olo, ohi in occupied)
            if clash:
                continue
            primitive = ["ellipsoid", "box", "tube"][int(rng.integers(3))]
            obj = SceneObject(category=category, primitive=primitive,
                              center=(cz, cy, cx), radii=(rz, ry, rx),
                              intensity=T.CATEGORY_INTENSITY[category])
            obj.location = _object_location(obj.center, dims)
            objects.append(obj)
            occupied.append((lo, hi))
            placed = True
            break
        if not placed and not objects:
            # guarantee at least one object: drop it dead center
            obj = SceneObject(category=category, primitive="ellipsoid",
                              center=(d // 2, h // 2, w // 2), radii=(2, 4, 4),
                              intensity=T.CATEGORY_INTENSITY[category])
            obj.location = _object_location(obj.center, dims)
            objects.append(obj)

    sentences = [T.REPORT_OPENINGS[rng.integers(len(T.REPORT_OPENINGS))].format(
        plane=plane, phase=phase)]
    for obj in objects:
        pool = (T.REPORT_ORGAN_SENTENCES if obj.category in T.ORGANS
                else T.REPORT_ABNORMALITY_SENTENCES)
        sentences.append(pool[rng.integers(len(pool))].format(
            category=obj.category, location=obj.location))
    if not any(o.category in T.ABNORMALITIES for o in objects):
        sentences.append(T.REPORT_NORMAL_CLOSING)
    report = " ".join(sentences)
    return SynthScene(seed=seed, index=index, dims=dims, plane=plane,
                      phase=phase, objects=objects, report_text=report)


@dataclass
class World:
    seed: int
    dims: tuple[int, int, int]
    scenes: list[SynthScene] = field(default_factory=list)

    def pairs(self) -> list[tuple[Volume, str]]:
        """(volume, report) pairs for contrastive and stage-1 training."""
        return [(s.render(), s.report_text) for s in self.scenes]

    def save(self, out_dir) -> dict:
        """Write volumes, masks, reports and a deterministic manifest."""
        out = Path(out_dir)
        for sub in ("volumes", "masks", "reports"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        manifest = {"seed": self.seed, "dims": list(self.dims), "scenes": []}
        for scene in self.scenes:
            sid = scene.scene_id
            vol_rel = f"volumes/{sid}.m3dv"
            rep_rel = f"reports/{sid}.txt"
            write_volume(scene.render(), out / vol_rel)
            (out / rep_rel).write_text(scene.report_text, encoding="utf-8")
            entry = {"id": sid, "volume": vol_rel, "report": rep_rel,
                     "plane": scene.plane, "phase": scene.phase, "objects": []}
            for i, obj in enumerate(scene.objects):
                mask_rel = f"masks/{sid}_obj{i}_{obj.category.replace(' ', '_')}.m3dv"
                write_mask(scene.object_mask(i), out / mask_rel)
                entry["objects"].append({
                    "category": obj.category, "primitive": obj.primitive,
                    "location": obj.location, "mask": mask_rel,
                    "box": [round(c, 6) for c in scene.object_box(i).as_tuple()],
                })
            manifest["scenes"].append(entry)
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
        return manifest


def generate_world(seed: int, n_scenes: int, dims: tuple[int, int, int] = (16, 64, 64)) -> World:
    if len(dims) != 3 or min(dims) < MIN_DIM:
        raise ConfigError(f"world dims must be >= {MIN_DIM} each, got {dims}")
    if n_scenes < 1:
        raise ConfigError("need at least one scene")
    scenes = [_build_scene(seed, i, tuple(dims)) for i in range(n_scenes)]
    return World(seed=seed, dims=tuple(dims), scenes=scenes)


def load_world(world_dir) -> tuple[dict, Path]:
    """Read a saved world's manifest; returns (manifest, root path)."""
    root = Path(world_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    return manifest, root
