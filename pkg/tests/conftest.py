import numpy as np
import pytest

from vlm3d.datagen import generate_world
from vlm3d.datagen.records import InstructionDataset


@pytest.fixture(scope="session")
def small_world():
    return generate_world(7, 4)


@pytest.fixture(scope="session")
def world_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("world")
    world = generate_world(7, 4)
    world.save(root)
    return world, root


def finite_diff_check(build_loss, params, rng, eps=1e-3, rel_tol=1e-2, samples=4):
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must run a fresh forward pass each call and return a
    scalar Tensor. Checks ``samples`` random coordinates per parameter.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    loss.backward()
    checked = 0
    for p in params:
        if not p.requires_grad:
            continue
        assert p.grad is not None, "parameter missed by backward"
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        idx = rng.choice(flat.size, size=min(samples, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = build_loss().item()
            flat[i] = orig - eps
            down = build_loss().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            analytic = float(gflat[i])
            scale = max(abs(numeric), abs(analytic))
            if scale < 1e-7:
                continue
            rel = abs(numeric - analytic) / scale
            assert rel < rel_tol, (
                f"grad mismatch at coord {i}: analytic {analytic:.6g} "
                f"numeric {numeric:.6g} rel {rel:.3g}")
            checked += 1
    assert checked > 0, "no coordinates checked"
    return checked


@pytest.fixture
def gradcheck():
    return finite_diff_check


@pytest.fixture(scope="session")
def seg_dataset(tmp_path_factory):
    """Four segmentation records over a saved world (one object each)."""
    from vlm3d import templates as T
    from vlm3d.datagen.pipelines import build_segmentation_records

    root = tmp_path_factory.mktemp("segworld")
    world = generate_world(11, 4)
    world.save(root)
    records = []
    for scene in world.scenes:
        mask_paths = [f"masks/{scene.scene_id}_obj{i}_{o.category.replace(' ', '_')}.m3dv"
                      for i, o in enumerate(scene.objects)]
        recs = build_segmentation_records(scene, "category", T.TERM_DICTIONARY, 0,
                                          f"volumes/{scene.scene_id}.m3dv", mask_paths)
        records.append(recs[0])
    return InstructionDataset(records, root), world
