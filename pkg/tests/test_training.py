import math

import numpy as np
import pytest

from vlm3d.autodiff import Tensor
from vlm3d.errors import BatchTooSmallError, ConfigError
from vlm3d.mllm import SystemConfig, VlmSystem
from vlm3d.training import (AblationToggles, AdamW, FreezeFlags, TrainConfig,
                            clip_loss, infonce_from_similarity, lr_at,
                            run_pretrain, run_stage1, run_stage2,
                            stage2_trainable_parameters, table7_arms)

SMALL = SystemConfig(seed=0)


def tiny_pairs(world, n=4):
    return world.pairs()[:n]


class TestClipLoss:
    def test_identical_features_ln_n(self):
        feats = Tensor(np.ones((4, 8), dtype=np.float64))
        loss = clip_loss(feats, feats, 1.0)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-9)

    def test_orthonormal_pairs_sharp_temperature(self):
        feats = Tensor(np.eye(4, dtype=np.float64))
        loss = clip_loss(feats, feats, 0.01)
        assert loss.item() < 1e-6

    def test_hand_similarity_matrix_oracle(self):
        """Symmetric InfoNCE over [[1,0],[0.5,1]] at tau=1, against scalar
        softmax arithmetic done longhand."""
        sims = Tensor(np.array([[1.0, 0.0], [0.5, 1.0]]))
        got = infonce_from_similarity(sims, 1.0).item()
        # image->text: rows with diagonal targets
        r0 = -math.log(math.exp(1) / (math.exp(1) + math.exp(0)))
        r1 = -math.log(math.exp(1) / (math.exp(0.5) + math.exp(1)))
        # text->image: columns with diagonal targets
        c0 = -math.log(math.exp(1) / (math.exp(1) + math.exp(0.5)))
        c1 = -math.log(math.exp(1) / (math.exp(0) + math.exp(1)))
        expect = ((r0 + r1) / 2 + (c0 + c1) / 2) / 2
        assert got == pytest.approx(expect, abs=1e-9)
        assert got == pytest.approx(0.3936693, abs=1e-6)

    def test_batch_too_small(self):
        one = Tensor(np.ones((1, 4)))
        with pytest.raises(BatchTooSmallError):
            clip_loss(one, one, 1.0)

    def test_matched_beats_shuffled(self):
        rng = np.random.default_rng(0)
        img = Tensor(rng.normal(size=(6, 16)))
        txt_good = Tensor(img.data + 0.05 * rng.normal(size=(6, 16)))
        txt_bad = Tensor(txt_good.data[::-1].copy())
        assert clip_loss(img, txt_good, 0.1).item() < clip_loss(img, txt_bad, 0.1).item()

    def test_gradient_check(self, gradcheck):
        rng = np.random.default_rng(1)
        img = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        txt = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        tau = Tensor(np.asarray(0.3), requires_grad=True)
        gradcheck(lambda: clip_loss(img, txt, tau), [img, txt, tau],
                  np.random.default_rng(2), eps=1e-4, rel_tol=1e-2)


class TestSchedule:
    def test_zero_at_start(self):
        cfg = TrainConfig(total_steps=100, peak_lr=1e-3, warmup_frac=0.1)
        assert lr_at(0, cfg) == 0.0

    def test_peak_at_warmup_end(self):
        cfg = TrainConfig(total_steps=100, peak_lr=1e-3, warmup_frac=0.1)
        assert lr_at(10, cfg) == pytest.approx(1e-3)

    def test_zero_at_total(self):
        cfg = TrainConfig(total_steps=100, peak_lr=1e-3, warmup_frac=0.1)
        assert lr_at(100, cfg) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_warmup_then_decay(self):
        cfg = TrainConfig(total_steps=50, peak_lr=1.0, warmup_frac=0.2)
        values = [lr_at(s, cfg) for s in range(51)]
        assert all(a <= b + 1e-12 for a, b in zip(values[:10], values[1:11]))
        assert all(a >= b - 1e-12 for a, b in zip(values[10:-1], values[11:]))


class TestConfigRules:
    def test_stage1_forces_freezes(self):
        cfg = TrainConfig(phase="stage1")
        assert cfg.freeze.vision and cfg.freeze.lm

    def test_stage1_rejects_unlock_vision(self):
        with pytest.raises(ConfigError):
            TrainConfig(phase="stage1", ablation=AblationToggles(unlock_vision=True))

    def test_stage2_vision_freeze_follows_toggle(self):
        assert TrainConfig(phase="stage2").freeze.vision is True
        assert TrainConfig(phase="stage2",
                           ablation=AblationToggles(unlock_vision=True)).freeze.vision is False

    def test_unknown_phase(self):
        with pytest.raises(ConfigError):
            TrainConfig(phase="stage3")

    def test_table7_has_five_distinct_arms(self):
        arms = table7_arms()
        assert len(arms) == 5
        assert len({tuple(vars(a).values()) for a in arms}) == 5


class TestRuns:
    def test_pretrain_zero_steps_keeps_init(self, small_world):
        system = VlmSystem(SMALL)
        before = {k: v.copy() for k, v in system.state_dict().items()}
        result = run_pretrain(system, tiny_pairs(small_world),
                              TrainConfig(phase="pretrain", total_steps=0, batch_size=4))
        assert result.losses == []
        after = system.state_dict()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_pretrain_batch_of_one_rejected(self, small_world):
        system = VlmSystem(SMALL)
        with pytest.raises(BatchTooSmallError):
            run_pretrain(system, tiny_pairs(small_world, 1),
                         TrainConfig(phase="pretrain", total_steps=1, batch_size=1))

    def test_stage1_freeze_contract_and_perceiver_moves(self, small_world):
        system = VlmSystem(SMALL)
        vis_before = {k: v.copy() for k, v in system.vision.state_dict().items()}
        lm_before = {k: v.copy() for k, v in system.lm.state_dict().items()}
        perc_before = {k: v.copy() for k, v in system.perceiver.state_dict().items()}
        cfg = TrainConfig(phase="stage1", total_steps=3, batch_size=2, peak_lr=1e-3, seed=1)
        result = run_stage1(system, tiny_pairs(small_world), cfg)
        assert len(result.losses) == 3
        assert all(np.array_equal(vis_before[k], v)
                   for k, v in system.vision.state_dict().items())
        assert all(np.array_equal(lm_before[k], v)
                   for k, v in system.lm.state_dict().items())
        delta = sum(float(np.abs(perc_before[k] - v).sum())
                    for k, v in system.perceiver.state_dict().items())
        assert delta > 0

    def test_stage1_loss_decreases_in_windows(self, small_world):
        system = VlmSystem(SMALL)
        cfg = TrainConfig(phase="stage1", total_steps=100, batch_size=4,
                          peak_lr=3e-3, seed=2)
        result = run_stage1(system, tiny_pairs(small_world), cfg)
        first = float(np.mean(result.losses[:50]))
        second = float(np.mean(result.losses[50:]))
        assert second < first

    def test_stage2_trainable_policy(self):
        system = VlmSystem(SMALL)
        from vlm3d.lora import lora_wrap, LoraSpec
        lora_wrap(system.lm, LoraSpec())
        cfg = TrainConfig(phase="stage2")
        stage2_trainable_parameters(system, cfg)
        trainable = {name for name, p in system.lm.named_parameters() if p.requires_grad}
        assert any("lora_a" in n for n in trainable)
        assert any(n.startswith("tok_emb.") for n in trainable)
        assert not any(".attn.wq.base." in n for n in trainable)
        assert all(not p.requires_grad for p in system.vision.parameters())

    def test_stage2_no_seg_records_zero_seg_contribution(self, world_dir, tmp_path):
        """A stage-2 step on records without [SEG] equals the language loss
        alone (seg_weight has no effect)."""
        from vlm3d.datagen.records import InstructionDataset, InstructionRecord
        world, root = world_dir
        rec = InstructionRecord(id="r", image="volumes/scene_0000.m3dv",
                                task="report", question="describe",
                                answer=world.scenes[0].report_text[:40])
        ds = InstructionDataset([rec, rec], root)
        losses = []
        for seg_w in (0.0, 7.0):
            system = VlmSystem(SMALL)
            cfg = TrainConfig(phase="stage2", total_steps=1, batch_size=2,
                              peak_lr=0.0, seed=3, seg_weight=seg_w)
            result = run_stage2(system, ds, cfg)
            losses.append(result.losses[0])
        assert losses[0] == pytest.approx(losses[1], abs=1e-7)

    def test_stage2_frozen_vision_bit_identical(self, seg_dataset):
        ds, _ = seg_dataset
        system = VlmSystem(SMALL)
        before = {k: v.copy() for k, v in system.vision.state_dict().items()}
        cfg = TrainConfig(phase="stage2", total_steps=2, batch_size=2, seed=4,
                          ablation=AblationToggles(unlock_vision=False))
        run_stage2(system, ds, cfg)
        assert all(np.array_equal(before[k], v)
                   for k, v in system.vision.state_dict().items())

    def test_bit_reproducible_given_seed(self, small_world):
        losses = []
        for _ in range(2):
            system = VlmSystem(SystemConfig(seed=5))
            cfg = TrainConfig(phase="pretrain", total_steps=4, batch_size=4, seed=6)
            losses.append(run_pretrain(system, tiny_pairs(small_world), cfg).losses)
        assert losses[0] == losses[1]

    def test_loss_csv_shape(self, small_world):
        system = VlmSystem(SMALL)
        cfg = TrainConfig(phase="pretrain", total_steps=3, batch_size=4, seed=7)
        result = run_pretrain(system, tiny_pairs(small_world), cfg)
        csv = result.loss_csv("pretrain")
        lines = csv.strip().splitlines()
        assert lines[0] == "step,phase,loss,lr"
        assert len(lines) == 4
