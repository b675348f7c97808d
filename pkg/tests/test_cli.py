import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from vlm3d.cli import main
from vlm3d.datagen.transcripts import build_world_transcript
from vlm3d.datagen import generate_world
from vlm3d.datagen.records import read_records_jsonl, validate_record


@pytest.fixture(scope="module")
def cli_world(tmp_path_factory):
    out = tmp_path_factory.mktemp("cliworld")
    rc = main(["gen-world", "--seed", "3", "--n", "4", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def transcript_path(cli_world, tmp_path_factory):
    world = generate_world(3, 4)
    tr = build_world_transcript(world, seed=0)
    path = tmp_path_factory.mktemp("tr") / "offline.jsonl"
    tr.save(path)
    return path


class TestGenWorld:
    def test_manifest_lists_scenes(self, cli_world):
        manifest = json.loads((cli_world / "manifest.json").read_text())
        assert len(manifest["scenes"]) == 4
        for entry in manifest["scenes"]:
            assert (cli_world / entry["volume"]).exists()
            assert (cli_world / entry["report"]).exists()

    def test_rerun_identical_manifest_hash(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        main(["gen-world", "--seed", "9", "--n", "3", "--out", str(a)])
        main(["gen-world", "--seed", "9", "--n", "3", "--out", str(b)])
        ha = hashlib.sha256((a / "manifest.json").read_bytes()).hexdigest()
        hb = hashlib.sha256((b / "manifest.json").read_bytes()).hexdigest()
        assert ha == hb

    def test_dims_below_minimum_exit_1(self, tmp_path, capsys):
        rc = main(["gen-world", "--seed", "1", "--n", "2", "--dims", "8,8,8",
                   "--out", str(tmp_path / "w")])
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestGenData:
    def test_vqa_offline(self, cli_world, transcript_path, tmp_path, capsys):
        out = tmp_path / "vqa"
        rc = main(["gen-data", "--pipeline", "vqa", "--world", str(cli_world),
                   "--out", str(out), "--offline", str(transcript_path)])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "pass rate" in stdout
        records = read_records_jsonl(out / "vqa_records.jsonl")
        assert records
        assert all(validate_record(r) == [] for r in records)
        assert (out / "vqa_rejects.jsonl").exists()

    def test_pos_pipeline_no_client_needed(self, cli_world, tmp_path):
        out = tmp_path / "pos"
        rc = main(["gen-data", "--pipeline", "pos", "--world", str(cli_world),
                   "--out", str(out)])
        assert rc == 0
        records = read_records_jsonl(out / "pos_records.jsonl")
        assert all(r.task in ("rec_cat", "reg_cat") for r in records)
        # image paths resolve relative to the records file
        for rec in records:
            assert (out / rec.image).resolve().exists()

    def test_seg_pipeline_description_mode(self, cli_world, tmp_path):
        out = tmp_path / "seg"
        rc = main(["gen-data", "--pipeline", "seg", "--world", str(cli_world),
                   "--out", str(out), "--mode", "description"])
        assert rc == 0
        records = read_records_jsonl(out / "seg_records.jsonl")
        assert all(r.task == "seg_ref" for r in records)
        assert all((out / r.mask).resolve().exists() for r in records)

    def test_refseg_offline(self, cli_world, transcript_path, tmp_path):
        out = tmp_path / "refseg"
        rc = main(["gen-data", "--pipeline", "refseg", "--world", str(cli_world),
                   "--out", str(out), "--offline", str(transcript_path)])
        assert rc == 0
        records = read_records_jsonl(out / "refseg_records.jsonl")
        assert len(records) == 4 * 6

    def test_missing_offline_and_endpoint_is_config_error(self, cli_world, tmp_path,
                                                          monkeypatch, capsys):
        for var in ("M3D_LLM_ENDPOINT", "M3D_LLM_OFFLINE"):
            monkeypatch.delenv(var, raising=False)
        rc = main(["gen-data", "--pipeline", "vqa", "--world", str(cli_world),
                   "--out", str(tmp_path / "x")])
        assert rc == 1


class TestTrainEval:
    def test_stage1_rejects_unlock_vision(self, cli_world, tmp_path, capsys):
        rc = main(["train", "--phase", "stage1", "--world", str(cli_world),
                   "--out", str(tmp_path / "t"), "--unlock-vision", "--steps", "1"])
        assert rc == 1

    def test_pretrain_writes_checkpoint_and_loss_csv(self, cli_world, tmp_path):
        out = tmp_path / "pre"
        rc = main(["train", "--phase", "pretrain", "--world", str(cli_world),
                   "--out", str(out), "--steps", "3", "--batch-size", "4", "--seed", "0"])
        assert rc == 0
        assert (out / "checkpoint.ntv").exists()
        lines = (out / "loss.csv").read_text().strip().splitlines()
        assert lines[0] == "step,phase,loss,lr"
        assert len(lines) == 4

    def test_eval_missing_checkpoint_nonzero_exit(self, cli_world, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "none.ntv"),
                   "--data", "x.jsonl", "--tasks", "vqa_closed"])
        assert rc == 1

    def test_train_then_eval_roundtrip(self, cli_world, transcript_path, tmp_path,
                                       capsys):
        pre = tmp_path / "pre"
        rc = main(["train", "--phase", "pretrain", "--world", str(cli_world),
                   "--out", str(pre), "--steps", "2", "--batch-size", "4"])
        assert rc == 0
        data_dir = tmp_path / "data"
        rc = main(["gen-data", "--pipeline", "seg", "--world", str(cli_world),
                   "--out", str(data_dir)])
        assert rc == 0
        st2 = tmp_path / "st2"
        rc = main(["train", "--phase", "stage2", "--data",
                   str(data_dir / "seg_records.jsonl"), "--out", str(st2),
                   "--init-checkpoint", str(pre / "checkpoint.ntv"),
                   "--steps", "2", "--batch-size", "2"])
        assert rc == 0
        out = tmp_path / "reports"
        rc = main(["eval", "--checkpoint", str(st2 / "checkpoint.ntv"),
                   "--data", str(data_dir / "seg_records.jsonl"),
                   "--tasks", "seg", "--out", str(out), "--max-new-tokens", "6"])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "[seg]" in stdout
        assert (out / "seg.json").exists()

    def test_config_unknown_keys_rejected(self, cli_world, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"seed": 1, "bogus": True}))
        rc = main(["train", "--phase", "pretrain", "--world", str(cli_world),
                   "--out", str(tmp_path / "o"), "--config", str(cfg), "--steps", "1"])
        assert rc == 1

    def test_help_lists_flags(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["train", "--help"])
        assert e.value.code == 0
        out = capsys.readouterr().out
        for flag in ("--phase", "--no-vision-pretrain", "--no-spatial-pooling",
                     "--linear-projection", "--unlock-vision"):
            assert flag in out
