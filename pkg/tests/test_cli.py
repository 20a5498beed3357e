"""CLI: config precedence, unknown keys, artifact writing, exit codes."""

import json
import struct

import numpy as np
import pytest

from ecgnet.cli import main, parse_config
from ecgnet.errors import EcgnetError


MICRO_MODEL_FLAGS = [
    "--model.conv_layers", "4", "--model.kernel_size", "5",
    "--model.pool_every", "2", "--model.channel_double_every", "2",
    "--model.base_channels", "4", "--model.channel_cap", "8",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A synthesized corpus with splits and one trained micro checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--preset", "table1_mix", "--n", "48", "--seed", "9",
                 "--out", str(root / "corpus")]) == 0
    assert main(["split", "--input", str(root / "corpus"),
                 "--out_prefix", str(root / "part"), "--seed", "3"]) == 0
    assert main(["train", "--data", str(root / "part.train"),
                 "--out", str(root / "model.ecgm"),
                 "--heads", "sinus_rhythm,atrial_fibrillation",
                 "--epochs", "1", "--batch_size", "16", *MICRO_MODEL_FLAGS]) == 0
    return root


class TestParseConfig:
    def test_train_defaults(self):
        config = parse_config("train", None,
                              {"data": "d", "out": "o"})
        assert config["epochs"] == 96
        assert config["batch_size"] == 32
        assert config["model.kernel_size"] == 16

    def test_flag_overrides_file(self, tmp_path):
        cfg_file = tmp_path / "train.json"
        cfg_file.write_text(json.dumps({"epochs": 96, "data": "d", "out": "o"}))
        config = parse_config("train", str(cfg_file), {"epochs": 3})
        assert config["epochs"] == 3

    def test_unknown_key_named_in_error(self, tmp_path):
        cfg_file = tmp_path / "train.json"
        cfg_file.write_text(json.dumps({"epohcs": 3}))
        with pytest.raises(EcgnetError, match="epohcs"):
            parse_config("train", str(cfg_file), {})

    def test_missing_required_key(self):
        with pytest.raises(EcgnetError, match="out"):
            parse_config("train", None, {"data": "d"})


class TestSynth:
    def test_proportions_match_preset(self, workspace):
        manifest = json.loads((workspace / "corpus.manifest.json").read_text())
        mix = manifest["class_mix"]
        # 204 / 41522 of 48 records rounds to 0; the dominant class leads
        assert sum(mix.values()) == 48
        assert mix["sinus"] == max(mix.values())

    def test_rare_class_proportion_at_2000(self, tmp_path):
        assert main(["synth", "--preset", "table1_mix", "--n", "2000",
                     "--seed", "1", "--out", str(tmp_path / "big")]) == 0
        mix = json.loads((tmp_path / "big.manifest.json").read_text())["class_mix"]
        expected = 204 / 41522 * 2000
        assert abs(mix["complete_heart_block"] - expected) <= 1.0

    def test_missing_mix_errors(self, tmp_path, capsys):
        rc = main(["synth", "--n", "4", "--out", str(tmp_path / "x")])
        assert rc == 1
        assert "preset or a mix_file" in capsys.readouterr().err


class TestTrainEvalPredict:
    def test_artifacts_written(self, workspace):
        assert (workspace / "model.ecgm").exists()
        assert (workspace / "model.history.json").exists()
        assert (workspace / "model.loss.png").exists()

    def test_eval_writes_delimited_json_and_figure(self, workspace, tmp_path):
        out = tmp_path / "metrics"
        assert main(["eval", "--checkpoint", str(workspace / "model.ecgm"),
                     "--data", str(workspace / "part.test"),
                     "--out_dir", str(out)]) == 0
        assert (out / "metrics.json").exists()
        assert (out / "metrics.csv").exists()
        assert (out / "metrics.txt").exists()
        assert (out / "metrics.png").exists()
        table = json.loads((out / "metrics.json").read_text())
        assert set(table) == {"sinus_rhythm", "atrial_fibrillation"}

    def test_predict_scores_and_labels(self, workspace, tmp_path):
        out = tmp_path / "preds.json"
        assert main(["predict", "--checkpoint", str(workspace / "model.ecgm"),
                     "--data", str(workspace / "part.test"),
                     "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["records"], "expected predictions"
        first = payload["records"][0]
        assert set(first["scores"]) == {"sinus_rhythm", "atrial_fibrillation"}
        assert all(0.0 <= v <= 1.0 for v in first["scores"].values())

    def test_predict_vocabulary_mismatch_is_error(self, workspace, tmp_path, capsys):
        # a dataset whose vocabulary lacks the checkpoint's heads
        from ecgnet.data import Dataset, EcgRecord, LabelVocabulary, save_dataset
        rng = np.random.default_rng(0)
        records = [EcgRecord(voltages=rng.standard_normal((12, 2500)).astype(np.float32),
                             labels=frozenset({"pvc"}), source_id="only-pvc")]
        ds = Dataset.build(records, LabelVocabulary(["pvc"]), source="test")
        save_dataset(ds, tmp_path / "other_vocab")
        rc = main(["predict", "--checkpoint", str(workspace / "model.ecgm"),
                   "--data", str(tmp_path / "other_vocab"),
                   "--out", str(tmp_path / "p.json")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "vocabulary" in err

    def test_nonexistent_input_nonzero_exit(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "nope.ecgm"),
                   "--data", str(tmp_path / "nope"),
                   "--out_dir", str(tmp_path / "out")])
        assert rc == 1

    def test_resample_command(self, workspace, tmp_path):
        assert main(["resample", "--input", str(workspace / "corpus"),
                     "--target", "5", "--seed", "1",
                     "--out", str(tmp_path / "bal")]) == 0
        manifest = json.loads((tmp_path / "bal.manifest.json").read_text())
        assert manifest["resample"]["per_class_target"] == 5

    def test_byte_identical_reruns(self, workspace, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert main(["eval", "--checkpoint", str(workspace / "model.ecgm"),
                         "--data", str(workspace / "part.test"),
                         "--out_dir", str(out)]) == 0
        assert (out_a / "metrics.json").read_bytes() == (out_b / "metrics.json").read_bytes()
        assert (out_a / "metrics.csv").read_bytes() == (out_b / "metrics.csv").read_bytes()


class TestExperimentCommand:
    def test_runs_with_spec_file(self, tmp_path):
        spec = {
            "name": "cli-tiny",
            "models": [{"name": "single", "heads": ["atrial_fibrillation"]},
                       {"name": "pair", "heads": ["atrial_fibrillation",
                                                  "sinus_rhythm"]}],
            "data": {"mix": {"sinus": 30, "atrial_fibrillation": 20},
                     "n": 50, "seed": 2},
            "split_fractions": [0.7, 0.1, 0.2],
            "split_seed": 1,
            "n_seeds": 1,
            "base_seed": 4,
            "model_overrides": {"conv_layers": 4, "kernel_size": 5,
                                "pool_every": 2, "channel_double_every": 2,
                                "base_channels": 4, "channel_cap": 8},
            "train": {"epochs": 1, "batch_size": 16},
        }
        spec_file = tmp_path / "spec.json"
        spec_file.write_text(json.dumps(spec))
        out = tmp_path / "report"
        assert main(["experiment", "--spec_file", str(spec_file),
                     "--out_dir", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        models = {m["name"] for m in report["models"]}
        assert models == {"single", "pair"}
        assert (out / "report.txt").exists()
        assert (out / "report.csv").exists()
        assert (out / "comparison.png").exists()
        assert (out / "loss_curves.png").exists()
        text = (out / "report.txt").read_text()
        assert "single" in text and "pair" in text

    def test_preset_and_spec_file_mutually_exclusive(self, tmp_path, capsys):
        rc = main(["experiment", "--preset", "experiment_table1_desk",
                   "--spec_file", "x.json", "--out_dir", str(tmp_path)])
        assert rc == 1

    @pytest.mark.slow
    def test_table1_desk_preset_runs_end_to_end(self, tmp_path):
        # shrunk via overrides: tiny corpus, one epoch, one seed
        out = tmp_path / "desk"
        assert main(["experiment", "--preset", "experiment_table1_desk",
                     "--out_dir", str(out), "--n", "300", "--epochs", "1",
                     "--n_seeds", "1"]) == 0
        report = json.loads((out / "report.json").read_text())
        models = {m["name"] for m in report["models"]}
        assert {"single-chb", "single-mobitz", "model-a", "model-b"} <= models
        # model A's column covers exactly its two classes
        assert set(report["cells"]["model-a"]) == {"mobitz_i", "first_degree_avb"}
        classes = {c["name"] for c in report["classes"]}
        assert {"complete_heart_block", "avnrt", "mobitz_i", "atrial_fibrillation",
                "ectopic_atrial_rhythm", "first_degree_avb", "sinus_rhythm",
                "atrial_flutter", "pac", "pvc", "fusion_complex",
                "bigeminy"} <= classes


class TestOutDirEnv:
    def test_relative_outputs_under_env_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ECGNET_OUT_DIR", str(tmp_path))
        assert main(["synth", "--preset", "table1_mix", "--n", "4",
                     "--seed", "0", "--out", "envtest"]) == 0
        assert (tmp_path / "envtest.ecgd").exists()


class TestByteIdenticalArtifacts:
    def test_synth_reruns_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["synth", "--preset", "table1_mix", "--n", "6",
                         "--seed", "77", "--out", str(tmp_path / name)]) == 0
        assert ((tmp_path / "a.ecgd").read_bytes()
                == (tmp_path / "b.ecgd").read_bytes())
        assert ((tmp_path / "a.manifest.json").read_bytes()
                == (tmp_path / "b.manifest.json").read_bytes())
