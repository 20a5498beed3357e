"""Comparison harness: report structure, presets, failed-cell handling."""

import json

import numpy as np
import pytest

from ecgnet.errors import ConfigError
from ecgnet.experiment import (DataSpec, ExperimentSpec, ModelDef,
                               run_comparison_experiment)
from ecgnet.presets import load_preset


def tiny_spec(**overrides):
    base = dict(
        name="tiny",
        models=[ModelDef("single", ("atrial_fibrillation",)),
                ModelDef("pair", ("atrial_fibrillation", "sinus_rhythm"))],
        data=DataSpec(mix={"sinus": 40, "atrial_fibrillation": 24}, n=64, seed=3),
        split_fractions=(0.7, 0.1, 0.2),
        split_seed=5,
        n_seeds=1,
        base_seed=2,
        model_overrides={"conv_layers": 4, "kernel_size": 5, "pool_every": 2,
                         "channel_double_every": 2, "base_channels": 4,
                         "channel_cap": 8},
        train={"epochs": 2, "batch_size": 16},
    )
    base.update(overrides)
    return ExperimentSpec(**base)


@pytest.fixture(scope="module")
def tiny_report():
    return run_comparison_experiment(tiny_spec())


class TestRunComparison:
    def test_classes_follow_vocabulary_order(self, tiny_report):
        assert tiny_report.classes == ["atrial_fibrillation", "sinus_rhythm"]

    def test_single_model_column_covers_only_its_head(self, tiny_report):
        assert "sinus_rhythm" not in tiny_report.model_heads_set("single")
        assert tiny_report.mean_f1("pair", "sinus_rhythm") is not None

    def test_supports_come_from_test_split(self, tiny_report):
        total = 64
        test_n = round(0.2 * total)
        assert sum(tiny_report.supports.values()) <= 2 * test_n
        assert all(v >= 0 for v in tiny_report.supports.values())

    def test_report_dict_and_text(self, tiny_report):
        d = tiny_report.to_dict()
        assert d["experiment"] == "tiny"
        assert {m["name"] for m in d["models"]} == {"single", "pair"}
        assert "f1_mean" in d["cells"]["single"]["atrial_fibrillation"]
        text = tiny_report.to_text()
        assert "atrial_fibrillation" in text
        assert "single" in text and "pair" in text
        csv = tiny_report.to_csv()
        assert csv.splitlines()[0] == "class,support,model,seed_index,f1,precision,recall"

    def test_best_flag_marks_max_mean(self, tiny_report):
        best = tiny_report.best_model("atrial_fibrillation")
        scores = {m: tiny_report.mean_f1(m, "atrial_fibrillation")
                  for m in tiny_report.model_names}
        assert scores[best] == max(s for s in scores.values() if s is not None)

    def test_single_model_single_seed_reduces_to_metrics(self):
        spec = tiny_spec(models=[ModelDef("only", ("atrial_fibrillation",))])
        report = run_comparison_experiment(spec)
        assert report.model_names == ["only"]
        cell = report.cells["only"]["atrial_fibrillation"]
        assert len(cell) == 1
        assert 0.0 <= cell[0] <= 1.0

    def test_failed_cell_marked_not_fatal(self):
        # an impossible model config fails its cells but the sweep continues
        spec = tiny_spec(models=[ModelDef("broken", ("atrial_fibrillation",)),
                                 ModelDef("fine", ("atrial_fibrillation",))],
                         model_overrides={"conv_layers": 3, "kernel_size": 5,
                                          "pool_every": 2, "base_channels": 4})
        report = run_comparison_experiment(spec)
        assert len(report.failures) == 2
        assert report.mean_f1("broken", "atrial_fibrillation") is None
        assert "failed" in report.to_text()

    def test_unknown_head_rejected(self):
        spec = tiny_spec(models=[ModelDef("bad", ("not_a_class",))])
        with pytest.raises(ConfigError):
            run_comparison_experiment(spec)

    def test_deterministic_given_seeds(self):
        a = run_comparison_experiment(tiny_spec())
        b = run_comparison_experiment(tiny_spec())
        assert a.to_dict() == b.to_dict()


class TestPresets:
    def test_table1_preset_layout(self):
        spec = ExperimentSpec.from_dict(load_preset("experiment_table1"))
        names = [m.name for m in spec.models]
        assert names[:5] == ["single-chb", "single-avnrt", "single-mobitz",
                             "single-afib", "single-ear"]
        assert "model-a" in names and "model-b" in names
        model_a = next(m for m in spec.models if m.name == "model-a")
        assert set(model_a.heads) == {"mobitz_i", "first_degree_avb"}
        model_b = next(m for m in spec.models if m.name == "model-b")
        assert len(model_b.heads) == 14
        assert spec.train["epochs"] == 96
        assert spec.data.resample_target == 4000

    def test_desk_preset_is_smaller(self):
        spec = ExperimentSpec.from_dict(load_preset("experiment_table1_desk"))
        assert spec.data.n < 42000
        assert spec.train["epochs"] < 96
        assert spec.model_overrides["conv_layers"] < 34

    def test_multitask_desk_preset(self):
        spec = ExperimentSpec.from_dict(load_preset("experiment_multitask_desk"))
        assert spec.n_seeds == 3
        assert spec.data.n == 8000
        assert spec.data.mix["mobitz_i"] == 150
        assert spec.data.mix["first_degree_avb"] == 1500
        names = [m.name for m in spec.models]
        assert names == ["single-rare", "single-common", "pair"]

    def test_unknown_preset_raises(self):
        with pytest.raises(KeyError):
            load_preset("does_not_exist")
