"""Training loop determinism, overfit capacity, checkpoint round trips."""

import struct

import numpy as np
import pytest

from ecgnet.data import Dataset, LabelVocabulary
from ecgnet.errors import (ConfigError, FormatError, IntegrityError,
                           TrainingError, VersionError)
from ecgnet.model import ModelConfig, build_model, forward
from ecgnet.autodiff import Tensor
from ecgnet.optim import AdamState
from ecgnet.train import (TrainConfig, TrainHistory, load_checkpoint,
                          run_training, save_checkpoint)


class StubRecord:
    def __init__(self, voltages, labels, source_id="stub"):
        self.voltages = voltages
        self.labels = frozenset(labels)
        self.source_id = source_id


def micro_config(heads=("hot",)):
    return ModelConfig(input_channels=2, input_length=32, conv_layers=4,
                       kernel_size=3, pool_every=2, channel_double_every=2,
                       base_channels=4, channel_cap=8, head_names=heads)


def bump_dataset(n=16, seed=0, noise=0.3):
    """Separable micro task: class "hot" iff channel 0 carries a square bump."""
    rng = np.random.default_rng(seed)
    vocab = LabelVocabulary(["hot"])
    records = []
    for i in range(n):
        v = rng.standard_normal((2, 32)).astype(np.float32) * noise
        labels = set()
        if i % 2 == 0:
            v[0, 8:24] += 3.0
            labels.add("hot")
        records.append(StubRecord(v, labels, source_id=f"bump-{i}"))
    return Dataset.build(records, vocab, source="bump")


def zero_signal_dataset(n=16, seed=0):
    rng = np.random.default_rng(seed)
    vocab = LabelVocabulary(["coin"])
    records = [StubRecord(rng.standard_normal((2, 32)).astype(np.float32),
                          {"coin"} if rng.random() > 0.5 else set(),
                          source_id=f"z-{i}") for i in range(n)]
    return Dataset.build(records, vocab, source="zero-signal")


class TestRunTraining:
    def test_overfit_micro_task(self):
        ds = bump_dataset()
        model = build_model(micro_config(), seed=1)
        config = TrainConfig(epochs=100, batch_size=8, seed=3, l2_lambda=0.0)
        _, history = run_training(model, ds, None, config)
        assert len(history.train_loss) == 100
        assert history.train_loss[-1] < 0.05

    def test_loss_lower_at_end_than_start(self):
        ds = bump_dataset()
        model = build_model(micro_config(), seed=2)
        _, history = run_training(model, ds, None,
                                  TrainConfig(epochs=12, batch_size=8, seed=0))
        assert history.train_loss[-1] < history.train_loss[0]

    def test_identical_seeds_identical_history(self):
        def run():
            ds = bump_dataset()
            model = build_model(micro_config(), seed=5)
            return run_training(model, ds, None,
                                TrainConfig(epochs=5, batch_size=4, seed=11))[1]
        assert run() == run()

    def test_default_epochs_96_honored(self):
        ds = bump_dataset(n=4)
        model = build_model(micro_config(), seed=1)
        config = TrainConfig(batch_size=4, seed=0)
        assert config.epochs == 96
        _, history = run_training(model, ds, None, config)
        assert len(history.train_loss) == 96

    def test_weight_norms_bounded_with_l2_on_noise(self):
        ds = zero_signal_dataset()
        model = build_model(micro_config(heads=("coin",)), seed=7)
        before = max(float(np.abs(p.tensor.data).max()) for p in model.params)
        _, _ = run_training(model, ds, None,
                            TrainConfig(epochs=96, batch_size=8, seed=1,
                                        l2_lambda=1e-3))
        after = max(float(np.abs(p.tensor.data).max()) for p in model.params)
        assert np.isfinite(after)
        assert after < max(10.0, 10.0 * before)

    def test_head_not_in_vocabulary_rejected(self):
        ds = bump_dataset()
        model = build_model(micro_config(heads=("unknown",)), seed=0)
        with pytest.raises(ConfigError):
            run_training(model, ds, None, TrainConfig(epochs=1))

    def test_empty_dataset_rejected(self):
        ds = Dataset.build([], LabelVocabulary(["hot"]), source="empty")
        model = build_model(micro_config(), seed=0)
        with pytest.raises(ConfigError):
            run_training(model, ds, None, TrainConfig(epochs=1))

    def test_nan_aborts_with_diagnostic(self):
        ds = bump_dataset()
        model = build_model(micro_config(), seed=0)
        model.param("conv01.w").data[:] = np.inf
        with pytest.raises(TrainingError, match="conv01|bn01"):
            run_training(model, ds, None, TrainConfig(epochs=1, batch_size=8))

    def test_validation_points_recorded(self):
        ds = bump_dataset()
        model = build_model(micro_config(), seed=1)
        _, history = run_training(model, ds, ds,
                                  TrainConfig(epochs=4, batch_size=8, seed=0,
                                              eval_every=2))
        assert [epoch for epoch, _ in history.val_points] == [2, 4]


class TestCheckpoint:
    def trained(self, tmp_path, epochs=2):
        ds = bump_dataset()
        model = build_model(micro_config(), seed=4)
        config = TrainConfig(epochs=epochs, batch_size=8, seed=9)
        state = AdamState.for_params(model.parameters(),
                                     learning_rate=config.learning_rate)
        model, history = run_training(model, ds, None, config, adam_state=state)
        return ds, model, state, history, config

    def test_round_trip_bit_identical_logits(self, tmp_path):
        ds, model, state, history, config = self.trained(tmp_path)
        path = tmp_path / "model.ecgm"
        save_checkpoint(path, model, state, history, config)
        restored, state2, history2, config2 = load_checkpoint(path)
        x = Tensor(np.stack([r.voltages for r in ds.records[:4]]))
        original = forward(model, x, mode="eval").data
        loaded = forward(restored, x, mode="eval").data
        assert np.array_equal(original, loaded)
        assert history2 == history
        assert config2 == config
        assert state2.step_count == state.step_count

    def test_resume_matches_uninterrupted(self, tmp_path):
        # uninterrupted 4 epochs
        ds = bump_dataset()
        model_a = build_model(micro_config(), seed=4)
        state_a = AdamState.for_params(model_a.parameters())
        _, hist_a = run_training(model_a, ds, None,
                                 TrainConfig(epochs=4, batch_size=8, seed=9),
                                 adam_state=state_a)
        # interrupted at epoch 2, checkpointed, resumed
        model_b = build_model(micro_config(), seed=4)
        state_b = AdamState.for_params(model_b.parameters())
        _, hist_b = run_training(model_b, ds, None,
                                 TrainConfig(epochs=2, batch_size=8, seed=9),
                                 adam_state=state_b)
        path = tmp_path / "interrupt.ecgm"
        save_checkpoint(path, model_b, state_b, hist_b)
        restored, state_r, hist_r, _ = load_checkpoint(path)
        _, hist_r = run_training(restored, ds, None,
                                 TrainConfig(epochs=4, batch_size=8, seed=9),
                                 adam_state=state_r, history=hist_r, start_epoch=2)
        for pa, pb in zip(model_a.params, restored.params):
            assert np.array_equal(pa.tensor.data, pb.tensor.data), pa.name
        assert hist_a == hist_r

    def test_wrong_version_rejected(self, tmp_path):
        _, model, state, history, config = self.trained(tmp_path)
        path = tmp_path / "m.ecgm"
        save_checkpoint(path, model, state, history, config)
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 42)
        path.write_bytes(raw)
        with pytest.raises((VersionError, IntegrityError)):
            load_checkpoint(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ecgm"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_corrupted_payload_fails_checksum(self, tmp_path):
        _, model, state, history, config = self.trained(tmp_path)
        path = tmp_path / "m.ecgm"
        save_checkpoint(path, model, state, history, config)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(raw)
        with pytest.raises(IntegrityError):
            load_checkpoint(path)

    def test_model_only_checkpoint(self, tmp_path):
        model = build_model(micro_config(), seed=0)
        path = tmp_path / "fresh.ecgm"
        save_checkpoint(path, model)
        restored, state, history, config = load_checkpoint(path)
        assert state is None and history is None and config is None
        for pa, pb in zip(model.params, restored.params):
            assert np.array_equal(pa.tensor.data, pb.tensor.data)
