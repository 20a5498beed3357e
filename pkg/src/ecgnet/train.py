"""Training loop and checkpoint persistence.

The loop optimizes the summed per-head sigmoid cross-entropy with Adam.
The L2 term enters through the optimizer's effective gradient
(g + 2 * lambda * w on regularized weights), which equals the gradient of
adding ``l2_penalty`` to the loss; the recorded objective includes the
penalty value so histories reflect the full criterion.

Checkpoints are little-endian binary: magic ``ECGM``, version u32, a
length-prefixed JSON blob (model config, optimizer hyperparameters and step
count, history), a tensor table (count u32, then per tensor: name length
u16 + UTF-8 name, rank u8, dims u32 each, float32 payload), an optimizer
state table in the same encoding, and a trailing CRC32 over all preceding
bytes. Resuming from a checkpoint reproduces an uninterrupted run bit for
bit because batch order depends only on (seed, epoch).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .autodiff import backward, first_nonfinite_op, tape_scope
from .data import Dataset, batch_iterator
from .errors import (ConfigError, FormatError, IntegrityError,
                     TrainingError, TruncatedFileError, VersionError)
from .metrics import MetricsTable, evaluate_model
from .model import Model, ModelConfig, build_model, forward, l2_penalty_value
from .optim import AdamState, adam_step

CHECKPOINT_MAGIC = b"ECGM"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    epochs: int = 96
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_lambda: float = 1e-4
    seed: int = 0
    eval_every: int = 0      # epochs between validation passes; 0 disables

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")

    def to_dict(self) -> dict:
        return dict(epochs=self.epochs, batch_size=self.batch_size,
                    learning_rate=self.learning_rate, beta1=self.beta1,
                    beta2=self.beta2, epsilon=self.epsilon,
                    l2_lambda=self.l2_lambda, seed=self.seed,
                    eval_every=self.eval_every)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)       # mean CE per epoch
    train_objective: list = field(default_factory=list)  # CE + L2 penalty
    val_points: list = field(default_factory=list)       # (epoch, MetricsTable)

    def to_dict(self) -> dict:
        return {"train_loss": list(self.train_loss),
                "train_objective": list(self.train_objective),
                "val_points": [[epoch, table.to_dict()]
                               for epoch, table in self.val_points]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(train_loss=list(d.get("train_loss", [])),
                   train_objective=list(d.get("train_objective", [])),
                   val_points=[(int(e), MetricsTable.from_dict(t))
                               for e, t in d.get("val_points", [])])

    def __eq__(self, other):
        return (isinstance(other, TrainHistory)
                and self.to_dict() == other.to_dict())


def run_training(model: Model, train_ds: Dataset, val_ds: Optional[Dataset],
                 config: TrainConfig, adam_state: Optional[AdamState] = None,
                 history: Optional[TrainHistory] = None, start_epoch: int = 0,
                 log=None) -> tuple:
    """Optimize the model in place; returns (model, history).

    Fully deterministic given ``config.seed``: batch order is a pure
    function of (seed, epoch) and parameter updates are Adam on the
    effective gradient. Passing ``adam_state``/``history``/``start_epoch``
    resumes an interrupted run, matching the uninterrupted one exactly.
    """
    config.validate()
    if not train_ds.records:
        raise ConfigError("training dataset is empty")
    for head in model.head_names:
        if head not in train_ds.vocabulary:
            raise ConfigError(f"model head {head!r} missing from dataset vocabulary")
    if val_ds is not None and config.eval_every > 0 and not val_ds.records:
        raise ConfigError("validation dataset is empty")

    heads = list(model.head_names)
    if adam_state is None:
        adam_state = AdamState.for_params(
            model.parameters(), learning_rate=config.learning_rate,
            beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon)
    history = history or TrainHistory()
    decay = model.decay_flags()
    params = model.parameters()

    for epoch in range(start_epoch, config.epochs):
        losses = []
        for x, y in batch_iterator(train_ds, config.batch_size, config.seed,
                                   epoch, head_names=heads, dtype=model.dtype):
            model.zero_grad()
            with tape_scope() as tape:
                logits = forward(model, x, mode="train")
                loss = ops.sigmoid_cross_entropy(logits, y, label="loss")
            value = loss.item()
            if not np.isfinite(value):
                culprit = first_nonfinite_op(tape) or "loss"
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}; first offending tensor: {culprit}")
            backward(loss, tape)
            adam_step(params, None, adam_state, l2_lambda=config.l2_lambda,
                      decay=decay)
            losses.append(value)
        mean_loss = float(np.mean(losses))
        history.train_loss.append(mean_loss)
        history.train_objective.append(
            mean_loss + l2_penalty_value(model, config.l2_lambda))
        if log:
            log(f"epoch {epoch + 1}/{config.epochs}: loss {mean_loss:.4f}")
        if (val_ds is not None and config.eval_every > 0
                and (epoch + 1) % config.eval_every == 0):
            history.val_points.append((epoch + 1, evaluate_model(model, val_ds)))
    return model, history


# ---------------------------------------------------------------------------
# checkpoints

def _write_tensor_table(chunks: list, entries: list) -> None:
    chunks.append(struct.pack("<I", len(entries)))
    for name, array in entries:
        encoded = name.encode("utf-8")
        arr = np.ascontiguousarray(array, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.tobytes())


class _Reader:
    def __init__(self, raw: bytes, offset: int):
        self.raw = raw
        self.offset = offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.raw):
            raise TruncatedFileError("checkpoint ends inside a record")
        piece = self.raw[self.offset:self.offset + n]
        self.offset += n
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_tensor_table(reader: "_Reader") -> dict:
    count, = reader.unpack("<I")
    table = {}
    for _ in range(count):
        name_len, = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        rank, = reader.unpack("<B")
        dims = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims)) if dims else 1
        payload = reader.take(size * 4)
        table[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return table


def save_checkpoint(path, model: Model, adam_state: Optional[AdamState] = None,
                    history: Optional[TrainHistory] = None,
                    train_config: Optional[TrainConfig] = None) -> None:
    """Serialize model (and optionally optimizer state and history) to disk."""
    if model.dtype != np.float32:
        raise ConfigError("checkpoints store float32 models only")
    blob = {
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict() if train_config else None,
        "history": history.to_dict() if history else None,
        "adam": None,
        "bn_initialized": sorted(name for name, st in model.bn_states.items()
                                 if st.initialized),
    }
    if adam_state is not None:
        blob["adam"] = {"learning_rate": adam_state.learning_rate,
                        "beta1": adam_state.beta1, "beta2": adam_state.beta2,
                        "epsilon": adam_state.epsilon,
                        "step_count": adam_state.step_count}
    encoded = json.dumps(blob, sort_keys=True).encode("utf-8")

    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION),
              struct.pack("<I", len(encoded)), encoded]

    entries = [(p.name, p.tensor.data) for p in model.params]
    for name, state in sorted(model.bn_states.items()):
        if state.initialized:
            entries.append((f"{name}.running_mean", state.mean))
            entries.append((f"{name}.running_var", state.var))
    _write_tensor_table(chunks, entries)

    opt_entries = []
    if adam_state is not None:
        for p, m, v in zip(model.params, adam_state.first_moment,
                           adam_state.second_moment):
            opt_entries.append((f"adam.m.{p.name}", m))
            opt_entries.append((f"adam.v.{p.name}", v))
    _write_tensor_table(chunks, opt_entries)

    body = b"".join(chunks)
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", crc))


def load_checkpoint(path) -> tuple:
    """Restore (model, adam_state or None, history or None, train_config or None)."""
    raw = open(path, "rb").read()
    if len(raw) < 16:
        raise TruncatedFileError("checkpoint shorter than its header")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"checkpoint does not start with {CHECKPOINT_MAGIC!r}")
    version, = struct.unpack("<I", raw[4:8])
    if version != CHECKPOINT_VERSION:
        raise VersionError(f"checkpoint version {version} unsupported")
    stored_crc, = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise IntegrityError("checkpoint checksum mismatch")

    reader = _Reader(raw[:-4], 8)
    blob_len, = reader.unpack("<I")
    blob = json.loads(reader.take(blob_len).decode("utf-8"))
    tensors = _read_tensor_table(reader)
    opt_tensors = _read_tensor_table(reader)

    config = ModelConfig.from_dict(blob["model_config"])
    model = build_model(config, seed=0)
    for p in model.params:
        if p.name not in tensors:
            raise IntegrityError(f"checkpoint missing tensor {p.name}")
        if tensors[p.name].shape != p.tensor.data.shape:
            raise IntegrityError(f"checkpoint tensor {p.name} has wrong shape")
        p.tensor.data = tensors[p.name]
    for name in blob.get("bn_initialized", []):
        state = model.bn_states[name]
        state.mean = tensors[f"{name}.running_mean"]
        state.var = tensors[f"{name}.running_var"]

    adam_state = None
    if blob.get("adam") is not None:
        meta = blob["adam"]
        adam_state = AdamState(
            learning_rate=meta["learning_rate"], beta1=meta["beta1"],
            beta2=meta["beta2"], epsilon=meta["epsilon"],
            step_count=meta["step_count"])
        adam_state.first_moment = [opt_tensors[f"adam.m.{p.name}"] for p in model.params]
        adam_state.second_moment = [opt_tensors[f"adam.v.{p.name}"] for p in model.params]

    history = TrainHistory.from_dict(blob["history"]) if blob.get("history") else None
    train_config = (TrainConfig.from_dict(blob["train_config"])
                    if blob.get("train_config") else None)
    return model, adam_state, history, train_config
