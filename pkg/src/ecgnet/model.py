"""Residual 1-D CNN with independent per-class logistic heads.

Layer plan for the default configuration (34 convolutions):

* a 2-convolution stem (conv -> batchnorm -> relu -> conv),
* 16 pre-activation residual blocks of 2 convolutions each,
* max pool (size 2, stride 2) after every 4th convolution, applied to both
  the main path and the shortcut,
* channel doubling every 8 convolutions starting from 64, capped at 256, so
  the 12 x 2500 input ends as a 256 x 10 feature map,
* a final batchnorm + relu, flatten to 2560, and one independent affine
  head per class name.

Shortcuts max-pool for temporal downsampling and use a 1x1 convolution when
the channel count changes. All parameters are initialized from per-name
seeded streams, so adding or removing a head never perturbs the trunk or the
other heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .autodiff import Tensor
from .errors import ConfigError, LabelError, ShapeError
from .ops import BnState
from .rng import stream


@dataclass
class ModelConfig:
    input_channels: int = 12
    input_length: int = 2500
    conv_layers: int = 34
    kernel_size: int = 16
    pool_every: int = 4
    channel_double_every: int = 8
    base_channels: int = 64
    channel_cap: Optional[int] = 256
    head_names: tuple = ()
    l2_lambda: float = 1e-4
    l2_all_parameters: bool = False

    def __post_init__(self):
        self.head_names = tuple(self.head_names)

    def validate(self) -> None:
        if self.input_channels < 1 or self.input_length < 1:
            raise ConfigError("input dimensions must be positive")
        if self.conv_layers < 2 or self.conv_layers % 2 != 0:
            raise ConfigError(
                f"conv_layers must be an even number >= 2 (stem of 2 plus "
                f"2-conv blocks), got {self.conv_layers}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.pool_every < 2 or self.pool_every % 2 != 0:
            raise ConfigError(
                f"pool_every must be even and >= 2 so pools land on block "
                f"boundaries, got {self.pool_every}")
        if self.channel_double_every < 1:
            raise ConfigError("channel_double_every must be >= 1")
        if self.base_channels < 1:
            raise ConfigError("base_channels must be >= 1")
        if self.channel_cap is not None and self.channel_cap < self.base_channels:
            raise ConfigError("channel_cap below base_channels")
        if not self.head_names:
            raise ConfigError("at least one head name is required")
        if len(set(self.head_names)) != len(self.head_names):
            raise ConfigError("head names must be unique")
        if self.l2_lambda < 0:
            raise ConfigError("l2_lambda must be >= 0")
        if self.final_length() < 1:
            raise ConfigError("shape arithmetic yields a non-positive final length")

    # -- derived shape arithmetic ------------------------------------------

    def channels_at(self, layer: int) -> int:
        """Channel count of the 1-based convolution layer."""
        ch = self.base_channels * 2 ** ((layer - 1) // self.channel_double_every)
        if self.channel_cap is not None:
            ch = min(ch, self.channel_cap)
        return ch

    def pool_count(self) -> int:
        return self.conv_layers // self.pool_every

    def temporal_lengths(self) -> list:
        """Time-axis length after each pooling stage (ceil mode)."""
        lengths = []
        length = self.input_length
        for _ in range(self.pool_count()):
            length = math.ceil(length / 2)
            lengths.append(length)
        return lengths

    def final_length(self) -> int:
        lengths = self.temporal_lengths()
        return lengths[-1] if lengths else self.input_length

    def feature_shape(self) -> tuple:
        return (self.channels_at(self.conv_layers), self.final_length())

    def head_input_size(self) -> int:
        channels, length = self.feature_shape()
        return channels * length

    def to_dict(self) -> dict:
        return {
            "input_channels": self.input_channels,
            "input_length": self.input_length,
            "conv_layers": self.conv_layers,
            "kernel_size": self.kernel_size,
            "pool_every": self.pool_every,
            "channel_double_every": self.channel_double_every,
            "base_channels": self.base_channels,
            "channel_cap": self.channel_cap,
            "head_names": list(self.head_names),
            "l2_lambda": self.l2_lambda,
            "l2_all_parameters": self.l2_all_parameters,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "head_names": tuple(d["head_names"])})


@dataclass(frozen=True)
class _BlockPlan:
    index: int
    conv_a: int          # global numbers of the two convolutions
    conv_b: int
    in_channels: int
    out_channels: int
    pool: bool
    project: bool


def _layer_plan(config: ModelConfig) -> list:
    blocks = []
    n_blocks = (config.conv_layers - 2) // 2
    prev_out = config.channels_at(2)
    for i in range(1, n_blocks + 1):
        conv_a = 2 * i + 1
        conv_b = 2 * i + 2
        out_ch = config.channels_at(conv_a)
        blocks.append(_BlockPlan(
            index=i, conv_a=conv_a, conv_b=conv_b,
            in_channels=prev_out, out_channels=out_ch,
            pool=conv_b % config.pool_every == 0,
            project=out_ch != prev_out))
        prev_out = out_ch
    return blocks


@dataclass
class Param:
    name: str
    tensor: Tensor
    decay: bool


class Model:
    """Instantiated parameter set plus the config that shaped it."""

    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: list = []
        self._by_name: dict = {}
        self.bn_states: dict = {}

    # -- parameter bookkeeping ---------------------------------------------

    def add_param(self, name: str, data: np.ndarray, decay: bool) -> Tensor:
        t = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        p = Param(name, t, decay)
        self.params.append(p)
        self._by_name[name] = p
        return t

    def param(self, name: str) -> Tensor:
        return self._by_name[name].tensor

    def parameters(self) -> list:
        return [p.tensor for p in self.params]

    def decay_flags(self) -> list:
        if self.config.l2_all_parameters:
            return [True] * len(self.params)
        return [p.decay for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.zero_grad()

    def parameter_count(self) -> int:
        return sum(p.tensor.size for p in self.params)

    @property
    def head_names(self) -> tuple:
        return self.config.head_names

    def conv_weight_names(self) -> list:
        return [p.name for p in self.params
                if p.name.startswith("conv") and p.name.endswith(".w")]


def build_model(config: ModelConfig, seed: int, dtype=np.float32) -> Model:
    """Deterministically initialize a model from a seed.

    Convolution weights use He initialization (zero-mean Gaussian with
    std sqrt(2 / fan_in)); heads use std 1/sqrt(fan_in); biases start at
    zero, batch-norm scale at one and shift at zero. Each parameter draws
    from its own (seed, name) stream.
    """
    config.validate()
    model = Model(config, dtype=dtype)

    def he(name, shape):
        fan_in = int(np.prod(shape[1:]))
        g = stream(seed, "param", name)
        return g.standard_normal(shape) * math.sqrt(2.0 / fan_in)

    def add_conv(num: int, in_ch: int, out_ch: int, kernel: int):
        model.add_param(f"conv{num:02d}.w", he(f"conv{num:02d}.w", (out_ch, in_ch, kernel)),
                        decay=True)
        model.add_param(f"conv{num:02d}.b", np.zeros(out_ch), decay=False)

    def add_bn(num: int, channels: int):
        name = f"bn{num:02d}"
        model.add_param(f"{name}.gamma", np.ones(channels), decay=False)
        model.add_param(f"{name}.beta", np.zeros(channels), decay=False)
        model.bn_states[name] = BnState()

    k = config.kernel_size
    ch1, ch2 = config.channels_at(1), config.channels_at(2)
    add_conv(1, config.input_channels, ch1, k)
    add_bn(1, ch1)
    add_conv(2, ch1, ch2, k)

    for block in _layer_plan(config):
        add_bn(block.conv_a - 1, block.in_channels)
        add_conv(block.conv_a, block.in_channels, block.out_channels, k)
        add_bn(block.conv_a, block.out_channels)
        add_conv(block.conv_b, block.out_channels, block.out_channels, k)
        if block.project:
            name = f"short{block.index:02d}"
            model.add_param(f"{name}.w", he(f"{name}.w",
                            (block.out_channels, block.in_channels, 1)), decay=True)
            model.add_param(f"{name}.b", np.zeros(block.out_channels), decay=False)
    add_bn(config.conv_layers, config.channels_at(config.conv_layers))

    n_in = config.head_input_size()
    for head in config.head_names:
        g = stream(seed, "param", f"head.{head}.w")
        model.add_param(f"head.{head}.w",
                        g.standard_normal((1, n_in)) / math.sqrt(n_in), decay=True)
        model.add_param(f"head.{head}.b", np.zeros(1), decay=False)
    return model


def _bn(model: Model, num: int, h: Tensor, mode: str) -> Tensor:
    name = f"bn{num:02d}"
    return ops.batchnorm(h, model.param(f"{name}.gamma"), model.param(f"{name}.beta"),
                         model.bn_states[name], mode=mode, label=name)


def forward(model: Model, batch: Tensor, mode: str = "train",
            return_features: bool = False):
    """Run the network on a [B, C, L] batch and return logits [B, H].

    With ``return_features`` also returns the pre-head feature map
    [B, channels, final_length]. Recording happens whenever a tape is
    active; batch-norm behaviour follows ``mode``.

    Eval mode processes records one at a time (running stats make the
    records independent anyway), so each record's output is bit-identical
    whether it is batched alone or with others.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" and batch.data.ndim == 3 and batch.shape[0] > 1:
        parts = [forward(model, Tensor(batch.data[i:i + 1]), mode="eval",
                         return_features=return_features)
                 for i in range(batch.shape[0])]
        if return_features:
            logits = Tensor(np.concatenate([p[0].data for p in parts], axis=0))
            feats = Tensor(np.concatenate([p[1].data for p in parts], axis=0))
            return logits, feats
        return Tensor(np.concatenate([p.data for p in parts], axis=0))
    cfg = model.config
    if batch.data.ndim != 3 or batch.shape[1] != cfg.input_channels \
            or batch.shape[2] != cfg.input_length:
        raise ShapeError(
            f"batch must be [B, {cfg.input_channels}, {cfg.input_length}], "
            f"got {tuple(batch.shape)}")
    if batch.data.dtype != model.dtype:
        batch = Tensor(batch.data.astype(model.dtype), name=batch.name)

    h = ops.conv1d(batch, model.param("conv01.w"), model.param("conv01.b"),
                   label="conv01")
    h = ops.relu(_bn(model, 1, h, mode), label="relu01")
    h = ops.conv1d(h, model.param("conv02.w"), model.param("conv02.b"), label="conv02")
    if 2 % cfg.pool_every == 0:
        h = ops.maxpool1d(h, 2, 2, label="pool_stem")

    for block in _layer_plan(cfg):
        identity = h
        t = ops.relu(_bn(model, block.conv_a - 1, h, mode),
                     label=f"relu{block.conv_a - 1:02d}")
        t = ops.conv1d(t, model.param(f"conv{block.conv_a:02d}.w"),
                       model.param(f"conv{block.conv_a:02d}.b"),
                       label=f"conv{block.conv_a:02d}")
        t = ops.relu(_bn(model, block.conv_a, t, mode), label=f"relu{block.conv_a:02d}")
        t = ops.conv1d(t, model.param(f"conv{block.conv_b:02d}.w"),
                       model.param(f"conv{block.conv_b:02d}.b"),
                       label=f"conv{block.conv_b:02d}")
        if block.pool:
            t = ops.maxpool1d(t, 2, 2, label=f"pool{block.index:02d}")
            identity = ops.maxpool1d(identity, 2, 2, label=f"pool{block.index:02d}s")
        if block.project:
            identity = ops.conv1d(identity, model.param(f"short{block.index:02d}.w"),
                                  model.param(f"short{block.index:02d}.b"),
                                  label=f"short{block.index:02d}")
        h = ops.add(t, identity, label=f"res{block.index:02d}")

    features = ops.relu(_bn(model, cfg.conv_layers, h, mode), label="relu_final")
    flat = ops.flatten(features, label="flatten")
    logits = [ops.affine(flat, model.param(f"head.{name}.w"),
                         model.param(f"head.{name}.b"), label=f"head.{name}")
              for name in cfg.head_names]
    out = ops.concat(logits, axis=1, label="logits") if len(logits) > 1 else logits[0]
    if return_features:
        return out, features
    return out


def l2_penalty(model: Model) -> Tensor:
    """Taped scalar: l2_lambda times the squared norm of regularized weights."""
    lam = model.config.l2_lambda
    flags = model.decay_flags()
    total = None
    for p, decay in zip(model.params, flags):
        if not decay:
            continue
        term = ops.square_sum(p.tensor, label=f"l2.{p.name}")
        total = term if total is None else ops.add(total, term)
    if total is None:
        return Tensor(np.asarray(0.0, dtype=model.dtype))
    return ops.scale(total, lam, label="l2_penalty")


def l2_penalty_value(model: Model, l2_lambda: Optional[float] = None) -> float:
    """Numeric value of the penalty without touching the tape."""
    lam = model.config.l2_lambda if l2_lambda is None else l2_lambda
    flags = model.decay_flags()
    total = 0.0
    for p, decay in zip(model.params, flags):
        if decay:
            total += float((p.tensor.data.astype(np.float64) ** 2).sum())
    return lam * total


def predict_scores(model: Model, voltages: np.ndarray) -> dict:
    """Eval-mode per-head sigmoid scores for one [C, L] record."""
    x = Tensor(voltages[None].astype(model.dtype))
    logits = forward(model, x, mode="eval")
    scores = ops.sigmoid_values(logits.data[0])
    return dict(zip(model.head_names, map(float, scores)))


def predict_labels(model: Model, record, thresholds: Optional[dict] = None) -> set:
    """Class names whose sigmoid score strictly exceeds the head threshold.

    ``thresholds`` maps head name to a cut in (0, 1); default 0.5 everywhere.
    Zero or many labels may be returned.
    """
    thresholds = dict(thresholds or {})
    for name, value in thresholds.items():
        if name not in model.head_names:
            raise LabelError(f"threshold for unknown head {name!r}")
        if not 0.0 < value < 1.0:
            raise ConfigError(f"threshold for {name} must be in (0, 1), got {value}")
    scores = predict_scores(model, record.voltages)
    return {name for name, score in scores.items()
            if score > thresholds.get(name, 0.5)}
