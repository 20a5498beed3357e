"""Single-head versus multi-head comparison harness.

An experiment crosses a list of model definitions (name + head set) with a
number of repetition seeds on one shared synthetic corpus and split. Every
cell builds a fresh model, trains it, and evaluates on the shared held-out
test split; a failed cell is recorded rather than aborting the sweep. The
report aggregates per-class F1 as mean and min/max across seeds, flags the
best model per class, and renders as aligned text, JSON, and CSV.
"""

from __future__ import annotations

import traceback
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import Dataset, ResampleConfig, load_dataset, resample_dataset, split_dataset
from .errors import ConfigError
from .metrics import evaluate_model
from .model import ModelConfig, build_model
from .presets import load_preset
from .rng import mix
from .synth import generate_dataset
from .train import TrainConfig, run_training


@dataclass(frozen=True)
class ModelDef:
    name: str
    heads: tuple

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(self.heads))


@dataclass
class DataSpec:
    """Shared corpus source: a dataset file, or a mix to synthesize."""

    path: Optional[str] = None
    preset: Optional[str] = None
    mix: Optional[dict] = None
    n: int = 0
    seed: int = 0
    resample_target: int = 0

    def realize(self) -> Dataset:
        if self.path:
            ds = load_dataset(self.path)
        else:
            mix = self.mix
            if mix is None and self.preset:
                mix = load_preset(self.preset)["mix"]
            if mix is None:
                raise ConfigError("data spec needs a path, preset, or mix")
            ds = generate_dataset(mix, self.n, self.seed)
        if self.resample_target > 0:
            ds = resample_dataset(ds, ResampleConfig(self.resample_target, self.seed))
        return ds


@dataclass
class ExperimentSpec:
    name: str
    models: list
    data: DataSpec
    split_fractions: tuple = (0.75, 0.10, 0.15)
    split_seed: int = 0
    n_seeds: int = 1
    base_seed: int = 0
    model_overrides: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)

    def validate(self, vocabulary) -> None:
        if not self.models:
            raise ConfigError("experiment needs at least one model definition")
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        for m in self.models:
            for head in m.heads:
                if head not in vocabulary:
                    raise ConfigError(
                        f"model {m.name!r} references unknown class {head!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        models = [ModelDef(m["name"], tuple(m["heads"])) for m in d["models"]]
        data = DataSpec(**d.get("data", {}))
        return cls(
            name=d.get("name", "experiment"),
            models=models,
            data=data,
            split_fractions=tuple(d.get("split_fractions", (0.75, 0.10, 0.15))),
            split_seed=int(d.get("split_seed", 0)),
            n_seeds=int(d.get("n_seeds", 1)),
            base_seed=int(d.get("base_seed", 0)),
            model_overrides=dict(d.get("model_overrides", {})),
            train=dict(d.get("train", {})),
        )


@dataclass
class ExperimentReport:
    name: str
    classes: list
    supports: dict
    model_names: list
    model_heads: dict
    # cells[model][class] = list of per-seed f1 (None where the run failed)
    cells: dict
    precision: dict
    recall: dict
    failures: list
    histories: dict          # model -> list of per-seed train_loss curves

    def mean_f1(self, model: str, cls: str) -> Optional[float]:
        vals = [v for v in self.cells[model].get(cls, []) if v is not None]
        return float(np.mean(vals)) if vals else None

    def f1_range(self, model: str, cls: str):
        vals = [v for v in self.cells[model].get(cls, []) if v is not None]
        if not vals:
            return None
        return float(min(vals)), float(max(vals))

    def best_model(self, cls: str) -> Optional[str]:
        scored = [(self.mean_f1(m, cls), m) for m in self.model_names
                  if self.mean_f1(m, cls) is not None]
        if not scored:
            return None
        top = max(s for s, _ in scored)
        for score, name in scored:
            if score == top:
                return name
        return None

    def to_dict(self) -> dict:
        out = {"experiment": self.name,
               "classes": [{"name": c, "support": self.supports[c]}
                           for c in self.classes],
               "models": [{"name": m, "heads": list(self.model_heads[m])}
                          for m in self.model_names],
               "cells": {}, "best": {}, "failures": self.failures}
        for m in self.model_names:
            out["cells"][m] = {}
            for c in self.classes:
                if c not in self.model_heads_set(m):
                    continue
                per_seed = self.cells[m].get(c, [])
                rng = self.f1_range(m, c)
                out["cells"][m][c] = {
                    "f1_per_seed": per_seed,
                    "f1_mean": self.mean_f1(m, c),
                    "f1_min": rng[0] if rng else None,
                    "f1_max": rng[1] if rng else None,
                    "precision_per_seed": self.precision[m].get(c, []),
                    "recall_per_seed": self.recall[m].get(c, []),
                }
        for c in self.classes:
            out["best"][c] = self.best_model(c)
        return out

    def model_heads_set(self, m: str) -> set:
        return set(self.model_heads[m])

    def to_text(self) -> str:
        """Aligned table: rows are classes with support, columns are models."""
        headers = ["Class", "Support"] + list(self.model_names)
        rows = []
        for c in self.classes:
            row = [c, str(self.supports[c])]
            best = self.best_model(c)
            for m in self.model_names:
                if c not in self.model_heads_set(m):
                    row.append("-")
                    continue
                mean = self.mean_f1(m, c)
                if mean is None:
                    row.append("failed")
                    continue
                cell = f"{mean:.2f}"
                rng = self.f1_range(m, c)
                if rng and rng[0] != rng[1]:
                    cell += f" ({rng[0]:.2f}-{rng[1]:.2f})"
                if m == best:
                    cell += " *"
                row.append(cell)
            rows.append(row)
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
                  for i, h in enumerate(headers)]
        lines = [f"F1 scores: {self.name}",
                 "  ".join(h.ljust(w) for h, w in zip(headers, widths)),
                 "  ".join("-" * w for w in widths)]
        for row in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
        lines.append("(* best mean F1 for the class)")
        if self.failures:
            lines.append(f"failed cells: {len(self.failures)}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        lines = ["class,support,model,seed_index,f1,precision,recall"]
        for c in self.classes:
            for m in self.model_names:
                if c not in self.model_heads_set(m):
                    continue
                for s, f1 in enumerate(self.cells[m].get(c, [])):
                    prec = self.precision[m].get(c, [])
                    rec = self.recall[m].get(c, [])
                    def fmt(vals):
                        return ("" if s >= len(vals) or vals[s] is None
                                else f"{vals[s]:.6f}")
                    lines.append(f"{c},{self.supports[c]},{m},{s},"
                                 f"{fmt(self.cells[m].get(c, []))},{fmt(prec)},{fmt(rec)}")
        return "\n".join(lines) + "\n"


def run_comparison_experiment(spec: ExperimentSpec, log=None) -> ExperimentReport:
    """Train and evaluate every (model definition x seed) cell."""
    def say(msg):
        if log:
            log(msg)

    corpus = spec.data.realize()
    spec.validate(corpus.vocabulary)
    train_ds, val_ds, test_ds = split_dataset(corpus, spec.split_fractions,
                                              spec.split_seed)
    say(f"corpus {len(corpus)} records -> train {len(train_ds)} / "
        f"val {len(val_ds)} / test {len(test_ds)}")

    head_union = []
    for m in spec.models:
        for h in m.heads:
            if h not in head_union:
                head_union.append(h)
    classes = [c for c in corpus.vocabulary.names if c in head_union]
    test_counts = test_ds.class_counts()
    supports = {c: test_counts[c] for c in classes}

    cells = {m.name: {h: [] for h in m.heads} for m in spec.models}
    precision = {m.name: {h: [] for h in m.heads} for m in spec.models}
    recall = {m.name: {h: [] for h in m.heads} for m in spec.models}
    histories = {m.name: [] for m in spec.models}
    failures = []

    for mi, mdef in enumerate(spec.models):
        for si in range(spec.n_seeds):
            cell_index = mi * spec.n_seeds + si
            cell_seed = mix(spec.base_seed, "cell", cell_index)
            say(f"cell {mdef.name} seed {si} (cell {cell_index})")
            try:
                mcfg = ModelConfig(**{**spec.model_overrides,
                                      "head_names": mdef.heads})
                model = build_model(mcfg, seed=cell_seed)
                tcfg = TrainConfig(**{**spec.train, "seed": cell_seed})
                model, history = run_training(model, train_ds, val_ds, tcfg)
                table = evaluate_model(model, test_ds)
                for h in mdef.heads:
                    m = table.per_class[h]
                    cells[mdef.name][h].append(m.f1)
                    precision[mdef.name][h].append(m.precision)
                    recall[mdef.name][h].append(m.recall)
                histories[mdef.name].append(list(history.train_loss))
                say(f"  f1: " + ", ".join(
                    f"{h}={table.per_class[h].f1:.2f}" for h in mdef.heads))
            except Exception as err:   # noqa: BLE001 - cell failure is data
                failures.append([mdef.name, si, f"{type(err).__name__}: {err}"])
                for h in mdef.heads:
                    cells[mdef.name][h].append(None)
                    precision[mdef.name][h].append(None)
                    recall[mdef.name][h].append(None)
                histories[mdef.name].append([])
                say(f"  FAILED: {err}\n{traceback.format_exc(limit=3)}")

    return ExperimentReport(
        name=spec.name, classes=classes, supports=supports,
        model_names=[m.name for m in spec.models],
        model_heads={m.name: m.heads for m in spec.models},
        cells=cells, precision=precision, recall=recall,
        failures=failures, histories=histories)
