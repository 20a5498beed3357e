"""Command-line front end.

Every subcommand takes an optional JSON config file (flat keys, dots for
namespacing) plus flags that mirror the keys one to one; explicit flags
override file values, and unknown keys are rejected by name. Each run
prints the resolved seed and the fully resolved configuration, then writes
its artifacts; the exit status is 0 only when every artifact was written.

Relative output paths resolve under $ECGNET_OUT_DIR (default: current
directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


from .data import (ResampleConfig, load_dataset, resample_dataset, save_dataset,
                   split_dataset)
from .errors import EcgnetError, LabelError
from .experiment import ExperimentSpec, run_comparison_experiment
from .metrics import evaluate_model, model_scores
from .model import ModelConfig, build_model
from .presets import load_preset
from .synth import NoiseConfig, generate_dataset
from .train import (TrainConfig, load_checkpoint, run_training, save_checkpoint)
from . import figures


@dataclass(frozen=True)
class Opt:
    type: type
    default: object = None
    help: str = ""
    required: bool = False


SCHEMAS = {
    "synth": {
        "n": Opt(int, required=True, help="number of records to generate"),
        "seed": Opt(int, 0, "generator seed"),
        "preset": Opt(str, "", "bundled mix preset name (e.g. table1_mix)"),
        "mix_file": Opt(str, "", "JSON file holding a class mix"),
        "out": Opt(str, required=True, help="output dataset base path"),
        "noise.wander_mv": Opt(float, 0.08, "baseline wander amplitude"),
        "noise.white_mv": Opt(float, 0.03, "white noise sigma"),
        "noise.mains_mv": Opt(float, 0.0, "mains interference amplitude"),
    },
    "resample": {
        "input": Opt(str, required=True, help="source dataset base path"),
        "out": Opt(str, required=True, help="output dataset base path"),
        "target": Opt(int, 4000, "per-class target count"),
        "seed": Opt(int, 0, "sampling seed"),
    },
    "split": {
        "input": Opt(str, required=True, help="source dataset base path"),
        "out_prefix": Opt(str, required=True,
                          help="prefix; writes <prefix>.{train,val,test}"),
        "train_frac": Opt(float, 0.8, "training fraction"),
        "val_frac": Opt(float, 0.1, "validation fraction"),
        "test_frac": Opt(float, 0.1, "test fraction"),
        "seed": Opt(int, 0, "shuffle seed"),
    },
    "train": {
        "data": Opt(str, required=True, help="training dataset base path"),
        "val_data": Opt(str, "", "validation dataset base path"),
        "out": Opt(str, required=True, help="checkpoint output path"),
        "heads": Opt(str, "all", "comma-separated class names, or 'all'"),
        "epochs": Opt(int, 96, "training epochs"),
        "batch_size": Opt(int, 32, "records per batch"),
        "learning_rate": Opt(float, 1e-3, "Adam learning rate"),
        "l2_lambda": Opt(float, 1e-4, "L2 coefficient on weights"),
        "seed": Opt(int, 0, "training seed"),
        "eval_every": Opt(int, 0, "epochs between validation passes"),
        "model.conv_layers": Opt(int, 34, "number of convolution layers"),
        "model.kernel_size": Opt(int, 16, "convolution kernel size"),
        "model.pool_every": Opt(int, 4, "pool after every Nth convolution"),
        "model.channel_double_every": Opt(int, 8, "double channels every N layers"),
        "model.base_channels": Opt(int, 64, "channels of the first group"),
        "model.channel_cap": Opt(int, 256, "channel ceiling; 0 removes the cap"),
    },
    "eval": {
        "checkpoint": Opt(str, required=True, help="trained checkpoint path"),
        "data": Opt(str, required=True, help="evaluation dataset base path"),
        "out_dir": Opt(str, required=True, help="directory for metric artifacts"),
        "diagnostics": Opt(int, 0, "1 also writes accuracy/AUC diagnostics"),
        "tune_on": Opt(str, "", "dataset for per-head threshold tuning"),
    },
    "predict": {
        "checkpoint": Opt(str, required=True, help="trained checkpoint path"),
        "data": Opt(str, required=True, help="dataset base path"),
        "out": Opt(str, required=True, help="predictions JSON path"),
    },
    "experiment": {
        "preset": Opt(str, "", "bundled experiment preset name"),
        "spec_file": Opt(str, "", "experiment spec JSON file"),
        "out_dir": Opt(str, required=True, help="directory for report artifacts"),
        "n": Opt(int, 0, "override corpus size (0 keeps the spec value)"),
        "n_seeds": Opt(int, 0, "override repetition seeds (0 keeps)"),
        "epochs": Opt(int, 0, "override training epochs (0 keeps)"),
        "base_seed": Opt(int, -1, "override base seed (-1 keeps)"),
    },
}


def parse_config(command: str, file_path: Optional[str],
                 flag_values: dict) -> dict:
    """Merge schema defaults, config-file values, and explicit flags."""
    schema = SCHEMAS[command]
    resolved = {key: opt.default for key, opt in schema.items()}
    if file_path:
        with open(file_path) as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise EcgnetError(f"config file {file_path} must hold a JSON object")
        for key, value in file_values.items():
            if key not in schema:
                raise EcgnetError(f"unknown config key {key!r} for {command!r}")
            resolved[key] = schema[key].type(value)
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    missing = [key for key, opt in schema.items()
               if opt.required and resolved[key] is None]
    if missing:
        raise EcgnetError(f"missing required config keys: {missing}")
    return resolved


def _out_path(path: str) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    return Path(os.environ.get("ECGNET_OUT_DIR", ".")) / p


def _announce(command: str, config: dict) -> None:
    seed = config.get("seed", config.get("base_seed", 0))
    print(f"{command}: seed {seed}")
    print("config: " + json.dumps(config, sort_keys=True))


def _dump_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# command handlers

def cmd_synth(config: dict) -> int:
    if config["preset"] and config["mix_file"]:
        raise EcgnetError("give either a preset or a mix_file, not both")
    if config["preset"]:
        mix = load_preset(config["preset"])["mix"]
    elif config["mix_file"]:
        mix = json.loads(Path(config["mix_file"]).read_text())["mix"]
    else:
        raise EcgnetError("synth needs a preset or a mix_file")
    noise = NoiseConfig(baseline_wander_mv=config["noise.wander_mv"],
                        white_mv=config["noise.white_mv"],
                        mains_mv=config["noise.mains_mv"])
    ds = generate_dataset(mix, config["n"], config["seed"], noise=noise)
    data_path, manifest_path = save_dataset(ds, _out_path(config["out"]))
    print(f"wrote {data_path} and {manifest_path} ({len(ds)} records)")
    return 0


def cmd_resample(config: dict) -> int:
    ds = load_dataset(config["input"])
    out = resample_dataset(ds, ResampleConfig(config["target"], config["seed"]))
    data_path, _ = save_dataset(out, _out_path(config["out"]))
    print(f"wrote {data_path} ({len(out)} records)")
    return 0


def cmd_split(config: dict) -> int:
    ds = load_dataset(config["input"])
    fractions = (config["train_frac"], config["val_frac"], config["test_frac"])
    parts = split_dataset(ds, fractions, config["seed"])
    for name, part in zip(("train", "val", "test"), parts):
        path, _ = save_dataset(part, _out_path(f"{config['out_prefix']}.{name}"))
        print(f"wrote {path} ({len(part)} records)")
    return 0


def _model_config_from(config: dict, heads) -> ModelConfig:
    cap = config["model.channel_cap"]
    return ModelConfig(
        conv_layers=config["model.conv_layers"],
        kernel_size=config["model.kernel_size"],
        pool_every=config["model.pool_every"],
        channel_double_every=config["model.channel_double_every"],
        base_channels=config["model.base_channels"],
        channel_cap=None if cap == 0 else cap,
        head_names=tuple(heads),
        l2_lambda=config["l2_lambda"],
    )


def cmd_train(config: dict) -> int:
    train_ds = load_dataset(config["data"])
    val_ds = load_dataset(config["val_data"]) if config["val_data"] else None
    heads = (train_ds.vocabulary.names if config["heads"] == "all"
             else [h.strip() for h in config["heads"].split(",") if h.strip()])
    model = build_model(_model_config_from(config, heads), seed=config["seed"])
    tcfg = TrainConfig(epochs=config["epochs"], batch_size=config["batch_size"],
                       learning_rate=config["learning_rate"],
                       l2_lambda=config["l2_lambda"], seed=config["seed"],
                       eval_every=config["eval_every"])
    from .optim import AdamState
    state = AdamState.for_params(model.parameters(),
                                 learning_rate=tcfg.learning_rate,
                                 beta1=tcfg.beta1, beta2=tcfg.beta2,
                                 epsilon=tcfg.epsilon)
    model, history = run_training(model, train_ds, val_ds, tcfg,
                                  adam_state=state, log=print)
    out = _out_path(config["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, model, state, history, tcfg)
    _dump_json(history.to_dict(), out.with_suffix(".history.json"))
    figures.save_loss_curves({"train": [history.train_loss]},
                             out.with_suffix(".loss.png"))
    print(f"wrote {out}, {out.with_suffix('.history.json')}, "
          f"{out.with_suffix('.loss.png')}")
    return 0


def cmd_eval(config: dict) -> int:
    model, _, _, _ = load_checkpoint(config["checkpoint"])
    ds = load_dataset(config["data"])
    for head in model.head_names:
        if head not in ds.vocabulary:
            raise LabelError(
                f"checkpoint head {head!r} missing from dataset vocabulary")
    out_dir = _out_path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    thresholds = None
    if config["tune_on"]:
        from .metrics import tune_thresholds
        thresholds = tune_thresholds(model, load_dataset(config["tune_on"]))
        _dump_json(thresholds, out_dir / "thresholds.json")
    table = evaluate_model(model, ds, thresholds=thresholds)
    if config["diagnostics"]:
        from .metrics import diagnostic_metrics
        _dump_json(diagnostic_metrics(model, ds, thresholds=thresholds),
                   out_dir / "diagnostics.json")
    _dump_json(table.to_dict(), out_dir / "metrics.json")

    lines = [f"{'class':<28s} {'prec':>6s} {'recall':>6s} {'f1':>6s} {'support':>8s}"]
    for name, m in table.per_class.items():
        lines.append(f"{name:<28s} {m.precision:6.3f} {m.recall:6.3f} "
                     f"{m.f1:6.3f} {m.support:8d}")
    (out_dir / "metrics.txt").write_text("\n".join(lines) + "\n")
    csv = ["class,precision,recall,f1,support"]
    csv += [f"{name},{m.precision:.6f},{m.recall:.6f},{m.f1:.6f},{m.support}"
            for name, m in table.per_class.items()]
    (out_dir / "metrics.csv").write_text("\n".join(csv) + "\n")
    figures.save_metrics_bars(table.to_dict(), out_dir / "metrics.png",
                              title="held-out metrics")
    print(f"wrote metrics artifacts under {out_dir}")
    return 0


def cmd_predict(config: dict) -> int:
    model, _, _, _ = load_checkpoint(config["checkpoint"])
    ds = load_dataset(config["data"])
    for head in model.head_names:
        if head not in ds.vocabulary:
            raise LabelError(
                f"checkpoint head {head!r} missing from dataset vocabulary")
    scores = model_scores(model, ds)
    records = []
    for i, rec in enumerate(ds.records):
        per_head = {name: float(scores[i, j])
                    for j, name in enumerate(model.head_names)}
        records.append({
            "index": i,
            "source_id": rec.source_id,
            "scores": per_head,
            "labels": sorted(name for name, s in per_head.items() if s > 0.5),
        })
    out = _out_path(config["out"])
    _dump_json({"checkpoint": str(config["checkpoint"]), "records": records}, out)
    print(f"wrote {out} ({len(records)} records)")
    return 0


def cmd_experiment(config: dict) -> int:
    if bool(config["preset"]) == bool(config["spec_file"]):
        raise EcgnetError("give exactly one of preset or spec_file")
    if config["preset"]:
        spec_dict = load_preset(config["preset"])
    else:
        spec_dict = json.loads(Path(config["spec_file"]).read_text())
    spec = ExperimentSpec.from_dict(spec_dict)
    if config["n"] > 0:
        spec.data.n = config["n"]
    if config["n_seeds"] > 0:
        spec.n_seeds = config["n_seeds"]
    if config["epochs"] > 0:
        spec.train = {**spec.train, "epochs": config["epochs"]}
    if config["base_seed"] >= 0:
        spec.base_seed = config["base_seed"]

    report = run_comparison_experiment(spec, log=print)
    out_dir = _out_path(config["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_dict(), out_dir / "report.json")
    (out_dir / "report.txt").write_text(report.to_text())
    (out_dir / "report.csv").write_text(report.to_csv())
    figures.save_comparison_chart(report, out_dir / "comparison.png")
    figures.save_loss_curves(report.histories, out_dir / "loss_curves.png")
    print(report.to_text())
    print(f"wrote report artifacts under {out_dir}")
    return 0


HANDLERS = {
    "synth": cmd_synth,
    "resample": cmd_resample,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgnet",
        description="Multi-task ECG classifier: synthesize, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, schema in SCHEMAS.items():
        p = sub.add_parser(command)
        p.add_argument("--config", default=None,
                       help="JSON config file; flags override its values")
        for key, opt in schema.items():
            p.add_argument(f"--{key}", dest=key, type=opt.type, default=None,
                           help=opt.help + (" [required]" if opt.required else
                                            f" [default: {opt.default}]"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    flag_values = {key: getattr(args, key) for key in SCHEMAS[command]}
    try:
        config = parse_config(command, args.config, flag_values)
        _announce(command, config)
        return HANDLERS[command](config)
    except EcgnetError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
