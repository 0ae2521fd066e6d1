"""Command-line interface: ``measured <subcommand>``.

Subcommands cover the full pipeline: ``ingest`` raw records, ``synth`` a
synthetic corpus, ``stats`` a corpus, ``train`` a model variant, ``eval``
its probes, ``predict`` on new sentences, run the ``fewshot`` grid, and
``export`` hidden-vector embeddings.

Configuration precedence is flags > config file > defaults.  The config
file is flat ``key=value`` text whose keys mirror the long flag names
(without the leading dashes); unknown keys are rejected.  Every random
choice derives from the single ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from measured import data as data_mod
from measured import evaluation, experiments, synth, training
from measured.encoding import EncoderConfig, HashedNgramEncoder, export_embeddings
from measured.model import (
    MeasurementModel,
    ModelSpec,
    VARIANTS,
    load_model,
    save_model,
)
from measured.units import UnitRegistry, default_registry, load_registry


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _csv_floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _csv_strs(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


class _Command:
    """One subcommand: its parser plus the coercion/default table."""

    def __init__(self, subparsers, name: str, help_: str):
        self.parser = subparsers.add_parser(name, help=help_, description=help_)
        self.parser.set_defaults(_command=name)
        self.options: dict[str, tuple] = {}
        # shared flags
        self.add("registry", str, None, "registry file (default: built-in registry)")
        self.add("seed", int, 0, "master seed for all random choices")
        self.add("out", str, None, "output path (default varies by command)")
        self.add("config", str, None, "flat key=value config file")

    def add(self, name: str, coerce, default, help_: str, choices=None):
        dest = name.replace("-", "_")
        kwargs = {"default": None, "help": help_, "dest": dest}
        if coerce is bool:
            self.parser.add_argument(
                f"--{name}", action="store_const", const=True, **kwargs
            )
            self.parser.add_argument(
                f"--no-{name}",
                action="store_const",
                const=False,
                dest=dest,
                help=f"negate --{name}",
            )
            self.options[name] = (_bool, default)
        else:
            if choices:
                kwargs["choices"] = choices
            self.parser.add_argument(f"--{name}", type=coerce, **kwargs)
            self.options[name] = (coerce, default)

    def resolve(self, args: argparse.Namespace) -> argparse.Namespace:
        """Apply flags > config > defaults; reject unknown config keys."""
        config: dict[str, str] = {}
        config_path = getattr(args, "config", None)
        if config_path:
            config = _read_config(config_path)
            unknown = set(config) - set(self.options)
            if unknown:
                raise ValueError(
                    f"unknown config keys: {', '.join(sorted(unknown))}"
                )
        for name, (coerce, default) in self.options.items():
            dest = name.replace("-", "_")
            value = getattr(args, dest, None)
            if value is None:
                if name in config:
                    value = coerce(config[name])
                else:
                    value = default
            setattr(args, dest, value)
        return args


def _read_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_registry(args) -> UnitRegistry:
    return load_registry(args.registry) if args.registry else default_registry()


def _open_out(path):
    return open(path, "w", encoding="utf-8") if path else sys.stdout


def _add_encoder_options(cmd: _Command) -> None:
    cmd.add("feature-dim", int, 2**18, "hash buckets for n-gram features")
    cmd.add("hidden-dim", int, 256, "width of the encoded hidden vector")
    cmd.add("word-ngrams", _csv_ints, (1, 2), "word n-gram orders, e.g. 1,2")
    cmd.add("char-ngrams", _csv_ints, (3, 4), "character n-gram orders, e.g. 3,4")
    cmd.add("hash-seed", int, 0, "feature hashing seed")
    cmd.add("frozen", bool, False, "freeze the encoder projection (heads only)")


def _add_train_options(cmd: _Command) -> None:
    cmd.add("batch-size", int, 200, "examples per gradient step")
    cmd.add("epochs", int, 100, "maximum training epochs")
    cmd.add("lr", float, None, "learning rate (default 1e-4, or 1e-3 frozen)")
    cmd.add("warmup", int, 500, "linear warmup steps")
    cmd.add("patience", int, 5, "early-stopping patience in epochs")
    cmd.add("weight-decay", float, 0.01, "decoupled weight decay")
    cmd.add(
        "weighting",
        str,
        None,
        "cross-entropy class weighting: uniform or log-frequency "
        "(default: log-frequency when frozen)",
    )
    cmd.add(
        "selection-metric",
        str,
        None,
        "early-stopping metric: joint-nll, macro-f1, or log-mae "
        "(default: per variant)",
    )
    cmd.add("ratios", _csv_floats, (0.8, 0.1, 0.1), "train,val,test split ratios")


def _encoder_config(args, frozen: bool | None = None) -> EncoderConfig:
    return EncoderConfig(
        feature_dim=args.feature_dim,
        hidden_dim=args.hidden_dim,
        word_ngrams=tuple(args.word_ngrams),
        char_ngrams=tuple(args.char_ngrams),
        hash_seed=args.hash_seed,
        frozen=args.frozen if frozen is None else frozen,
    )


def _train_config(args) -> training.TrainConfig:
    return training.TrainConfig(
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        learning_rate=args.lr,
        warmup_steps=args.warmup,
        patience=args.patience,
        weight_decay=args.weight_decay,
        weighting=args.weighting,
        selection_metric=args.selection_metric,
        seed=args.seed,
    )


def _load_split(args, registry) -> data_mod.DatasetSplit:
    result = data_mod.load_examples(args.data, registry)
    if result.drops:
        print(f"ingest drops: {dict(result.drops)}", file=sys.stderr)
    if not result.examples:
        raise ValueError(f"no usable examples in {args.data}")
    return data_mod.split(result.examples, tuple(args.ratios), seed=args.seed)


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(args) -> int:
    registry = _load_registry(args)
    result = data_mod.ingest(data_mod.read_jsonl(args.data), registry)
    out = args.out or "canonical.jsonl"
    data_mod.write_jsonl(
        out, (data_mod.example_to_record(ex) for ex in result.examples)
    )
    summary = ", ".join(
        f"{reason}: {count}" for reason, count in sorted(result.drops.items())
    )
    print(
        f"ingest: kept {result.kept}, dropped {result.dropped}"
        + (f" ({summary})" if summary else ""),
        file=sys.stderr,
    )
    return 0


def cmd_synth(args) -> int:
    registry = _load_registry(args)
    config = synth.SynthConfig(
        n_examples=args.n,
        seed=args.seed,
        ambiguity=args.ambiguity,
        balanced=args.balanced,
    )
    records = synth.generate_records(config, registry)
    out = args.out or "synthetic.jsonl"
    n = data_mod.write_jsonl(out, records)
    print(f"synth: wrote {n} records to {out}", file=sys.stderr)
    return 0


def cmd_stats(args) -> int:
    registry = _load_registry(args)
    result = data_mod.load_examples(args.data, registry)
    if result.drops:
        print(f"ingest drops: {dict(result.drops)}", file=sys.stderr)
    report = data_mod.stats(result.examples).to_json_dict()
    f = _open_out(args.out)
    json.dump(report, f, indent=2, ensure_ascii=False)
    f.write("\n")
    if f is not sys.stdout:
        f.close()
    return 0


def cmd_train(args) -> int:
    registry = _load_registry(args)
    split = _load_split(args, registry)
    train_config = _train_config(args)

    metrics = []
    first_model = None
    for i in range(args.seeds):
        seed = args.seed + i
        if args.resume:
            if i > 0:
                raise ValueError("--resume trains a single model; drop --seeds")
            model = load_model(args.resume, registry)
        else:
            encoder = HashedNgramEncoder(_encoder_config(args), seed=seed)
            spec = ModelSpec(
                args.variant,
                args.hidden_dim,
                mixture_number_prediction=args.mixture_number,
            )
            model = MeasurementModel(spec, registry, encoder, seed=seed)
        result = training.train(model, split, replace(train_config, seed=seed))
        metrics.append(result.best_value)
        if first_model is None:
            first_model = model
            if args.history:
                data_mod.write_jsonl(args.history, result.history)
        print(
            f"train[seed {seed}]: best {result.selection_metric} = "
            f"{result.best_value:.6g} at epoch {result.best_epoch}",
            file=sys.stderr,
        )

    out = args.out or "model.npz"
    save_model(first_model, out)
    summary = {
        "variant": args.variant,
        "selection_metric": training.TrainConfig().resolve(
            args.frozen, args.variant
        ).selection_metric
        if args.selection_metric is None
        else args.selection_metric,
        "seeds": args.seeds,
        "mean": float(np.mean(metrics)),
        "sd": float(np.std(metrics, ddof=1)) if len(metrics) > 1 else 0.0,
        "checkpoint": str(out),
    }
    print(json.dumps(summary))
    return 0


def cmd_eval(args) -> int:
    registry = _load_registry(args)
    model = load_model(args.checkpoint, registry)
    split = _load_split(args, registry)
    probes = None if args.probes == "auto" else _csv_strs(args.probes)
    report = evaluation.evaluate(model, split, probes)
    doc = report.to_json_dict()
    f = _open_out(args.out)
    json.dump(doc, f, indent=2, ensure_ascii=False)
    f.write("\n")
    if f is not sys.stdout:
        f.close()
    if args.csv_dir:
        _write_csv_tables(doc, Path(args.csv_dir))
    return 0


def _write_csv_tables(doc: dict, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)

    def write_confusion(name: str, section: dict) -> None:
        with open(directory / f"{name}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["gold\\pred", *section["labels"]])
            for label, row in zip(section["labels"], section["matrix"]):
                writer.writerow([label, *row])

    def write_pairs(name: str, pairs: dict) -> None:
        with open(directory / f"{name}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["key", "value"])
            for key, value in pairs.items():
                writer.writerow([key, value])

    for probe, section in doc.get("probes", {}).items():
        if "confusion" in section:
            write_confusion(f"{probe}_confusion", section["confusion"])
        if "manhattan_histogram" in section:
            write_pairs(f"{probe}_manhattan_histogram", section["manhattan_histogram"])
        if "group_log_mae" in section:
            for group, table in section["group_log_mae"].items():
                write_pairs(f"{probe}_log_mae_by_{group}", table)
        for dim_name, sub in section.get("confusion_by_dimension", {}).items():
            write_confusion(f"{probe}_confusion_{dim_name.replace('/', '-')}", sub)


def cmd_predict(args) -> int:
    registry = _load_registry(args)
    model = load_model(args.checkpoint, registry)
    f = _open_out(args.out)
    with open(args.input, encoding="utf-8") as lines:
        for raw in lines:
            line = raw.strip()
            if not line:
                continue
            text = json.loads(line)["text"] if line.startswith("{") else line
            pred = model.predict(model.encode(text))
            record = {
                "text": text,
                "dimension": pred.dimension.name,
                "unit": pred.unit.name,
                "number": pred.surface_number,
                "canonical_number": pred.canonical_number,
                "dim_probs": {
                    d.name: float(p)
                    for d, p in zip(registry.dimensions, pred.dim_probs)
                },
            }
            f.write(json.dumps(record, ensure_ascii=False) + "\n")
    if f is not sys.stdout:
        f.close()
    return 0


def cmd_fewshot(args) -> int:
    registry = _load_registry(args)
    split = _load_split(args, registry)
    report = experiments.fewshot_grid(
        split,
        registry,
        _encoder_config(args, frozen=False),
        _train_config(args),
        ks=tuple(args.k),
        seeds=tuple(range(args.seed, args.seed + args.seeds)),
    )
    f = _open_out(args.out)
    json.dump(report, f, indent=2, ensure_ascii=False)
    f.write("\n")
    if f is not sys.stdout:
        f.close()
    return 0


def cmd_export(args) -> int:
    registry = _load_registry(args)
    model = load_model(args.checkpoint, registry)
    result = data_mod.load_examples(args.data, registry)
    examples = result.examples[: args.limit] if args.limit else result.examples
    out = args.out or "embeddings.tsv"
    n = export_embeddings(model.encoder, examples, out)
    print(f"export: wrote {n} rows to {out}", file=sys.stderr)
    return 0


# -- parser ---------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict[str, _Command]]:
    parser = argparse.ArgumentParser(
        prog="measured",
        description="Masked measurement prediction: corpora, models, evaluation.",
    )
    subparsers = parser.add_subparsers(dest="_command", required=True)
    commands: dict[str, _Command] = {}

    cmd = _Command(subparsers, "ingest", "canonicalize raw JSONL records")
    cmd.add("data", str, None, "raw JSONL input path")
    commands["ingest"] = cmd

    cmd = _Command(subparsers, "synth", "generate a synthetic corpus")
    cmd.add("n", int, 7000, "number of records")
    cmd.add("ambiguity", float, 0.0, "fraction of dimension-neutral sentences")
    cmd.add("balanced", bool, True, "equal examples per dimension")
    commands["synth"] = cmd

    cmd = _Command(subparsers, "stats", "corpus statistics as JSON")
    cmd.add("data", str, None, "JSONL input path")
    commands["stats"] = cmd

    cmd = _Command(subparsers, "train", "train a model variant")
    cmd.add("data", str, None, "JSONL corpus path")
    cmd.add("variant", str, "joint", "model variant", choices=list(VARIANTS))
    cmd.add("history", str, None, "write per-epoch history JSONL here")
    cmd.add("seeds", int, 1, "train this many seeds and report mean/sd")
    cmd.add("resume", str, None, "checkpoint to continue training from")
    cmd.add("mixture-number", bool, False, "predict numbers via the dimension mixture")
    _add_encoder_options(cmd)
    _add_train_options(cmd)
    commands["train"] = cmd

    cmd = _Command(subparsers, "eval", "evaluate a checkpoint's probes")
    cmd.add("checkpoint", str, None, "model checkpoint path")
    cmd.add("data", str, None, "JSONL corpus path")
    cmd.add("probes", str, "auto", "comma list: dim,dim-given-y,unit,num (or auto)")
    cmd.add("csv-dir", str, None, "also write per-table CSV files here")
    cmd.add("ratios", _csv_floats, (0.8, 0.1, 0.1), "train,val,test split ratios")
    commands["eval"] = cmd

    cmd = _Command(subparsers, "predict", "predict measurements for masked sentences")
    cmd.add("checkpoint", str, None, "model checkpoint path")
    cmd.add("input", str, None, "sentences: JSONL with a 'text' field, or raw lines")
    commands["predict"] = cmd

    cmd = _Command(subparsers, "fewshot", "frozen-vs-finetuned few-shot grid")
    cmd.add("data", str, None, "JSONL corpus path")
    cmd.add("k", _csv_ints, (10, 40, 70, 100), "examples per class, comma list")
    cmd.add("seeds", int, 3, "number of seeds to average")
    _add_encoder_options(cmd)
    _add_train_options(cmd)
    commands["fewshot"] = cmd

    cmd = _Command(subparsers, "export", "export hidden vectors with labels (TSV)")
    cmd.add("checkpoint", str, None, "model checkpoint path")
    cmd.add("data", str, None, "JSONL corpus path")
    cmd.add("limit", int, None, "export at most this many rows")
    commands["export"] = cmd

    return parser, commands


_HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "fewshot": cmd_fewshot,
    "export": cmd_export,
}

_REQUIRED = {
    "ingest": ("data",),
    "stats": ("data",),
    "train": ("data",),
    "eval": ("checkpoint", "data"),
    "predict": ("checkpoint", "input"),
    "fewshot": ("data",),
    "export": ("checkpoint", "data"),
}


def main(argv=None) -> int:
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    command = args._command
    try:
        commands[command].resolve(args)
        for name in _REQUIRED.get(command, ()):
            if getattr(args, name) is None:
                raise ValueError(f"--{name} is required for '{command}'")
        return _HANDLERS[command](args)
    except (ValueError, KeyError, OSError, RuntimeError) as err:
        print(f"measured: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
