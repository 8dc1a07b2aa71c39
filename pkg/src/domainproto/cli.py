"""Command-line entry point.

One binary, subcommand style; a JSON config file is the source of truth and
individual keys can be overridden from the command line, so sweep configs
stay diffable. Unknown keys are rejected. Every artifact embeds the fully
normalized config and the package version.

Exit codes: 0 success, 2 config/validation error (the message names the
offending key), 66 missing input file, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .dataio import (
    PROTOCOLS,
    SINGLE_SESSION,
    CsvSchema,
    Dataset,
    SynthConfig,
    load_csv,
    make_splits,
    apply_fold,
    synth_generate,
    write_csv,
)
from .errors import (
    ConfigError,
    DimensionError,
    ParseError,
    SampleSizeError,
    ValidationError,
)
from .trainer import (
    ABLATIONS,
    TrainConfig,
    config_to_dict,
    decouple_eval,
    evaluate,
    k_sweep,
    noise_sweep,
    run_fold,
    run_protocol,
    train_fold,
)
from .inference import predict_batch

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_NOINPUT = 66

# provenance of every train-config key: "method" = fixed by the published
# method description, "tool" = left open there and chosen by this artifact
CONFIG_PROVENANCE = {
    "n_superdomains": ("method", "number of aggregated superdomains K"),
    "alpha_high": ("method", "upper threshold of the prototype blend weight"),
    "alpha_low": ("method", "lower threshold of the prototype blend weight"),
    "alpha_power": ("method", "decay exponent of the blend weight"),
    "beta": ("method", "soft regularization weight"),
    "hidden_dim": ("method", "width of hidden and feature layers"),
    "leaky_slope": ("method", "extractor leaky-relu slope"),
    "dropout": ("method", "discriminator dropout probability"),
    "grl_lambda": ("tool", "gradient reversal strength"),
    "lr": ("tool", "SGD learning rate"),
    "weight_decay": ("tool", "SGD weight decay"),
    "batch_size": ("tool", "minibatch size"),
    "max_epoch": ("tool", "training epochs per fold"),
    "seed": ("tool", "run seed; folds derive their own streams"),
    "kernel_bandwidth": ("tool", "Gaussian kernel bandwidth; null = median heuristic"),
    "mmd_subsample": ("tool", "row cap for the median heuristic"),
    "aggregate_every": ("tool", "epochs between re-aggregations"),
    "aggregate_on": ("tool", "cluster on 'mmd' distances or distance 'vectors'"),
    "balanced_domains": ("tool", "stratify batches by subject"),
    "label_noise": ("method", "source label corruption fraction eta"),
    "ablations": ("method", "study switches; see --help"),
}

TOP_LEVEL_KEYS = ("dataset", "output_dir", "protocol", "train", "sweep", "target_subject", "checkpoint")
DATASET_KEYS = ("csv", "synth", "schema")
SWEEP_KEYS = ("etas", "ks")


def _provenance_epilog() -> str:
    lines = ["train config keys ([method] = fixed by the published method, [tool] = artifact choice):"]
    for key, (tag, desc) in CONFIG_PROVENANCE.items():
        lines.append(f"  {key:<18} [{tag}] {desc}")
    lines.append("ablation switches: " + ", ".join(ABLATIONS))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domainproto",
        description=(
            "Cross-subject transfer learning with adversarial feature decoupling, "
            "MMD superdomain aggregation, and prototype inference on unseen targets."
        ),
        epilog=_provenance_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("synth", "generate a synthetic dataset CSV from the config's synth block"),
        ("train", "train on the configured dataset and write a checkpoint"),
        ("eval", "score a checkpoint on the configured dataset"),
        ("protocol", "run the leave-one-subject-out protocol"),
        ("noise-sweep", "pointwise vs pairwise accuracy across label-noise levels"),
        ("k-sweep", "protocol accuracy across superdomain counts"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run config JSON file")
        p.add_argument("--output-dir", help="override the config's output_dir")
        p.add_argument("--seed", type=int, help="override train.seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel fold workers")
        p.add_argument(
            "--dump-diagnostics", action="store_true",
            help="write per-epoch MMD matrices and assignments",
        )
        p.add_argument(
            "--save-checkpoints", action="store_true",
            help="write one checkpoint per fold during protocol runs",
        )
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key by dotted path, e.g. train.lr=0.01",
        )
    return parser


def _reject_unknown(mapping: dict, allowed, where: str) -> None:
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")


def load_run_config(path: Path) -> dict:
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    _reject_unknown(raw, TOP_LEVEL_KEYS, "config")
    if "dataset" in raw:
        _reject_unknown(raw["dataset"], DATASET_KEYS, "dataset")
    if "sweep" in raw:
        _reject_unknown(raw["sweep"], SWEEP_KEYS, "sweep")
    return raw


def _parse_override(spec: str):
    if "=" not in spec:
        raise ConfigError(f"--set expects KEY=VALUE, got {spec!r}")
    key, value = spec.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value  # bare strings allowed
    return key.strip(), parsed


def apply_overrides(raw: dict, args) -> dict:
    for spec in args.set:
        key, value = _parse_override(spec)
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    if args.seed is not None:
        raw.setdefault("train", {})["seed"] = args.seed
    if args.output_dir is not None:
        raw["output_dir"] = args.output_dir
    return raw


def normalize(raw: dict) -> dict:
    """Fill every default so artifacts record the complete effective config."""
    train_raw = dict(raw.get("train", {}))
    known = {f.name for f in fields(TrainConfig)}
    _reject_unknown(train_raw, known, "train")
    if "ablations" in train_raw:
        train_raw["ablations"] = tuple(train_raw["ablations"])
    try:
        cfg = TrainConfig(**train_raw)
    except TypeError as exc:
        raise ConfigError(f"train: {exc}") from None

    protocol = raw.get("protocol", SINGLE_SESSION)
    if protocol not in PROTOCOLS:
        raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {protocol!r}")

    dataset = raw.get("dataset")
    synth_cfg = None
    if dataset and "synth" in dataset:
        synth_raw = dict(dataset["synth"])
        synth_known = {f.name for f in fields(SynthConfig)}
        _reject_unknown(synth_raw, synth_known, "dataset.synth")
        try:
            synth_cfg = SynthConfig(**synth_raw)
        except TypeError as exc:
            raise ConfigError(f"dataset.synth: {exc}") from None

    return {
        "dataset": dataset,
        "synth_cfg": synth_cfg,
        "output_dir": Path(raw.get("output_dir", "out")),
        "protocol": protocol,
        "train_cfg": cfg,
        "sweep": raw.get("sweep", {}),
        "target_subject": raw.get("target_subject"),
        "checkpoint": raw.get("checkpoint"),
    }


def resolve_dataset(norm: dict) -> Dataset:
    dataset = norm["dataset"]
    if not dataset:
        raise ConfigError("dataset: missing; provide dataset.csv or dataset.synth")
    if "csv" in dataset:
        path = Path(dataset["csv"])
        if not path.exists():
            raise FileNotFoundError(f"dataset file {path} does not exist")
        schema_raw = dict(dataset.get("schema", {}))
        known = {f.name for f in fields(CsvSchema)}
        _reject_unknown(schema_raw, known, "dataset.schema")
        if "feature_columns" in schema_raw and schema_raw["feature_columns"] is not None:
            schema_raw["feature_columns"] = tuple(schema_raw["feature_columns"])
        return load_csv(path, CsvSchema(**schema_raw))
    if norm["synth_cfg"] is not None:
        return synth_generate(norm["synth_cfg"])
    raise ConfigError("dataset: needs either a csv path or a synth block")


def _reproducibility_header(norm: dict) -> dict:
    return {"version": __version__, "config": _norm_to_plain(norm)}


def _norm_to_plain(norm: dict) -> dict:
    out = {
        "dataset": norm["dataset"],
        "output_dir": str(norm["output_dir"]),
        "protocol": norm["protocol"],
        "train": config_to_dict(norm["train_cfg"]),
        "sweep": norm["sweep"],
        "target_subject": norm["target_subject"],
        "checkpoint": norm["checkpoint"],
    }
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_table(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def _dump_fold_diagnostics(outdir: Path, fold_idx: int, state) -> None:
    ddir = outdir / "diagnostics" / f"fold{fold_idx}"
    ddir.mkdir(parents=True, exist_ok=True)
    for entry in state.diagnostics:
        t = entry["epoch"]
        np.savetxt(ddir / f"mmd_matrix_epoch{t}.csv", np.asarray(entry["mmd_matrix"]), delimiter=",")
        np.savetxt(
            ddir / f"assignment_epoch{t}.csv",
            np.asarray(entry["assignment"], dtype=int)[None, :],
            fmt="%d", delimiter=",",
        )


def cmd_synth(norm: dict, args) -> int:
    if norm["synth_cfg"] is None:
        raise ConfigError("dataset.synth: required for the synth command")
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    ds = synth_generate(norm["synth_cfg"])
    write_csv(ds, outdir / "dataset.csv")
    _write_json(outdir / "synth_meta.json", {
        **_reproducibility_header(norm),
        "rows": len(ds), "feature_dim": ds.feature_dim,
        "n_subjects": ds.n_subjects, "n_classes": ds.n_classes,
    })
    print(f"wrote {outdir / 'dataset.csv'} ({len(ds)} rows)")
    return EXIT_OK


def cmd_train(norm: dict, args) -> int:
    ds = resolve_dataset(norm)
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    cfg = norm["train_cfg"]
    target = norm["target_subject"]
    if target is not None:
        if not 0 <= int(target) < ds.n_subjects:
            raise ConfigError(f"target_subject: {target} outside [0, {ds.n_subjects})")
        plan = make_splits(ds, norm["protocol"])
        source, _ = apply_fold(ds, plan.folds[int(target)])
    else:
        source = ds
    state = train_fold(source, cfg, fold_index=0, collect_diagnostics=args.dump_diagnostics)
    save_checkpoint(outdir / "checkpoint.npz", state)
    _write_table(
        outdir / "train_log.csv",
        state.history,
        ["epoch", "l_cls", "l_dom", "l_fd", "l_pair", "l_align", "total", "alpha", "k", "prototype_norm"],
    )
    if args.dump_diagnostics:
        _dump_fold_diagnostics(outdir, 0, state)
    _write_json(outdir / "train_meta.json", _reproducibility_header(norm))
    print(f"wrote {outdir / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_eval(norm: dict, args) -> int:
    if not norm["checkpoint"]:
        raise ConfigError("checkpoint: required for the eval command")
    ckpt_path = Path(norm["checkpoint"])
    if not ckpt_path.exists():
        raise FileNotFoundError(f"checkpoint {ckpt_path} does not exist")
    state = load_checkpoint(ckpt_path)
    ds = resolve_dataset(norm)
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    result = evaluate(state, ds)
    x_d, x_c = decouple_eval(state.model, ds.features)
    preds, k_star, v, p = predict_batch(
        x_d, x_c, state.bank, state.model.theta.matrix,
        use_domain_prototype=not state.config.ablated("domain-prototype"),
    )
    rows = [
        {
            "index": i,
            "true_label": int(ds.labels[i]),
            "predicted_label": int(preds[i]),
            "superdomain": int(k_star[i]),
            "max_affinity": float(v[i].max()),
            "max_class_prob": float(p[i].max()),
        }
        for i in range(len(ds))
    ]
    _write_table(
        outdir / "predictions.csv",
        rows,
        ["index", "true_label", "predicted_label", "superdomain", "max_affinity", "max_class_prob"],
    )
    _write_json(outdir / "metrics.json", {
        **_reproducibility_header(norm),
        "accuracy": result["accuracy"],
        "n_samples": result["n_samples"],
        "confusion": result["confusion"].tolist(),
    })
    print(f"accuracy {result['accuracy']:.4f} on {result['n_samples']} samples")
    return EXIT_OK


def cmd_protocol(norm: dict, args) -> int:
    ds = resolve_dataset(norm)
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    keep = args.save_checkpoints or args.dump_diagnostics
    report, states = run_protocol(
        ds, norm["protocol"], norm["train_cfg"], jobs=args.jobs,
        keep_states=keep, collect_diagnostics=args.dump_diagnostics,
    )
    # header last so report.json's "config" is the full normalized run config
    payload = {**report.to_dict(), **_reproducibility_header(norm)}
    _write_json(outdir / "report.json", payload)
    _write_table(
        outdir / "folds.csv",
        report.per_fold,
        ["fold", "target_subject", "accuracy", "n_samples", "target_reads_before_eval", "final_k"],
    )
    curve_rows = [
        {"fold": fr["fold"], **h} for fr in report.per_fold for h in fr["loss_curve"]
    ]
    _write_table(
        outdir / "loss_curves.csv",
        curve_rows,
        ["fold", "epoch", "l_cls", "l_dom", "l_fd", "l_pair", "l_align", "total", "alpha", "k", "prototype_norm"],
    )
    np.savetxt(outdir / "confusion.csv", np.asarray(report.confusion, dtype=int), fmt="%d", delimiter=",")
    if states:
        for i, state in enumerate(states):
            if args.save_checkpoints:
                save_checkpoint(outdir / f"checkpoint_fold{i}.npz", state)
            if args.dump_diagnostics:
                _dump_fold_diagnostics(outdir, i, state)
    print(
        f"mean accuracy {100 * report.mean_accuracy:.2f}% "
        f"+/- {100 * report.std_accuracy:.2f}% over {len(report.fold_accuracies)} folds"
    )
    return EXIT_OK


def cmd_noise_sweep(norm: dict, args) -> int:
    ds = resolve_dataset(norm)
    etas = norm["sweep"].get("etas")
    if not etas:
        raise ConfigError("sweep.etas: required for the noise-sweep command")
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    rows = noise_sweep(ds, etas, norm["train_cfg"], norm["protocol"], jobs=args.jobs)
    _write_table(
        outdir / "noise_sweep.csv",
        rows,
        ["eta", "pointwise_accuracy", "pointwise_std", "pairwise_accuracy", "pairwise_std"],
    )
    _write_json(outdir / "noise_sweep.json", {**_reproducibility_header(norm), "rows": rows})
    for row in rows:
        print(
            f"eta={row['eta']:.2f} pointwise {100 * row['pointwise_accuracy']:.2f}% "
            f"pairwise {100 * row['pairwise_accuracy']:.2f}%"
        )
    return EXIT_OK


def cmd_k_sweep(norm: dict, args) -> int:
    ds = resolve_dataset(norm)
    ks = norm["sweep"].get("ks")
    if not ks:
        raise ConfigError("sweep.ks: required for the k-sweep command")
    outdir = norm["output_dir"]
    outdir.mkdir(parents=True, exist_ok=True)
    rows = k_sweep(ds, ks, norm["train_cfg"], norm["protocol"], jobs=args.jobs)
    _write_table(outdir / "k_sweep.csv", rows, ["k", "mean_accuracy", "std_accuracy"])
    _write_json(outdir / "k_sweep.json", {**_reproducibility_header(norm), "rows": rows})
    for row in rows:
        print(f"K={row['k']} accuracy {100 * row['mean_accuracy']:.2f}% +/- {100 * row['std_accuracy']:.2f}%")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "protocol": cmd_protocol,
    "noise-sweep": cmd_noise_sweep,
    "k-sweep": cmd_k_sweep,
}

_CONFIG_ERRORS = (
    ConfigError,
    ValidationError,
    ParseError,
    DimensionError,
    SampleSizeError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_run_config(Path(args.config))
        raw = apply_overrides(raw, args)
        norm = normalize(raw)
        return COMMANDS[args.command](norm, args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        traceback.print_exc()
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
