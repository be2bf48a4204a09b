"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import pandas as pd
import yaml

from . import adm, data, harness
from .config import ExperimentConfig, PRESETS, dump_config, load_config, preset
from .online import OnlineIDS, run_stream, split_initial_stream

log = logging.getLogger("aocids")

# exit codes per error category
EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_RUNTIME = 2, 3, 4, 5, 6


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category, self.code = category, code


# -- helpers -------------------------------------------------------------------


def _parse_value(text: str):
    return yaml.safe_load(text)


def _set_overrides(pairs: list[str]) -> dict:
    """``stream.epoch0=5`` style assignments to a nested dict."""
    out: dict = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError("config", f"--set expects key=value, got {pair!r}", EXIT_CONFIG)
        key, value = pair.split("=", 1)
        node = out
        *parents, leaf = key.strip().split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = _parse_value(value)
    return out


def build_config(args, input_dim: int | None = None) -> ExperimentConfig:
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = preset(args.preset, input_dim or 194)
        over = _set_overrides(args.set)
        if input_dim is not None:
            over.setdefault("arch", {})["input_dim"] = input_dim
        if args.seed is not None:
            over.setdefault("stream", {})["seed"] = args.seed
        return cfg.with_overrides(over) if over else cfg
    except CliError:
        raise
    except FileNotFoundError as exc:
        raise CliError("io", str(exc), EXIT_IO) from exc
    except (ValueError, TypeError, yaml.YAMLError) as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc


def _schema_for(path) -> data.ColumnSchema:
    header = [c.strip() for c in pd.read_csv(path, nrows=0).columns]
    unsw = data.ColumnSchema.unsw()
    if set(unsw.numeric) <= set(header):
        return unsw
    return data.ColumnSchema.numeric_only(header)


def load_pair(paths, prep_path=None):
    """Load train/test CSVs, fit (or load) the preprocessor on train, apply to both."""
    if not paths or len(paths) != 2:
        raise CliError("usage", "--data needs exactly two paths: train.csv test.csv", EXIT_USAGE)
    try:
        schema = _schema_for(paths[0])
        train_raw = data.load_dataset(paths[0], schema)
        test_raw = data.load_dataset(paths[1], schema)
        prep = data.Preprocessor.load(prep_path) if prep_path else data.fit_preprocessor(train_raw)
        return prep, data.apply_preprocessor(prep, train_raw), data.apply_preprocessor(prep, test_raw)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc), EXIT_IO) from exc
    except (data.DataError, ValueError, KeyError) as exc:
        raise CliError("data", str(exc), EXIT_DATA) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("io", f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_synth(args) -> None:
    out = _out_dir(args)
    seed = args.seed or 0
    try:
        train = data.generate_synthetic(args.n_normal, args.n_attack, args.dim, args.separation, seed)
        test = data.generate_synthetic(args.test_normal, args.test_attack, args.dim, args.separation, seed + 1)
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_CONFIG) from exc
    data.write_feature_csv(train, out / "train.csv")
    data.write_feature_csv(test, out / "test.csv")
    print(f"wrote {out / 'train.csv'} ({len(train)} rows) and {out / 'test.csv'} ({len(test)} rows)")


def cmd_train(args) -> None:
    prep, train, test = load_pair(args.data, args.preprocessor)
    cfg = build_config(args, train.dim)
    out = _out_dir(args)
    ids = OnlineIDS(cfg, train.dim)
    init_idx, _ = split_initial_stream(len(train), cfg.stream.initial_fraction, cfg.stream.seed)
    clean = train.take(init_idx)
    try:
        losses = ids.initial_train(clean)
    except ValueError as exc:
        raise CliError("data", str(exc), EXIT_DATA) from exc
    metrics = ids.evaluate(test)
    prep.save(out / "preprocessor.json")
    adm.save_checkpoint(out / "checkpoint.npz", ids.model, ids.decision, ids.optimizer,
                        extra={"config": cfg.to_dict()})
    (out / "config.yaml").write_text(dump_config(cfg))
    _write_json(out / "metrics.json", {"initial": metrics, "n_params": ids.model.n_params(),
                                       "n_initial": len(init_idx), "final_loss": losses[-1] if losses else None})
    print(json.dumps(metrics))


def cmd_stream(args) -> None:
    prep, train, test = load_pair(args.data, args.preprocessor)
    cfg = build_config(args, train.dim)
    out = _out_dir(args)
    hist_path = out / "history.jsonl"
    with hist_path.open("w") as fh:
        def on_batch(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()
        try:
            res = run_stream(train, test, cfg, on_batch=on_batch)
        except ValueError as exc:
            raise CliError("data", str(exc), EXIT_DATA) from exc
    prep.save(out / "preprocessor.json")
    adm.save_checkpoint(out / "checkpoint.npz", res.ids.model, res.ids.decision, res.ids.optimizer,
                        extra={"config": cfg.to_dict()})
    (out / "config.yaml").write_text(dump_config(cfg))
    _write_json(out / "metrics.json", {"initial": res.initial_metrics, "final": res.final_metrics,
                                       "n_params": res.n_params, "n_initial": res.n_initial,
                                       "n_stream": res.n_stream, "n_batches": len(res.history)})
    print(json.dumps(res.final_metrics))


def cmd_ablate(args) -> None:
    _, train, test = load_pair(args.data, args.preprocessor)
    runs = args.runs or list(harness.TABLE_RUNS)
    unknown = [r for r in runs if r not in PRESETS]
    if unknown:
        raise CliError("config", f"unknown runs {unknown}; choose from {sorted(PRESETS)}", EXIT_CONFIG)
    overrides = _set_overrides(args.set)
    if args.config:
        try:
            overrides = harness_overrides_from_file(args.config, overrides)
        except (OSError, yaml.YAMLError) as exc:
            raise CliError("config", str(exc), EXIT_CONFIG) from exc
    plan = harness.AblationPlan(runs=runs, seeds=args.seeds, overrides=overrides)
    out = _out_dir(args)
    results = harness.run_ablation(plan, train, test, out_dir=out, workers=args.workers)
    harness.emit_report(results, out, "all")
    print((out / "table.txt").read_text(), end="")
    failed = [f"{r.run}/seed{r.seed}" for r in results if r.error]
    if failed:
        raise CliError("runtime", f"{len(failed)} run(s) failed: {', '.join(failed)}", EXIT_RUNTIME)


def harness_overrides_from_file(path, extra: dict) -> dict:
    """An ablation config file holds section overrides applied to every preset."""
    doc = yaml.safe_load(Path(path).read_text()) or {}
    doc.pop("preset", None)
    doc.pop("name", None)
    merged = dict(doc)
    for k, v in extra.items():
        merged[k] = {**merged.get(k, {}), **v} if isinstance(v, dict) else v
    return merged


def cmd_report(args) -> None:
    results_dir = Path(args.results)
    if not results_dir.is_dir():
        raise CliError("io", f"results directory not found: {results_dir}", EXIT_IO)
    results = harness.load_results(results_dir)
    if not results:
        raise CliError("data", f"no stored runs under {results_dir}", EXIT_DATA)
    out = _out_dir(args)
    for p in harness.emit_report(results, out, args.format):
        print(p)


def cmd_export_boost(args) -> None:
    """Engineered features, stratified 80/20 resplit of train, balanced weights."""
    paths = args.data or []
    if len(paths) not in (1, 2):
        raise CliError("usage", "--data needs train.csv [test.csv]", EXIT_USAGE)
    out = _out_dir(args)
    seed = args.seed or 0
    try:
        schema = _schema_for(paths[0])
        train_raw = data.load_dataset(paths[0], schema)
        test_raw = data.load_dataset(paths[1], schema) if len(paths) == 2 else None
        engineered = {"sload", "dload", "sbytes", "dur", "spkts", "dpkts"} <= set(schema.numeric)
        if engineered:
            train_raw = data.add_engineered_columns(train_raw)
            test_raw = data.add_engineered_columns(test_raw) if test_raw is not None else None
        strata = train_raw.strata if train_raw.strata is not None else train_raw.labels.astype(str)
        fit_idx, val_idx = data.stratified_split_indices(strata, args.fraction, seed)
        fit_raw = _subset(train_raw, fit_idx)
        prep = data.fit_preprocessor(fit_raw)
        parts = {"boost_train": fit_raw, "boost_val": _subset(train_raw, val_idx)}
        if test_raw is not None:
            parts["boost_test"] = test_raw
        for name, raw in parts.items():
            fm = data.apply_preprocessor(prep, raw)
            extra = {"weight": data.balanced_sample_weights(fm.labels)} if name == "boost_train" else {}
            data.write_feature_csv(fm, out / f"{name}.csv", names=prep.feature_names(), extra=extra)
        prep.save(out / "preprocessor.json")
    except FileNotFoundError as exc:
        raise CliError("io", str(exc), EXIT_IO) from exc
    except (data.DataError, ValueError, KeyError) as exc:
        raise CliError("data", str(exc), EXIT_DATA) from exc
    print(f"wrote {', '.join(sorted(parts))} to {out} (engineered features: {'yes' if engineered else 'no'})")


def _subset(raw: data.RawDataset, idx) -> data.RawDataset:
    return data.RawDataset(raw.frame.iloc[idx].reset_index(drop=True), raw.labels[idx], raw.schema)


# -- parser --------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, needs_data: bool = True) -> None:
    p.add_argument("--config", help="YAML/JSON experiment config")
    p.add_argument("--preset", default="base", choices=sorted(PRESETS),
                   help="starting configuration when --config is absent")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config field, repeatable")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="out")
    if needs_data:
        p.add_argument("--data", nargs="+", metavar="CSV", required=True, help="train.csv test.csv")
        p.add_argument("--preprocessor", help="reuse a saved preprocessor instead of fitting one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aocids", description="Online intrusion detection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="initial training on the clean pool only")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("stream", help="full online run")
    _common(p)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("ablate", help="run the ablation plan")
    _common(p)
    p.add_argument("--runs", nargs="+", help="run names (default: all table rows)")
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2, 3, 4])
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="emit tables and plot data from stored runs")
    _common(p, needs_data=False)
    p.add_argument("--results", required=True, help="directory written by ablate")
    p.add_argument("--format", choices=["table", "plotdata", "all"], default="all")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic two-class dataset")
    _common(p, needs_data=False)
    p.add_argument("--n-normal", type=int, default=1000)
    p.add_argument("--n-attack", type=int, default=2000)
    p.add_argument("--test-normal", type=int, default=500)
    p.add_argument("--test-attack", type=int, default=1000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=6.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("export-boost", help="export engineered, weighted splits for an external booster")
    _common(p)
    p.add_argument("--fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_export_boost)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled", exc_info=True)
        print(f"error[runtime]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
