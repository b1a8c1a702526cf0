"""Command line: configure and run seeded experiments, verify the numerical
kernels, and report result tables.

Exit codes: 0 success, 2 invalid config or unusable input, 3 runtime
numerical failure. Result files are deterministic: rerunning an identical
config reproduces them byte for byte (timings go to stdout only).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import io
import json
import os
import sys
import time

import numpy as np

from .data import Benchmark, load_dataset, split_benchmark, synthetic_suite
from .metrics import acc, fm, la, summarize
from .tensor import NumericalError
from .trainer import TrainConfig, run_benchmark
from .verify import run_all_checks

SCHEMA_VERSION = 1
WORKERS_ENV = "SRKOCL_WORKERS"

VARIANT_PRESETS = {
    "srkocl": {"replay": True, "pod": True, "eca": True, "display": "SRKOCL"},
    "srkocl-pod": {"replay": True, "pod": True, "eca": False, "display": "SRKOCL-POD"},
    "srkocl-base": {"replay": True, "pod": False, "eca": False, "display": "SRKOCL-Base"},
    "finetune": {"replay": False, "pod": False, "eca": False, "display": "Finetune"},
}

DEFAULT_CONFIG = {
    "benchmark": {
        "kind": "synthetic",
        "num_tasks": 5,
        "classes_per_task": 2,
        "dims": [8, 8, 3],
        "samples_per_class": 250,
        "separation": 0.7,
        "noise": 1.0,
        "test_fraction": 0.2,
        "path": None,
        "format": None,
        "test_path": None,
        "ordered_classes": False,
        "input_shape": None,
    },
    "train": {
        "batch_size": 10,
        "learning_rate": 0.05,
        "per_task_budget": 65,
        "pod_weight": 1.0,
        "replay_batch_size": None,
        "nf": 20,
        "eca_lambda": 2.0,
        "eca_b": 1.0,
        "precision": "f64",
    },
    "variants": ["srkocl-base", "srkocl-pod", "srkocl"],
    "seeds": [0, 1, 2, 3, 4],
    "output_dir": "results",
}


class CliConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


def _merge_section(section: str, given: dict, defaults: dict) -> dict:
    if not isinstance(given, dict):
        raise CliConfigError(f"config key '{section}' must be an object")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise CliConfigError(f"unknown config key: {section}.{key}")
        merged[key] = value
    return merged


def _validate_variant(entry) -> dict:
    if isinstance(entry, str):
        if entry not in VARIANT_PRESETS:
            raise CliConfigError(
                f"unknown variant {entry!r}; presets: {sorted(VARIANT_PRESETS)}")
        preset = VARIANT_PRESETS[entry]
        return {"name": entry, "display": preset["display"], "replay": preset["replay"],
                "pod": preset["pod"], "eca": preset["eca"], "pod_weight": None}
    if isinstance(entry, dict):
        allowed = {"name", "replay", "pod", "eca", "pod_weight"}
        for key in entry:
            if key not in allowed:
                raise CliConfigError(f"unknown config key: variants[].{key}")
        for key in ("name", "replay", "pod", "eca"):
            if key not in entry:
                raise CliConfigError(f"custom variant missing required key variants[].{key}")
        if not isinstance(entry["name"], str) or not entry["name"]:
            raise CliConfigError("variants[].name must be a non-empty string")
        for key in ("replay", "pod", "eca"):
            if not isinstance(entry[key], bool):
                raise CliConfigError(f"variants[].{key} must be a boolean")
        return {"name": entry["name"], "display": entry["name"], "replay": entry["replay"],
                "pod": entry["pod"], "eca": entry["eca"],
                "pod_weight": entry.get("pod_weight")}
    raise CliConfigError("variants entries must be preset names or variant objects")


def validate_config(doc: dict) -> dict:
    """Fill defaults and reject unknown keys; returns the effective config."""
    if not isinstance(doc, dict):
        raise CliConfigError("config root must be an object")
    for key in doc:
        if key not in DEFAULT_CONFIG:
            raise CliConfigError(f"unknown config key: {key}")
    effective = {
        "benchmark": _merge_section("benchmark", doc.get("benchmark", {}),
                                    DEFAULT_CONFIG["benchmark"]),
        "train": _merge_section("train", doc.get("train", {}), DEFAULT_CONFIG["train"]),
        "variants": copy.deepcopy(doc.get("variants", DEFAULT_CONFIG["variants"])),
        "seeds": copy.deepcopy(doc.get("seeds", DEFAULT_CONFIG["seeds"])),
        "output_dir": doc.get("output_dir", DEFAULT_CONFIG["output_dir"]),
    }
    bench = effective["benchmark"]
    if bench["kind"] not in ("synthetic", "file"):
        raise CliConfigError("benchmark.kind must be 'synthetic' or 'file'")
    if bench["kind"] == "file":
        if not bench["path"]:
            raise CliConfigError("benchmark.path is required when benchmark.kind='file'")
        if bench["format"] not in ("csv_labeled", "raw_u8_images"):
            raise CliConfigError(
                "benchmark.format must be 'csv_labeled' or 'raw_u8_images'")
    if not isinstance(effective["seeds"], list) or not effective["seeds"]:
        raise CliConfigError("seeds must be a non-empty list of integers")
    if not all(isinstance(s, int) for s in effective["seeds"]):
        raise CliConfigError("seeds must be a non-empty list of integers")
    if not isinstance(effective["variants"], list) or not effective["variants"]:
        raise CliConfigError("variants must be a non-empty list")
    effective["variants"] = [_validate_variant(v) for v in effective["variants"]]
    names = [v["name"] for v in effective["variants"]]
    if len(set(names)) != len(names):
        raise CliConfigError("variant names must be unique")
    if not isinstance(effective["output_dir"], str) or not effective["output_dir"]:
        raise CliConfigError("output_dir must be a non-empty string")
    try:
        TrainConfig(**_train_kwargs(effective["train"],
                                    effective["variants"][0], effective["seeds"][0]))
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"invalid train section: {exc}") from None
    return effective


def _train_kwargs(train: dict, variant: dict, seed: int) -> dict:
    pod_weight = variant["pod_weight"]
    if pod_weight is None:
        pod_weight = train["pod_weight"]
    return dict(batch_size=train["batch_size"], learning_rate=train["learning_rate"],
                per_task_budget=train["per_task_budget"],
                replay_enabled=variant["replay"], pod_enabled=variant["pod"],
                eca_enabled=variant["eca"], pod_weight=pod_weight,
                replay_batch_size=train["replay_batch_size"], nf=train["nf"],
                eca_lambda=train["eca_lambda"], eca_b=train["eca_b"], seed=seed,
                precision=train["precision"])


def build_benchmark(bench: dict, seed: int) -> Benchmark:
    if bench["kind"] == "synthetic":
        return synthetic_suite(bench["num_tasks"], bench["classes_per_task"],
                               bench["dims"], bench["samples_per_class"], seed,
                               separation=bench["separation"], noise=bench["noise"],
                               test_fraction=bench["test_fraction"])
    dataset = load_dataset(bench["path"], bench["format"])
    if bench["input_shape"]:
        shape = tuple(int(d) for d in bench["input_shape"])
        if int(np.prod(shape)) != int(np.prod(dataset.input_shape)):
            raise CliConfigError(
                f"benchmark.input_shape {shape} incompatible with data {dataset.input_shape}")
        dataset = type(dataset)(inputs=dataset.inputs.reshape((len(dataset),) + shape),
                                labels=dataset.labels, num_classes=dataset.num_classes)
    test_dataset = None
    if bench["test_path"]:
        test_dataset = load_dataset(bench["test_path"], bench["format"])
        if bench["input_shape"]:
            test_dataset = type(test_dataset)(
                inputs=test_dataset.inputs.reshape((len(test_dataset),) + shape),
                labels=test_dataset.labels, num_classes=test_dataset.num_classes)
    return split_benchmark(dataset, bench["num_tasks"], bench["classes_per_task"], seed,
                           ordered_classes=bench["ordered_classes"],
                           test_dataset=test_dataset,
                           test_fraction=bench["test_fraction"])


def _execute_job(effective: dict, variant: dict, seed: int) -> dict:
    started = time.perf_counter()
    benchmark = build_benchmark(effective["benchmark"], seed)
    cfg = TrainConfig(**_train_kwargs(effective["train"], variant, seed))
    result = run_benchmark(benchmark, cfg)
    matrix = result.matrix
    metrics = {"acc": acc(matrix),
               "fm": fm(matrix) if benchmark.num_tasks >= 2 else None,
               "la": la(matrix)}
    return {"variant": variant["name"], "display": variant["display"], "seed": seed,
            "matrix": matrix.tolist(), "metrics": metrics,
            "seconds": time.perf_counter() - started}


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp-{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _summary_rows(by_variant: dict) -> list:
    rows = []
    for name in sorted(by_variant):
        entries = sorted(by_variant[name], key=lambda e: e["seed"])
        runs = [(e["metrics"]["acc"], e["metrics"]["fm"], e["metrics"]["la"])
                for e in entries]
        summary = summarize(runs)
        rows.append({
            "variant": entries[0]["display"],
            "acc_mean": summary.acc.mean, "acc_std": summary.acc.std,
            "fm_mean": summary.fm.mean if summary.fm else None,
            "fm_std": summary.fm.std if summary.fm else None,
            "la_mean": summary.la.mean, "la_std": summary.la.std,
            "seeds": [e["seed"] for e in entries],
        })
    return rows


def _summary_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "acc_mean", "acc_std", "fm_mean", "fm_std",
                     "la_mean", "la_std", "num_seeds"])
    for row in rows:
        writer.writerow([row["variant"],
                         f"{row['acc_mean']:.6f}", f"{row['acc_std']:.6f}",
                         "" if row["fm_mean"] is None else f"{row['fm_mean']:.6f}",
                         "" if row["fm_std"] is None else f"{row['fm_std']:.6f}",
                         f"{row['la_mean']:.6f}", f"{row['la_std']:.6f}",
                         len(row["seeds"])])
    return buf.getvalue()


def _format_table(rows: list) -> str:
    def cell(mean, std):
        if mean is None:
            return "n/a"
        return f"{mean:.4f} ± {std:.4f}"

    header = ["Variant", "ACC(↑)", "FM(↓)", "LA(↑)", "Seeds"]
    body = [[row["variant"], cell(row["acc_mean"], row["acc_std"]),
             cell(row["fm_mean"], row["fm_std"]), cell(row["la_mean"], row["la_std"]),
             str(len(row["seeds"]))] for row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for r in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise CliConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise CliConfigError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def cmd_run(config_path: str) -> int:
    try:
        with open(config_path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 2
    try:
        effective = validate_config(doc)
    except CliConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out_dir = effective["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(variant, seed) for variant in effective["variants"]
            for seed in effective["seeds"]]
    workers = _workers()
    results = []
    try:
        if workers == 1:
            for variant, seed in jobs:
                results.append(_execute_job(effective, variant, seed))
        else:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_execute_job, effective, variant, seed)
                           for variant, seed in jobs]
                results = [f.result() for f in futures]
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        print(f"diagnostics: config={config_path} output_dir={out_dir}", file=sys.stderr)
        return 3
    except (CliConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    by_variant: dict = {}
    for entry in results:
        payload = {"schema_version": SCHEMA_VERSION, "variant": entry["variant"],
                   "display": entry["display"], "seed": entry["seed"],
                   "config": {"benchmark": effective["benchmark"],
                              "train": effective["train"]},
                   "accuracy_matrix": entry["matrix"], "metrics": entry["metrics"]}
        path = os.path.join(out_dir, f"run_{entry['variant']}_{entry['seed']:04d}.json")
        _atomic_write(path, _dump_json(payload))
        by_variant.setdefault(entry["variant"], []).append(entry)
        m = entry["metrics"]
        fm_txt = "n/a" if m["fm"] is None else f"{m['fm']:.4f}"
        print(f"run variant={entry['variant']} seed={entry['seed']} "
              f"acc={m['acc']:.4f} fm={fm_txt} la={m['la']:.4f} "
              f"seconds={entry['seconds']:.2f}")

    rows = _summary_rows(by_variant)
    _atomic_write(os.path.join(out_dir, "summary.json"),
                  _dump_json({"schema_version": SCHEMA_VERSION, "rows": rows}))
    _atomic_write(os.path.join(out_dir, "summary.csv"), _summary_csv(rows))
    print(f"wrote {len(results)} run files and summary to {out_dir}")
    return 0


def cmd_verify() -> int:
    checks = run_all_checks()
    width = max(len(c.name) for c in checks)
    failed = 0
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        failed += 0 if c.passed else 1
        print(f"{status}  {c.name.ljust(width)}  {c.detail}")
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def _load_run_file(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliConfigError(f"cannot parse run file {path}: {exc}") from None
    for key in ("variant", "seed", "metrics"):
        if key not in doc:
            raise CliConfigError(f"run file {path} is missing field {key!r}")
    for key in ("acc", "fm", "la"):
        if key not in doc["metrics"]:
            raise CliConfigError(f"run file {path} is missing metric {key!r}")
    return doc


def cmd_report(results_dir: str, fmt: str) -> int:
    try:
        names = sorted(n for n in os.listdir(results_dir)
                       if n.startswith("run_") and n.endswith(".json"))
    except OSError as exc:
        print(f"error: cannot read results dir: {exc}", file=sys.stderr)
        return 2
    if not names:
        print(f"error: no run files in {results_dir}", file=sys.stderr)
        return 2
    by_variant: dict = {}
    try:
        for name in names:
            doc = _load_run_file(os.path.join(results_dir, name))
            by_variant.setdefault(doc["variant"], []).append(
                {"variant": doc["variant"], "display": doc.get("display", doc["variant"]),
                 "seed": doc["seed"], "metrics": doc["metrics"]})
    except CliConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    rows = _summary_rows(by_variant)
    if fmt == "csv":
        sys.stdout.write(_summary_csv(rows))
    else:
        sys.stdout.write(_format_table(rows))
        _atomic_write(os.path.join(results_dir, "report.csv"), _summary_csv(rows))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="srkocl",
        description="Online continual-learning experiments: replay, pooled-feature "
                    "distillation, channel attention.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run every (variant, seed) job in a config")
    p_run.add_argument("--config", required=True, help="path to a JSON experiment config")
    sub.add_parser("verify", help="run the numerical verification battery")
    p_rep = sub.add_parser("report", help="aggregate run files into a table")
    p_rep.add_argument("--dir", required=True, help="directory containing run_*.json files")
    p_rep.add_argument("--format", choices=("table", "csv"), default="table")
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config)
    if args.command == "verify":
        return cmd_verify()
    return cmd_report(args.dir, args.format)


if __name__ == "__main__":
    sys.exit(main())
