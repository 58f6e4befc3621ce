"""Command line front end: fit, predict, grid search, operator comparison.

Configuration is a JSON document merged over per-operator tuned
defaults; unknown keys are rejected.  Long-running subcommands journal
each finished job to ``journal.jsonl`` in the output directory and skip
already-journaled jobs on rerun, so interrupted runs resume without
duplicating work.  Exit codes: 0 success, 1 runtime failure, 2
configuration or data validation failure.
"""

import argparse
import csv
import hashlib
import itertools
import json
import os
import sys
import time

import numpy as np

from .datasets import (
    SYNTH_CATALOG,
    DatasetError,
    SplitSpec,
    kfold_indices,
    read_csv_matrix,
    resolve_dataset,
    split_indices,
)
from .evolution import EvolutionConfig, evolve
from .model import load_model, save_model, score_model
from .variation import XO_TYPES, VariationConfig, default_max_dimensionality

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


class ConfigError(ValueError):
    pass


# tuned per-operator defaults used wherever the config does not say
# otherwise
TUNED_DEFAULTS = {
    "standard": {"p_crossover": 0.75, "feedback_gamma": 0.25,
                 "p_feature_xo": 0.75, "softmax_norm": False},
    "resxo": {"p_crossover": 0.75, "feedback_gamma": 0.0,
              "p_feature_xo": 0.5, "softmax_norm": False},
    "stagexo": {"p_crossover": 0.75, "feedback_gamma": 0.25,
                "p_feature_xo": 0.5, "softmax_norm": False},
}

GRID_DEFAULT = {
    "p_crossover": [0.0, 0.25, 0.5, 0.75, 1.0],
    "feedback_gamma": [0.0, 0.25, 0.5, 0.75, 1.0],
    "xo_type": ["standard", "resxo", "stagexo"],
    "p_feature_xo": [0.5, 0.75, 1.0],
    "softmax_norm": [True, False],
}
GRID_KEY_ORDER = ("xo_type", "p_crossover", "feedback_gamma",
                  "p_feature_xo", "softmax_norm")

BASE_DEFAULTS = {
    "dataset": "synth:sum-sq",
    "target": "y",
    "synth_n": 500,
    "synth_seed": 0,
    "test_fraction": 0.25,
    "val_fraction": 0.25,
    "folds": 5,
    "seed": 0,
    "population_size": 100,
    "generations": 50,
    "xo_type": "standard",
    "p_crossover": None,
    "feedback_gamma": None,
    "p_feature_xo": None,
    "softmax_norm": None,
    "max_depth": 6,
    "max_dimensionality": None,
    "lambda": 1e-3,
    "gd_iters": 10,
    "lr": 0.1,
    "out": "mgpr-out",
}

ALL_PROBLEMS = ["synth:" + name for name in sorted(SYNTH_CATALOG)]

EXPERIMENT_EXTRAS = {
    "problems": ALL_PROBLEMS,
    "trials": 1,
    "grid": GRID_DEFAULT,
    "max_jobs": 20000,
    "cv_protocol": "kfold",
    "synth_n": 256,
}

COMPARE_EXTRAS = {
    "problems": ALL_PROBLEMS,
    "trials": 10,
    "xo_types": list(XO_TYPES),
    "synth_n": 256,
}

HISTORY_HEADER = ["generation", "best_train_mse", "median_train_mse",
                  "median_complexity", "median_entanglement", "best_val_mse"]
PREDICTIONS_HEADER = ["row", "prediction"]
RESULTS_HEADER = ["problem", "xo_type", "p_crossover", "feedback_gamma",
                  "p_feature_xo", "softmax_norm", "trial", "fold",
                  "train_mse", "train_r2", "test_mse", "test_r2",
                  "entanglement", "complexity", "seconds"]
BEST_CONFIG_HEADER = ["xo_type", "p_crossover", "feedback_gamma",
                      "p_feature_xo", "softmax_norm", "mean_test_r2",
                      "n_rows"]
COMPARE_HEADER = ["problem", "xo_type", "trial", "train_mse", "train_r2",
                  "test_mse", "test_r2", "entanglement", "complexity",
                  "median_child_entanglement", "seconds"]


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from any JSON-representable parts."""
    text = json.dumps(parts, sort_keys=True, separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


def _load_config_doc(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"no such config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return doc


def resolve_config(args, extras=None) -> dict:
    """Merge defaults, tuned per-operator values, document, and flags."""
    defaults = dict(BASE_DEFAULTS)
    if extras:
        defaults.update(extras)
    doc = _load_config_doc(getattr(args, "config", None))
    unknown = sorted(set(doc) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    merged = dict(defaults)
    merged.update(doc)
    if getattr(args, "seed", None) is not None:
        merged["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        merged["out"] = args.out
    if getattr(args, "dataset", None) is not None:
        merged["dataset"] = args.dataset
    if getattr(args, "target", None) is not None:
        merged["target"] = args.target
    xo = merged.get("xo_type")
    if xo is not None:
        if xo not in TUNED_DEFAULTS:
            raise ConfigError(
                f"xo_type must be one of {XO_TYPES}, got {xo!r}")
        for key, value in TUNED_DEFAULTS[xo].items():
            if merged.get(key) is None:
                merged[key] = value
    return merged


def _variation_config(doc: dict, n_attributes: int,
                      overrides=None) -> VariationConfig:
    values = {k: doc[k] for k in ("p_crossover", "feedback_gamma",
                                  "p_feature_xo", "softmax_norm", "xo_type")}
    if overrides:
        values.update(overrides)
    xo = values["xo_type"]
    for key, default in TUNED_DEFAULTS[xo].items():
        if values.get(key) is None:
            values[key] = default
    max_dim = doc["max_dimensionality"]
    if max_dim is None:
        max_dim = default_max_dimensionality(n_attributes)
    return VariationConfig(
        p_crossover=values["p_crossover"],
        p_feature_xo=values["p_feature_xo"],
        xo_type=xo,
        feedback_gamma=values["feedback_gamma"],
        softmax_norm=bool(values["softmax_norm"]),
        max_depth=doc["max_depth"],
        max_dimensionality=max_dim,
    )


def _evolution_config(doc: dict, vcfg: VariationConfig,
                      seed: int) -> EvolutionConfig:
    return EvolutionConfig(
        population_size=doc["population_size"],
        generations=doc["generations"],
        variation=vcfg,
        ridge_lambda=doc["lambda"],
        gd_iters=doc["gd_iters"],
        lr=doc["lr"],
        seed=seed,
    )


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _scores_dict(scores) -> dict:
    return {"mse": float(scores.mse), "r2": float(scores.r2),
            "entanglement": float(scores.entanglement),
            "complexity": int(scores.complexity)}


def cmd_fit(args) -> int:
    try:
        doc = resolve_config(args)
        ds = resolve_dataset(doc["dataset"], doc["target"],
                             doc["synth_n"], doc["synth_seed"])
        seed = int(doc["seed"])
        train_idx, test_idx = split_indices(
            ds.n_samples,
            SplitSpec(doc["test_fraction"], doc["folds"], seed))
        train_full = ds.subset(train_idx)
        test = ds.subset(test_idx)
        sub_idx, val_idx = split_indices(
            train_full.n_samples,
            SplitSpec(doc["val_fraction"], doc["folds"],
                      derive_seed(seed, "val")))
        train = train_full.subset(sub_idx)
        val = train_full.subset(val_idx)
        vcfg = _variation_config(doc, ds.n_attributes)
        cfg = _evolution_config(doc, vcfg, seed)
    except (ConfigError, DatasetError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out = doc["out"]
        os.makedirs(out, exist_ok=True)
        t0 = time.perf_counter()
        model, history = evolve(cfg, train, val, n_jobs=args.jobs,
                                verbose=not args.quiet)
        seconds = time.perf_counter() - t0
        save_model(model, os.path.join(out, "model.json"))
        _write_csv(os.path.join(out, "history.csv"), HISTORY_HEADER,
                   [[r.generation, r.best_train_mse, r.median_train_mse,
                     r.median_complexity, r.median_entanglement,
                     r.best_val_mse] for r in history.records])
        _write_json(os.path.join(out, "split.json"), {
            "dataset": doc["dataset"],
            "seed": seed,
            "train": train_idx[sub_idx].tolist(),
            "val": train_idx[val_idx].tolist(),
            "test": test_idx.tolist(),
        })
        train_scores = score_model(model, train)
        test_scores = score_model(model, test)
        _write_json(os.path.join(out, "scores.json"), {
            "dataset": doc["dataset"],
            "seed": seed,
            "xo_type": vcfg.xo_type,
            "train": _scores_dict(train_scores),
            "test": _scores_dict(test_scores),
            "best_generation": history.best_generation,
            "best_val_mse": float(history.best_val_mse),
            "seconds": seconds,
        })
        if not args.quiet:
            print(f"test_mse={test_scores.mse:.6g} "
                  f"test_r2={test_scores.r2:.6g} "
                  f"complexity={test_scores.complexity} -> {out}")
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cmd_predict(args) -> int:
    try:
        fm = load_model(args.model)
        names, table = read_csv_matrix(args.data)
        missing = [a for a in fm.attribute_names if a not in names]
        if missing:
            raise DatasetError(
                f"{args.data} is missing model attributes: {missing}")
        cols = [names.index(a) for a in fm.attribute_names]
        X = table[:, cols]
    except (FileNotFoundError, json.JSONDecodeError, DatasetError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out = args.out or "mgpr-out"
        os.makedirs(out, exist_ok=True)
        yhat = fm.predict(X)
        path = os.path.join(out, "predictions.csv")
        _write_csv(path, PREDICTIONS_HEADER,
                   [[i, float(v)] for i, v in enumerate(yhat)])
        if not args.quiet:
            print(f"{len(yhat)} predictions -> {path}")
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


class Journal:
    """Append-only jsonl of finished jobs, deduplicated by key."""

    def __init__(self, path):
        self.path = path
        self.done = {}
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        entry = json.loads(line)
                    except json.JSONDecodeError:
                        continue  # torn write from an interrupt
                    if entry.get("status") == "ok":
                        self.done.setdefault(entry["key"], entry["row"])

    def key(self, fields: dict) -> str:
        return json.dumps(fields, sort_keys=True, separators=(",", ":"))

    def record(self, key: str, row: dict) -> None:
        self.done[key] = row
        self._append({"key": key, "status": "ok", "row": row})

    def record_failure(self, key: str, message: str) -> None:
        self._append({"key": key, "status": "error", "error": message})

    def _append(self, entry) -> None:
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _run_single(problem: str, doc: dict, vparams: dict, run_seed: int,
                split_seed: int, fold: int):
    """One evolution run on one train/test partition; returns metrics."""
    ds = resolve_dataset(problem, doc["target"], doc["synth_n"],
                         doc["synth_seed"])
    if fold >= 0:
        parts = kfold_indices(ds.n_samples,
                              SplitSpec(doc["test_fraction"], doc["folds"],
                                        split_seed))
        train_idx, test_idx = parts[fold]
    else:
        train_idx, test_idx = split_indices(
            ds.n_samples,
            SplitSpec(doc["test_fraction"], doc["folds"], split_seed))
    train_full = ds.subset(train_idx)
    test = ds.subset(test_idx)
    sub_idx, val_idx = split_indices(
        train_full.n_samples,
        SplitSpec(doc["val_fraction"], doc["folds"],
                  derive_seed(run_seed, "val")))
    train = train_full.subset(sub_idx)
    val = train_full.subset(val_idx)
    vcfg = _variation_config(doc, ds.n_attributes, overrides=vparams)
    cfg = _evolution_config(doc, vcfg, run_seed)
    t0 = time.perf_counter()
    model, history = evolve(cfg, train, val)
    seconds = time.perf_counter() - t0
    train_scores = score_model(model, train)
    test_scores = score_model(model, test)
    child_ent = history.xo_child_entanglements
    return {
        "train_mse": float(train_scores.mse),
        "train_r2": float(train_scores.r2),
        "test_mse": float(test_scores.mse),
        "test_r2": float(test_scores.r2),
        "entanglement": float(train_scores.entanglement),
        "complexity": int(train_scores.complexity),
        "median_child_entanglement":
            float(np.median(child_ent)) if child_ent else float("nan"),
        "seconds": float(seconds),
    }


def _experiment_job(spec):
    key, problem, doc, vparams, run_seed, split_seed, fold = spec
    try:
        metrics = _run_single(problem, doc, vparams, run_seed, split_seed,
                              fold)
        return key, None, metrics
    except Exception as exc:  # noqa: BLE001 - job isolation
        return key, f"{type(exc).__name__}: {exc}", None


def _run_jobs(specs, journal: Journal, jobs: int, quiet: bool) -> int:
    """Execute pending job specs, journaling results; returns #failures."""
    pending = [s for s in specs if s[0] not in journal.done]
    if not quiet:
        print(f"{len(specs)} jobs, {len(specs) - len(pending)} already done",
              file=sys.stderr)
    failures = 0
    if jobs == 1:
        iterator = map(_experiment_job, pending)
        for i, (key, err, row) in enumerate(iterator):
            if err is None:
                journal.record(key, row)
            else:
                journal.record_failure(key, err)
                failures += 1
            if not quiet:
                print(f"[{i + 1}/{len(pending)}] "
                      f"{'ok' if err is None else 'FAIL'} {key}",
                      file=sys.stderr)
        return failures
    from joblib import Parallel, delayed
    batch = max(jobs * 2, 1)
    done_count = 0
    for start in range(0, len(pending), batch):
        chunk = pending[start:start + batch]
        results = Parallel(n_jobs=jobs)(
            delayed(_experiment_job)(s) for s in chunk)
        for key, err, row in results:
            if err is None:
                journal.record(key, row)
            else:
                journal.record_failure(key, err)
                failures += 1
            done_count += 1
            if not quiet:
                print(f"[{done_count}/{len(pending)}] "
                      f"{'ok' if err is None else 'FAIL'} {key}",
                      file=sys.stderr)
    return failures


def _validate_problems(doc) -> list:
    problems = doc["problems"]
    if not isinstance(problems, list) or not problems:
        raise ConfigError("problems must be a non-empty list")
    for p in problems:
        if p.startswith("synth:"):
            name = p[len("synth:"):]
            if name not in SYNTH_CATALOG:
                known = ", ".join(sorted(SYNTH_CATALOG))
                raise ConfigError(
                    f"unknown synthetic problem {name!r}; known: {known}")
        elif not os.path.exists(p):
            raise ConfigError(f"dataset file not found: {p}")
    return problems


def cmd_experiment(args) -> int:
    try:
        doc = resolve_config(args, EXPERIMENT_EXTRAS)
        problems = _validate_problems(doc)
        trials = int(doc["trials"])
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        grid = dict(GRID_DEFAULT)
        if doc["grid"] is not GRID_DEFAULT:
            user_grid = doc["grid"]
            unknown = sorted(set(user_grid) - set(GRID_DEFAULT))
            if unknown:
                raise ConfigError(f"unknown grid keys: {unknown}")
            grid.update(user_grid)
        for xo in grid["xo_type"]:
            if xo not in XO_TYPES:
                raise ConfigError(f"grid xo_type {xo!r} invalid")
        protocol = doc["cv_protocol"]
        if protocol not in ("kfold", "split"):
            raise ConfigError(
                f"cv_protocol must be 'kfold' or 'split', got {protocol!r}")
        points = [dict(zip(GRID_KEY_ORDER, combo)) for combo in
                  itertools.product(*(grid[k] for k in GRID_KEY_ORDER))]
        n_folds = int(doc["folds"]) if protocol == "kfold" else 1
        total = len(problems) * len(points) * trials * n_folds
        if total > int(doc["max_jobs"]):
            raise ConfigError(
                f"{total} jobs exceed max_jobs={doc['max_jobs']}")
        seed = int(doc["seed"])
    except (ConfigError, DatasetError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out = doc["out"]
        os.makedirs(out, exist_ok=True)
        journal = Journal(os.path.join(out, "journal.jsonl"))
        specs = []
        for problem in problems:
            for point in points:
                for trial in range(trials):
                    split_seed = derive_seed(seed, problem, trial, "split")
                    for fold in range(n_folds):
                        fields = dict(problem=problem, trial=trial,
                                      fold=fold, **point)
                        key = journal.key(fields)
                        run_seed = derive_seed(seed, problem, trial, fold,
                                               *(point[k]
                                                 for k in GRID_KEY_ORDER))
                        specs.append((key, problem, doc, point, run_seed,
                                      split_seed,
                                      fold if protocol == "kfold" else -1))
        failures = _run_jobs(specs, journal, args.jobs, args.quiet)

        rows = []
        for key, problem, _, point, _, _, fold in specs:
            if key not in journal.done:
                continue
            fields = json.loads(key)
            row = journal.done[key]
            rows.append([problem, point["xo_type"], point["p_crossover"],
                         point["feedback_gamma"], point["p_feature_xo"],
                         point["softmax_norm"], fields["trial"],
                         fields["fold"], row["train_mse"], row["train_r2"],
                         row["test_mse"], row["test_r2"],
                         row["entanglement"], row["complexity"],
                         row["seconds"]])
        _write_csv(os.path.join(out, "results.csv"), RESULTS_HEADER, rows)

        best_rows = []
        for xo in grid["xo_type"]:
            best = None
            for point in points:
                if point["xo_type"] != xo:
                    continue
                scores = [journal.done[journal.key(dict(
                    problem=p, trial=t, fold=f, **point))]["test_r2"]
                    for p in problems for t in range(trials)
                    for f in range(n_folds)
                    if journal.key(dict(problem=p, trial=t, fold=f,
                                        **point)) in journal.done]
                if not scores:
                    continue
                mean_r2 = float(np.mean(scores))
                if best is None or mean_r2 > best[0]:
                    best = (mean_r2, point, len(scores))
            if best is not None:
                mean_r2, point, n_rows = best
                best_rows.append([xo, point["p_crossover"],
                                  point["feedback_gamma"],
                                  point["p_feature_xo"],
                                  point["softmax_norm"], mean_r2, n_rows])
        _write_csv(os.path.join(out, "best_config.csv"), BEST_CONFIG_HEADER,
                   best_rows)
        if failures:
            print(f"error: {failures} of {len(specs)} jobs failed",
                  file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def cmd_compare_xo(args) -> int:
    try:
        doc = resolve_config(args, COMPARE_EXTRAS)
        problems = _validate_problems(doc)
        if len(problems) < 2:
            raise ConfigError("compare-xo needs at least 2 problems")
        trials = int(doc["trials"])
        if trials < 1:
            raise ConfigError("trials must be >= 1")
        xo_types = doc["xo_types"]
        if (not isinstance(xo_types, list) or not xo_types
                or any(x not in XO_TYPES for x in xo_types)):
            raise ConfigError(
                f"xo_types must be a non-empty subset of {XO_TYPES}")
        seed = int(doc["seed"])
    except (ConfigError, DatasetError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        out = doc["out"]
        os.makedirs(out, exist_ok=True)
        journal = Journal(os.path.join(out, "journal.jsonl"))
        specs = []
        for problem in problems:
            for trial in range(trials):
                # one split per (problem, trial), shared by operators
                split_seed = derive_seed(seed, problem, trial, "split")
                for xo in xo_types:
                    fields = dict(problem=problem, xo_type=xo, trial=trial)
                    key = journal.key(fields)
                    run_seed = derive_seed(seed, problem, xo, trial)
                    point = dict(xo_type=xo, **TUNED_DEFAULTS[xo])
                    specs.append((key, problem, doc, point, run_seed,
                                  split_seed, -1))
        failures = _run_jobs(specs, journal, args.jobs, args.quiet)

        rows = []
        for key, problem, _, point, _, _, _ in specs:
            if key not in journal.done:
                continue
            fields = json.loads(key)
            row = journal.done[key]
            rows.append([problem, point["xo_type"], fields["trial"],
                         row["train_mse"], row["train_r2"], row["test_mse"],
                         row["test_r2"], row["entanglement"],
                         row["complexity"],
                         row["median_child_entanglement"], row["seconds"]])
        _write_csv(os.path.join(out, "results.csv"), COMPARE_HEADER, rows)
        if failures:
            print(f"error: {failures} of {len(specs)} jobs failed",
                  file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgpr",
        description="Symbolic feature regression via multidimensional GP")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration document")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker count")
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")

    p_fit = sub.add_parser("fit", help="fit one model and write artifacts")
    common(p_fit)
    p_fit.add_argument("--dataset",
                       help="CSV path or synth:<name> (overrides config)")
    p_fit.add_argument("--target", help="target column name")
    p_fit.set_defaults(func=cmd_fit)

    p_pred = sub.add_parser("predict", help="apply a saved model to a CSV")
    common(p_pred)
    p_pred.add_argument("--model", required=True, help="model JSON path")
    p_pred.add_argument("--data", required=True, help="input CSV path")
    p_pred.set_defaults(func=cmd_predict)

    p_exp = sub.add_parser("experiment",
                           help="hyperparameter grid search with CV")
    common(p_exp)
    p_exp.set_defaults(func=cmd_experiment)

    p_cmp = sub.add_parser("compare-xo",
                           help="crossover operator comparison runs")
    common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare_xo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
