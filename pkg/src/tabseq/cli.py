"""Command-line interface.

Each subcommand consumes and produces files so pipeline stages can be rerun
independently: generate -> preprocess -> (pretrain) -> train/finetune ->
evaluate -> report. Rank metrics are printed on the x100 scale; JSON output
stores them unscaled.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench
from .errors import TabseqError
from .metrics import f1 as f1_score
from .metrics import rank_metrics, rmse
from .models import ModelSpec, build_model
from .nn import load_checkpoint
from .preprocess import PreprocessArtifact, fit_preprocess
from .schema import Dataset, Schema, impute_missing, load_csv, make_windows, save_csv
from .synthgen import GenConfig, generate_fraud_dataset, generate_regression_dataset
from .training import (
    TrainConfig,
    fine_tune,
    load_preset,
    predict_scores,
    preset_train_config,
    pretrain_mlm,
    save_pretrained,
    split_entity_names,
)


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def _load_data(args) -> Dataset:
    schema = Schema.load(args.schema)
    return impute_missing(load_csv(args.data, schema))


def _train_entities(d: Dataset, args) -> set:
    train, _, _ = split_entity_names({r.entity for r in d.records},
                                     args.val_fraction, args.test_fraction, args.seed)
    return train


def cmd_generate(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = GenConfig.from_json(json.load(fh))
    gen = generate_fraud_dataset if args.task == "fraud" else generate_regression_dataset
    dataset = gen(cfg)
    os.makedirs(args.out, exist_ok=True)
    save_csv(dataset, os.path.join(args.out, "data.csv"))
    dataset.schema.save(os.path.join(args.out, "schema.json"))
    print(f"wrote {len(dataset)} records for {cfg.entities} entities to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    dataset = _load_data(args)
    train_set = _train_entities(dataset, args)
    train_data = Dataset(dataset.schema,
                         tuple(r for r in dataset.records if r.entity in train_set))
    artifact = fit_preprocess(train_data, bins=args.bins)
    artifact.save(args.out)
    print(f"vocabulary size {artifact.vocab.size}, hash {artifact.content_hash()[:12]}")
    return 0


def _windows_and_artifact(args, rule):
    dataset = _load_data(args)
    artifact = PreprocessArtifact.load(args.artifact)
    windows = make_windows(dataset, args.window, args.stride, rule)
    return dataset, artifact, windows


def cmd_pretrain(args) -> int:
    preset = load_preset(args.preset)
    args.window = args.window or preset["window_size"]
    args.stride = args.stride or preset.get("stride") or 1
    dataset, artifact, windows = _windows_and_artifact(args, "none")
    family = bench._PRESET_FAMILY[preset["architecture"]]
    keep_raw = family == "hierarchical_joint"
    ids, raw = bench._token_inputs(windows, artifact.schema, artifact, keep_raw)
    spec = ModelSpec(family=family, n=args.window, m=artifact.schema.n_features,
                     hidden=args.hidden or preset["hidden_units"],
                     heads=args.heads or preset["attention_heads"],
                     dropout=preset["dropout"], head="mlm")
    cfg = preset_train_config(preset, seed=args.seed, epochs=args.epochs, patience=None)
    model = build_model(spec, seed=args.seed, vocab=artifact.vocab)
    model, history = pretrain_mlm(model, ids, raw, cfg)
    save_pretrained(args.out, model, artifact, args.seed)
    history.to_csv(args.out + ".history.csv")
    print(f"pretrained {family} on {len(ids)} windows; "
          f"final MLM loss {history.train_loss[-1]:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = bench.load_experiment_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for arm in cfg["arms"]:
        if args.upsample is not None:
            arm["upsample"] = args.upsample
        if args.smote_k is not None:
            arm["smote_k"] = args.smote_k
        if args.target_ratio is not None:
            arm["target_ratio"] = args.target_ratio
        if args.tower_mask is not None:
            arm["tower_mask"] = args.tower_mask
        if args.preset is not None:
            arm["preset"] = args.preset
    report = bench.run_experiment(cfg, args.out)
    _print_arm_table(report)
    return 0


def cmd_finetune(args) -> int:
    rule = "any_positive" if args.task == "fraud" else "last_target"
    dataset, artifact, windows = _windows_and_artifact(args, rule)
    from .training import split_entities

    train_w, val_w, _ = split_entities(windows, args.val_fraction,
                                       args.test_fraction, args.seed)
    header, _ = load_checkpoint(args.checkpoint)
    keep_raw = header["model_spec"]["family"] == "hierarchical_joint"
    train_inputs = bench._token_inputs(train_w, artifact.schema, artifact, keep_raw)
    val_inputs = bench._token_inputs(val_w, artifact.schema, artifact, keep_raw)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size,
                      epochs=args.epochs, seed=args.seed)
    head = "binary" if args.task == "fraud" else "regression"
    model, history = fine_tune(args.checkpoint, (train_inputs, bench._labels(train_w)),
                               (val_inputs, bench._labels(val_w)), cfg, artifact,
                               head=head)
    from .nn import save_checkpoint

    save_checkpoint(args.out, model.state(), model.spec.to_json(),
                    vocab_hash=artifact.content_hash(), seed=args.seed)
    history.to_csv(args.out + ".history.csv")
    print(f"fine-tuned on {len(train_w)} windows; best val loss "
          f"{np.nanmin(history.val_loss):.4f}")
    return 0


def cmd_evaluate(args) -> int:
    rule = "any_positive" if args.task == "fraud" else "last_target"
    dataset, artifact, windows = _windows_and_artifact(args, rule)
    header, state = load_checkpoint(args.checkpoint)
    spec = ModelSpec.from_json(header["model_spec"])
    token_path = spec.family.startswith("hierarchical")
    model = build_model(spec, seed=0, vocab=artifact.vocab if token_path else None)
    model.load_state(state)
    if token_path:
        inputs = bench._token_inputs(windows, artifact.schema, artifact,
                                     spec.family == "hierarchical_joint")
    else:
        inputs = bench._feature_inputs(windows, artifact.schema, artifact)
    y = bench._labels(windows)
    scores = predict_scores(model, inputs)
    result = {}
    if args.task == "fraud":
        p, r, s = f1_score(scores >= 0.5, y)
        rm = rank_metrics(scores, y)
        result = {"precision": p, "recall": r, "f1": s, "gini": rm.gini,
                  "capture_at_4": rm.capture_at_4, "metric_m": rm.metric_m}
        print(f"precision {p:.3f}  recall {r:.3f}  F1 {s:.3f}")
        print(f"Gini {100 * rm.gini:.2f}  capture@4% {100 * rm.capture_at_4:.2f}  "
              f"M {100 * rm.metric_m:.2f}")
    else:
        result = {"rmse": rmse(scores, y)}
        print(f"RMSE {result['rmse']:.4f}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = bench.load_experiment_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    report = bench.ablate_towers(cfg, args.out)
    _print_arm_table(report)
    return 0


def cmd_sweep(args) -> int:
    cfg = bench.load_experiment_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    with open(args.grid, encoding="utf-8") as fh:
        grid = json.load(fh)
    report = bench.sweep(cfg, grid, args.out, budget=args.budget)
    best = report["deterministic"]["best"]
    print(f"best point {best['point']} (val metric {best['val_metric']:.4f})")
    return 0


def cmd_report(args) -> int:
    with open(args.report, encoding="utf-8") as fh:
        report = json.load(fh)
    _print_arm_table(report)
    if args.out:
        bench.write_report(report, args.out)
    return 0


def _print_arm_table(report: dict) -> None:
    arms = report["deterministic"]["arms"]
    print(f"{'arm':<24}{'prec':>7}{'rec':>7}{'F1':>8}{'Gini':>8}{'cap@4%':>8}"
          f"{'M':>8}{'RMSE':>10}")
    for name, res in arms.items():
        def fmt(key, scale=1.0, width=7, digits=3):
            v = res.get(key)
            if v is None or (isinstance(v, float) and np.isnan(v)):
                return " " * (width - 1) + "-"
            return f"{scale * v:>{width}.{digits}f}"

        print(f"{name:<24}{fmt('precision')}{fmt('recall')}{fmt('f1', width=8)}"
              f"{fmt('gini', 100.0, 8, 2)}{fmt('capture_at_4', 100.0, 8, 2)}"
              f"{fmt('metric_m', 100.0, 8, 2)}{fmt('rmse', 1.0, 10, 4)}")
        if res.get("tie_warning"):
            print(f"  warning: >0.1% of {name} scores are tied; "
                  "rank metrics depend on stable input order")


def _add_common_data_args(p):
    p.add_argument("--data", required=True, help="CSV data file")
    p.add_argument("--schema", required=True, help="schema JSON file")
    p.add_argument("--artifact", required=True, help="preprocessing artifact JSON")
    p.add_argument("--task", choices=("fraud", "regression"), default="fraud")
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--stride", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.15, dest="val_fraction")
    p.add_argument("--test-fraction", type=float, default=0.15, dest="test_fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabseq",
        description="Benchmark transformer families on sequential tabular data.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS/OpenMP thread pools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="generator config JSON")
    p.add_argument("--task", choices=("fraud", "regression"), default="fraud")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("preprocess", help="fit quantizers/vocabulary/stats")
    p.add_argument("--data", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.15, dest="val_fraction")
    p.add_argument("--test-fraction", type=float, default=0.15, dest="test_fraction")
    p.add_argument("--out", required=True, help="artifact JSON path")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("pretrain", help="masked-cell pretraining")
    _add_common_data_args(p)
    p.add_argument("--preset", required=True)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_pretrain, window=None, stride=None)

    p = sub.add_parser("train", help="run all arms of an experiment config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", default=None, help="preset override for every arm")
    p.add_argument("--upsample", choices=("smote", "duplicate", "none"), default=None)
    p.add_argument("--smote-k", type=int, default=None, dest="smote_k")
    p.add_argument("--target-ratio", type=float, default=None, dest="target_ratio")
    p.add_argument("--tower-mask", choices=("both", "time", "feature"),
                   default=None, dest="tower_mask")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a pretrained checkpoint")
    _add_common_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=64, dest="batch_size")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--out", required=True, help="fine-tuned checkpoint path")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    _add_common_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="twin-tower mask ablation (both/time/feature)")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="grid/random hyperparameter search")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, help="grid JSON: {param: [values]}")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="render a report JSON as a table/CSV")
    p.add_argument("--report", required=True)
    p.add_argument("--out", default=None, help="directory for re-rendered files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads:
        _set_threads(args.threads)
    try:
        return args.func(args)
    except TabseqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
