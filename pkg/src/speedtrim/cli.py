"""Command-line entry point wiring the modules into reproducible pipelines.

Exit codes: 0 ok, 2 usage, 3 data error, 4 model error.  Logs go to
stderr; data goes to files.  Every artifact-producing subcommand writes a
manifest.json (config hash, seed, input checksums) next to its outputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from . import evaluate, heuristics, label, modelio, synth, traceio
from .config import RunConfig
from .core import ValidationError
from .engine import GuardConfig, Policy, run_trace
from .gbdt import train_gbdt
from .mlp import train_mlp
from .modelio import ModelFormatError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: str, command: str, config: RunConfig,
                    inputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config_hash": config.hash(),
        "seed": config.seed,
        "inputs": {os.path.basename(p): _sha256(p) for p in sorted(inputs)},
    }
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        fh.write(config.to_json())


def _load_config(args) -> RunConfig:
    config = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _corpus_inputs(corpus_dir: str) -> list[str]:
    return [os.path.join(corpus_dir, name) for name in ("index.csv", "manifest.csv")
            if os.path.exists(os.path.join(corpus_dir, name))]


def cmd_synth(args) -> int:
    config = _load_config(args)
    spec = config.genspec
    overrides = {"seed": config.seed}
    if args.n is not None:
        overrides["n_traces"] = args.n
    if args.mode:
        overrides["mode"] = args.mode
    if args.hard_fraction is not None:
        overrides["hard_fraction"] = args.hard_fraction
    if args.preset:
        spec = synth.preset_spec(args.preset)
    spec = dataclasses.replace(spec, **overrides)
    config = dataclasses.replace(config, genspec=spec)
    corpus = synth.gen_corpus(spec, args.out)
    _write_manifest(args.out, "synth", config, _corpus_inputs(args.out))
    _log(f"generated {len(corpus)} traces under {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    config = _load_config(args)
    files = sorted(
        os.path.join(args.input, f) for f in os.listdir(args.input)
        if f.endswith(".jsonl")
    ) if os.path.isdir(args.input) else [args.input]
    if not files:
        _log(f"no .jsonl files under {args.input}")
        return EXIT_DATA

    def produce():
        for path in files:
            default_id = os.path.splitext(os.path.basename(path))[0]
            yield traceio.parse_trace(path, default_id=default_id), "ingested"

    traceio.write_corpus(args.out, produce())
    _write_manifest(args.out, "ingest", config, files)
    _log(f"ingested {len(files)} traces into {args.out}")
    return EXIT_OK


def cmd_train_regressor(args) -> int:
    config = _load_config(args)
    params = dataclasses.replace(config.gbdt, seed=config.seed)
    if args.trees:
        params = dataclasses.replace(params, n_trees=args.trees)
    if args.depth:
        params = dataclasses.replace(params, max_depth=args.depth)
    corpus = traceio.read_corpus(args.corpus)
    X, y, _ = label.build_regression_dataset(corpus, config.stride_ms)
    _log(f"training regressor on {len(X)} samples ({params.n_trees} trees)")
    model = train_gbdt(X, y, params)
    modelio.save_model(model, args.out)
    _write_manifest(os.path.dirname(args.out) or ".", "train-regressor",
                    dataclasses.replace(config, gbdt=params),
                    _corpus_inputs(args.corpus))
    _log(f"final training MSE {model.train_mse[-1]:.4f} -> {args.out}")
    return EXIT_OK


def cmd_label(args) -> int:
    config = _load_config(args)
    corpus = traceio.read_corpus(args.corpus)
    regressor = modelio.load_model(args.regressor)
    X, labels, meta = label.build_classification_dataset(
        corpus, regressor, args.epsilon, config.stride_ms)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id", "t_ms", "label"]
                   + [f"feature_{i}" for i in range(X.shape[1])])
        for (tid, t_ms), lab, row in zip(meta, labels, X):
            w.writerow([tid, t_ms, int(lab)] + [repr(v) for v in row])
    _log(f"wrote {len(X)} labeled samples (epsilon={args.epsilon}) to {args.out}")
    return EXIT_OK


def cmd_train_classifier(args) -> int:
    config = _load_config(args)
    corpus = traceio.read_corpus(args.corpus)
    regressor = modelio.load_model(args.regressor)
    params = dataclasses.replace(config.mlp, seed=config.seed)
    if args.epochs:
        params = dataclasses.replace(params, epochs=args.epochs)
    X, labels, _ = label.build_classification_dataset(
        corpus, regressor, args.epsilon, config.stride_ms)
    _log(f"training classifier (epsilon={args.epsilon}) on {len(X)} samples")
    model = train_mlp(X, labels, params)
    out = args.out or f"classifier_eps{int(args.epsilon)}.bin"
    modelio.save_model(model, out)
    _write_manifest(os.path.dirname(out) or ".", "train-classifier",
                    dataclasses.replace(config, mlp=params),
                    _corpus_inputs(args.corpus) + [args.regressor])
    _log(f"final BCE {model.loss_curve[-1]:.4f} -> {out}")
    return EXIT_OK


def _build_policy(args, config: RunConfig, epsilon: float) -> Policy:
    regressor = modelio.load_model(args.regressor)
    classifier_path = args.classifier
    if classifier_path is None:
        classifier_path = os.path.join(args.models_dir,
                                       f"classifier_eps{int(epsilon)}.bin")
    classifier = modelio.load_model(classifier_path)
    guard = config.guard
    if getattr(args, "no_guard", False):
        guard = GuardConfig(enabled=False)
    return Policy(regressor, classifier, epsilon, config.stride_ms, guard=guard)


def cmd_run(args) -> int:
    config = _load_config(args)
    trace = traceio.parse_trace(args.trace)
    policy = _build_policy(args, config, args.epsilon)
    outcome = run_trace(trace, policy)
    print(json.dumps({
        "trace_id": trace.id,
        "stop_time_ms": outcome.stop_time_ms,
        "bytes_at_stop": outcome.bytes_at_stop,
        "estimate_mbps": outcome.estimate_mbps,
        "rel_error": outcome.rel_error,
        "ran_to_completion": outcome.ran_to_completion,
        "reason": outcome.reason,
    }, indent=2))
    return EXIT_OK


def _ml_policies(args, config: RunConfig, epsilons) -> dict:
    regressor = modelio.load_model(args.regressor)
    policies = {}
    for eps in epsilons:
        path = os.path.join(args.models_dir, f"classifier_eps{int(eps)}.bin")
        policies[eps] = Policy(regressor, modelio.load_model(path), eps,
                               config.stride_ms, guard=config.guard)
    return policies


def cmd_sweep(args) -> int:
    config = _load_config(args)
    corpus = traceio.read_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    if args.method == "ml":
        params = [float(p) for p in args.params.split(",")]
        policies = _ml_policies(args, config, params)
        points, records_by_param = evaluate.pareto_sweep(
            corpus, "ml", params, policies=policies, stride_ms=config.stride_ms)
    else:
        if args.method == "static":
            params = [heuristics.parse_size(p) for p in args.params.split(",")]
        else:
            params = [float(p) for p in args.params.split(",")]
        points, records_by_param = evaluate.pareto_sweep(
            corpus, args.method, params, stride_ms=config.stride_ms)
    frontier = evaluate.nondominated(points)
    evaluate.write_frontier_csv(os.path.join(args.out, "frontier.csv"), points, frontier)
    all_records = [r for p in params for r in records_by_param[p]]
    evaluate.write_records_csv(os.path.join(args.out, "records.csv"), all_records)
    _write_manifest(args.out, "sweep", config, _corpus_inputs(args.corpus))
    _log(f"swept {args.method} over {len(params)} parameters -> {args.out}")
    return EXIT_OK


def cmd_select(args) -> int:
    config = _load_config(args)
    corpus = traceio.read_corpus(args.corpus)
    epsilons = [float(e) for e in args.params.split(",")] if args.params else list(config.epsilons)
    policies = _ml_policies(args, config, epsilons)
    _, records_by_param = evaluate.pareto_sweep(
        corpus, "ml", epsilons, policies=policies, stride_ms=config.stride_ms)
    full_records = evaluate.evaluate_method(corpus, "full")
    os.makedirs(args.out, exist_ok=True)
    group_policies = []
    applied = {}
    for strategy in evaluate.STRATEGIES:
        gp = evaluate.select_adaptive(records_by_param, strategy,
                                      constraint_pct=args.constraint)
        group_policies.append(gp)
        applied[strategy] = evaluate.aggregates(
            evaluate.apply_group_policy(records_by_param, full_records, gp))
    evaluate.write_groups_csv(os.path.join(args.out, "groups.csv"),
                              group_policies, applied)
    _write_manifest(args.out, "select", config, _corpus_inputs(args.corpus))
    for strategy in evaluate.STRATEGIES:
        agg = applied[strategy]
        _log(f"{strategy}: transfer {agg['transfer_fraction']:.3f}, "
             f"median error {agg['median_rel_error']:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.records, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        _log("no records")
        return EXIT_DATA
    errors = np.array([float(r["rel_error"]) for r in rows])
    early = sum(int(r["bytes_early"]) for r in rows)
    full = sum(int(r["bytes_full"]) for r in rows)
    print(json.dumps({
        "n": len(rows),
        "median_rel_error": float(np.median(errors)),
        "transfer_fraction": early / full,
        "data_savings": 1.0 - early / full,
        "error_percentiles": {str(p): float(np.percentile(errors, p))
                              for p in (50, 75, 90, 95, 99)},
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run-config file")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--jobs", type=int, default=os.cpu_count(),
                        help="worker cap (results independent of the value)")
    parser = argparse.ArgumentParser(
        prog="speedtrim",
        description="Early termination of speed tests: data, models, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus",
                       parents=[common])
    p.add_argument("--n", type=int)
    p.add_argument("--mode", choices=["balanced", "natural"])
    p.add_argument("--preset", choices=sorted(synth.PRESETS))
    p.add_argument("--hard-fraction", type=float, dest="hard_fraction")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate and import external traces", parents=[common])
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-regressor", help="fit the throughput regressor", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--trees", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_regressor)

    p = sub.add_parser("label", help="emit a labeled classification dataset", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train-classifier", help="fit the stop classifier", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("run", help="replay one trace through a policy", parents=[common])
    p.add_argument("--trace", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--classifier")
    p.add_argument("--models-dir", dest="models_dir")
    p.add_argument("--epsilon", type=float, default=15.0)
    p.add_argument("--no-guard", action="store_true", dest="no_guard")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Pareto sweep of one method", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--method", required=True,
                   choices=["static", "bbr", "tsh", "cis", "ml"])
    p.add_argument("--params", required=True, help="comma-separated values")
    p.add_argument("--regressor")
    p.add_argument("--models-dir", dest="models_dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select", help="adaptive per-group parameter selection", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--models-dir", dest="models_dir", required=True)
    p.add_argument("--params", help="epsilon list, comma-separated")
    p.add_argument("--constraint", type=float, default=20.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("report", help="aggregate a records.csv", parents=[common])
    p.add_argument("--records", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelFormatError as exc:
        _log(f"model error: {exc}")
        return EXIT_MODEL
    except (traceio.ParseError, ValidationError, FileNotFoundError, ValueError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
