"""Command line front end.

Subcommands: gen, audit, debias {rmv-all|rmv-one|rmv-rand},
split {equal|adjusted|threshold}, train, eval, report, gradcheck, run.
Config files are flat JSON; command line flags override file values.

Exit codes: 0 success, 2 validation failure (bad inputs, formats or
arguments), 3 stage failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audit as audit_mod
from . import causal, debias, metrics, relevance, splitter, synth
from . import model as model_mod
from .core import (
    FeatureFileError,
    Manifest,
    ManifestError,
    load_features,
    load_manifest,
    save_manifest,
    validate,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3

METRIC_COLUMNS = [
    "ndcg_t2v", "ndcg_v2t", "ndcg_avg",
    "map_t2v", "map_v2t", "map_avg",
    "r1", "r5", "r10", "medr", "mnr", "rsum",
]
LOWER_BETTER = {"medr", "mnr"}


class ValidationFailure(Exception):
    """Bad inputs or configuration; maps to exit code 2."""


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationFailure(f"cannot read config {path}: {e}") from None


def _load_inputs(train_path, test_path, features_path):
    train = load_manifest(train_path)
    test = load_manifest(test_path) if test_path else None
    features = load_features(features_path) if features_path else None
    for name, manifest in (("train", train), ("test", test)):
        if manifest is not None and features is not None:
            report = validate(manifest, features)
            if not report.ok:
                raise ValidationFailure(f"{name} manifest fails validation: {report.issues[0]}")
    return train, test, features


def _train_config(args, file_cfg: dict | None = None) -> model_mod.TrainConfig:
    cfg = dict(file_cfg or {})
    for key in ("epochs", "batch_size", "learning_rate", "momentum", "margin",
                "negative_strategy", "seed", "d"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    try:
        return model_mod.TrainConfig(**cfg)
    except (TypeError, ValueError) as e:
        raise ValidationFailure(f"bad train config: {e}") from None


def _report_row(report: metrics.MetricsReport) -> dict[str, float]:
    return {
        "ndcg_t2v": 100.0 * report.t2v.ndcg,
        "ndcg_v2t": 100.0 * report.v2t.ndcg,
        "ndcg_avg": 100.0 * report.ndcg_avg,
        "map_t2v": 100.0 * report.t2v.map,
        "map_v2t": 100.0 * report.v2t.map,
        "map_avg": 100.0 * report.map_avg,
        "r1": report.t2v.r1,
        "r5": report.t2v.r5,
        "r10": report.t2v.r10,
        "medr": float(report.t2v.med_rank),
        "mnr": report.t2v.mean_rank,
        "rsum": report.t2v.rsum,
    }


def _upsert_results(path: Path, rows: list[dict]) -> None:
    """Insert-or-replace rows keyed by (method, seed); file bytes are deterministic."""
    existing: dict[tuple[str, int], dict] = {}
    if path.exists():
        with open(path, newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                existing[(row["method"], int(row["seed"]))] = row
    for row in rows:
        existing[(row["method"], int(row["seed"]))] = {k: str(v) for k, v in row.items()}
    header = ["method", "seed"] + METRIC_COLUMNS
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for key in sorted(existing, key=lambda k: (k[0], k[1])):
            row = existing[key]
            writer.writerow([row["method"], row["seed"]] + [
                f"{float(row[c]):.6f}" for c in METRIC_COLUMNS
            ])


def _evaluate_matrix(sim, test: Manifest, n_r, map_threshold) -> metrics.MetricsReport:
    classes = relevance.manifest_classes(test)
    rel = relevance.relevancy_matrix(classes, classes)
    return metrics.evaluate(sim, rel, n_r=n_r, map_threshold=map_threshold)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_gen(args) -> int:
    cfg = dict(_load_json(args.config)) if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        gen_config = synth.GenConfig(**cfg)
    except (TypeError, ValueError) as e:
        raise ValidationFailure(f"bad generator config: {e}") from None
    paths = synth.write_benchmark(gen_config, args.out)
    print(f"wrote benchmark to {args.out} ({', '.join(p.name for p in paths.values())})")
    return EXIT_OK


def cmd_audit(args) -> int:
    train, test, features = _load_inputs(args.train, args.test, args.features)
    report = audit_mod.write_audit_report(train, test, args.out)
    print(
        f"{report['n_common_classes']} common classes of {report['n_classes']}; "
        f"exceed counts: {report['exceed_counts']}"
    )
    return EXIT_OK


def cmd_debias(args) -> int:
    train, test, _ = _load_inputs(args.train, getattr(args, "test", None), None)
    if args.mode == "rmv-rand":
        pruned, log = debias.rmv_rand(train, args.n, args.seed or 0)
    elif args.mode == "rmv-one":
        if test is None:
            raise ValidationFailure("rmv-one needs --test")
        pruned, log = debias.rmv_one(train, test, (args.verb, args.noun), args.delta, args.alpha)
    else:
        if test is None:
            raise ValidationFailure("rmv-all needs --test")
        pruned, log = debias.rmv_all(train, test, args.delta, args.alpha)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_manifest(pruned, out / "train_pruned.jsonl")
    debias.write_removal_log(log, out / "removal_log.json")
    print(f"removed {log.total_removed} clips from {log.classes_touched} classes")
    return EXIT_OK


def _make_plan(args, train: Manifest, test: Manifest | None) -> splitter.SplitPlan:
    if args.mode == "equal":
        return splitter.equal_splits(train, args.m)
    if args.mode == "adjusted":
        th = args.th
        if args.from_test_mean:
            if test is None:
                raise ValidationFailure("--from-test-mean needs --test")
            th = splitter.test_mean_th(train, test)
        if th is None:
            raise ValidationFailure("adjusted split needs --th or --from-test-mean")
        return splitter.adjusted_splits(train, args.m, th)
    cut = args.cut
    if args.from_test_mean:
        if test is None:
            raise ValidationFailure("--from-test-mean needs --test")
        cut = float(np.mean(test.frame_lengths()))
    if cut is None:
        raise ValidationFailure("threshold split needs --cut or --from-test-mean")
    return splitter.threshold_split(train, cut)


def cmd_split(args) -> int:
    train, test, _ = _load_inputs(args.train, getattr(args, "test", None), None)
    plan = _make_plan(args, train, test)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, part in enumerate(splitter.materialize(train, plan)):
        save_manifest(part, out / f"part_{k}.jsonl")
    splitter.save_plan(plan, out / "plan.json")
    print(f"split {len(train.clips)} clips into {plan.sizes}")
    return EXIT_OK


def cmd_train(args) -> int:
    train, _, features = _load_inputs(args.train, None, args.features)
    config = _train_config(args, _load_json(args.config) if args.config else None)
    vocab = None
    if args.vocab_from:
        vocab = model_mod.build_vocab(load_manifest(args.vocab_from))
    params = model_mod.train(train, features, config, vocab=vocab)
    model_mod.save_params(params, args.out)
    print(f"trained on {len(train.clips)} clips, wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    test, _, features = _load_inputs(args.test, None, args.features)
    models = [model_mod.load_params(p) for p in args.models]
    matrices = causal.split_similarity_matrices(models, test, features)
    if len(matrices) == 1:
        sim = matrices[0]
    else:
        if args.weights == "proportional":
            if not args.plan:
                raise ValidationFailure("proportional weights need --plan for split sizes")
            sizes = splitter.load_plan(args.plan).sizes
        else:
            sizes = [1] * len(matrices)
        spec = causal.FusionSpec(
            weight_mode="uniform_sum" if args.weights == "uniform" else "proportional",
            split_sizes=sizes,
            model_refs=[str(p) for p in args.models],
        )
        sim = causal.fuse(matrices, spec)
    report = _evaluate_matrix(sim, test, args.n_r, args.map_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(
        json.dumps({"method": args.label, "seed": args.seed or 0, **report.to_dict()}, indent=2) + "\n",
        encoding="utf-8",
    )
    row = {"method": args.label, "seed": args.seed or 0, **_report_row(report)}
    _upsert_results(out / "results.csv", [row])
    if args.save_matrix:
        from .core import save_features

        save_features(sim.values, out / "fused_t2v.fvb")
        ids = {"queries": test.clip_ids(), "gallery": test.clip_ids()}
        (out / "fused_t2v.fvb.ids.json").write_text(json.dumps(ids, indent=2) + "\n", encoding="utf-8")
    print(f"ndcg_avg={100 * report.ndcg_avg:.2f} map_avg={100 * report.map_avg:.2f}")
    return EXIT_OK


def _summary_rows(rows: list[dict]) -> list[dict]:
    by_method: dict[str, list[dict]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    baseline_means = {}
    if "baseline" in by_method:
        for col in METRIC_COLUMNS:
            baseline_means[col] = float(np.mean([float(r[col]) for r in by_method["baseline"]]))
    out = []
    for method in sorted(by_method):
        group = by_method[method]
        summary: dict[str, object] = {"method": method, "seeds": len(group)}
        for col in METRIC_COLUMNS:
            vals = [float(r[col]) for r in group]
            summary[f"{col}_mean"] = float(np.mean(vals))
            summary[f"{col}_min"] = float(np.min(vals))
            summary[f"{col}_max"] = float(np.max(vals))
            summary[f"{col}_best"] = float(np.min(vals) if col in LOWER_BETTER else np.max(vals))
        for col in ("ndcg_avg", "map_avg"):
            if baseline_means:
                summary[f"delta_{col}"] = summary[f"{col}_mean"] - baseline_means[col]
            else:
                summary[f"delta_{col}"] = ""
        out.append(summary)
    return out


def cmd_report(args) -> int:
    path = Path(args.results)
    if not path.exists():
        raise ValidationFailure(f"no results file at {path}")
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValidationFailure("results file has no rows")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summaries = _summary_rows(rows)
    stat_cols = ["mean", "min", "max"] + (["best"] if args.best else [])
    header = ["method", "seeds"]
    for col in METRIC_COLUMNS:
        header += [f"{col}_{s}" for s in stat_cols]
    header += ["delta_ndcg_avg", "delta_map_avg"]
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for s in summaries:
            row = [s["method"], s["seeds"]]
            for col in METRIC_COLUMNS:
                row += [f"{s[f'{col}_{stat}']:.6f}" for stat in stat_cols]
            row += [
                f"{s['delta_ndcg_avg']:.6f}" if s["delta_ndcg_avg"] != "" else "",
                f"{s['delta_map_avg']:.6f}" if s["delta_map_avg"] != "" else "",
            ]
            writer.writerow(row)
    for col in ("ndcg_avg", "map_avg", "r10"):
        with open(out / f"series_{col}.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["method", "seed", col])
            for row in sorted(rows, key=lambda r: (r["method"], int(r["seed"]))):
                writer.writerow([row["method"], row["seed"], f"{float(row[col]):.6f}"])
    print(f"summarised {len(rows)} rows into {out / 'summary.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    d, dim, b, m = args.d, args.feature_dim, args.batch_size, 4
    vocab = [f"tok_{i}" for i in range(12)]
    params = model_mod.init_params(vocab, d, dim, seed=args.seed or 0)
    config = model_mod.TrainConfig(
        batch_size=b, d=d, negative_strategy=args.negative_strategy, seed=args.seed or 0
    )
    batch = []
    for _ in range(b):
        frames = rng.normal(size=(m, dim))
        caption = (
            (vocab[rng.integers(6)], "action"),
            (vocab[6 + rng.integers(6)], "entity"),
        )
        batch.append((frames, caption))
    err = model_mod.grad_check(params, batch, config, h=args.h)
    print(f"max relative gradient error: {err:.3e}")
    return EXIT_OK if err <= 1e-4 else EXIT_STAGE


# ---------------------------------------------------------------------------
# experiment runner


def _run_method(method: str, spec: dict, train_m, test_m, features, config, jobs: int):
    eval_cfg = spec.get("eval", {})
    weights = eval_cfg.get("weights", "uniform_sum")
    if weights == "uniform":
        weights = "uniform_sum"
    if method == "baseline":
        params = model_mod.train(train_m, features, config)
        return model_mod.similarity_matrix(params, test_m, test_m, features)
    if method == "rmv_all":
        d = spec.get("debias", {})
        pruned, _ = debias.rmv_all(train_m, test_m, d.get("delta", 10.0), d.get("alpha", 60))
        params = model_mod.train(pruned, features, config, vocab=model_mod.build_vocab(train_m))
        return model_mod.similarity_matrix(params, test_m, test_m, features)
    if method == "rmv_rand":
        d = spec.get("debias", {})
        n = d.get("n")
        if n is None:
            # match RmvAll's removal count under the same (delta, alpha)
            _, log = debias.rmv_all(train_m, test_m, d.get("delta", 10.0), d.get("alpha", 60))
            n = log.total_removed
        pruned, _ = debias.rmv_rand(train_m, n, config.seed)
        params = model_mod.train(pruned, features, config, vocab=model_mod.build_vocab(train_m))
        return model_mod.similarity_matrix(params, test_m, test_m, features)
    if method == "ensemble":
        m = int(spec.get("ensemble_size", 2))
        member_seeds = [config.seed * 1000 + k for k in range(m)]
        return causal.ensemble(train_m, test_m, features, config, member_seeds)
    if method == "causal":
        split_cfg = spec.get("split")
        if not split_cfg:
            raise ValidationFailure("causal method needs a split config")
        ns = argparse.Namespace(
            mode=split_cfg.get("method", "adjusted"),
            m=int(split_cfg.get("m", 2)),
            th=split_cfg.get("th"),
            cut=split_cfg.get("cut"),
            from_test_mean=bool(split_cfg.get("from_test_mean", False)),
        )
        plan = _make_plan(ns, train_m, test_m)
        return causal.causal_similarity(train_m, test_m, features, config, plan, weights, jobs=jobs)
    raise ValidationFailure(f"unknown method '{method}'")


def run_spec(spec: dict, jobs: int = 1) -> Path:
    """Execute one experiment spec; returns the results.csv path."""
    method = spec.get("method")
    if method not in ("baseline", "rmv_all", "rmv_rand", "ensemble", "causal"):
        raise ValidationFailure(f"unknown method '{method}'")
    out = Path(spec.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "INCOMPLETE"

    data = spec.get("data", {})
    stage = "load"
    try:
        marker.write_text(f"stage: {stage}\n")
        if "gen" in data:
            stage = "gen"
            gen_cfg = synth.GenConfig(**data["gen"])
            train_m, test_m, features, _ = synth.generate(gen_cfg)
        else:
            train_m, test_m, features = _load_inputs(
                data["train"], data["test"], data["features"]
            )
        base_config = model_mod.TrainConfig(**spec.get("train", {}))
        eval_cfg = spec.get("eval", {})
        rows = []
        for seed in spec.get("seeds", [base_config.seed]):
            stage = f"{method} seed {seed}"
            config = replace(base_config, seed=int(seed))
            sim = _run_method(method, spec, train_m, test_m, features, config, jobs)
            report = _evaluate_matrix(
                sim, test_m, eval_cfg.get("n_r"), eval_cfg.get("map_threshold", 1.0)
            )
            rows.append({"method": method, "seed": int(seed), **_report_row(report)})
        stage = "write"
        _upsert_results(out / "results.csv", rows)
    except (ManifestError, FeatureFileError, ValidationFailure):
        raise
    except Exception as e:
        raise RuntimeError(f"stage '{stage}' failed: {e}") from e
    marker.unlink(missing_ok=True)
    return out / "results.csv"


def cmd_run(args) -> int:
    spec = _load_json(args.spec)
    path = run_spec(spec, jobs=args.jobs)
    print(f"results written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framebias", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("audit", help="audit train/test frame-length discrepancy")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--features")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_audit)

    p = sub.add_parser("debias", help="prune the training set")
    p.add_argument("mode", choices=["rmv-all", "rmv-one", "rmv-rand"])
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("--delta", type=float, default=10.0)
    p.add_argument("--alpha", type=int, default=60)
    p.add_argument("--verb", type=int)
    p.add_argument("--noun", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_debias)

    p = sub.add_parser("split", help="partition the training set by frame length")
    p.add_argument("mode", choices=["equal", "adjusted", "threshold"])
    p.add_argument("--train", required=True)
    p.add_argument("--test")
    p.add_argument("-M", "--m", type=int, default=2)
    p.add_argument("--th", type=float)
    p.add_argument("--cut", type=float)
    p.add_argument("--from-test-mean", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_split)

    p = sub.add_parser("train", help="train the two-tower matcher")
    p.add_argument("--train", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--vocab-from", help="manifest supplying the shared vocabulary")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--negative-strategy", dest="negative_strategy", choices=["hardest", "all"])
    p.add_argument("--seed", type=int)
    p.add_argument("-d", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a test corpus and compute metrics")
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--weights", choices=["uniform", "proportional"], default="uniform")
    p.add_argument("--plan", help="plan.json supplying split sizes")
    p.add_argument("--n-r", dest="n_r", type=int)
    p.add_argument("--map-threshold", dest="map_threshold", type=float, default=1.0)
    p.add_argument("--label", default="eval")
    p.add_argument("--seed", type=int)
    p.add_argument("--save-matrix", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("report", help="summarise results.csv across seeds")
    p.add_argument("--results", required=True)
    p.add_argument("--best", action="store_true", help="also report best-of-seeds columns")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=6)
    p.add_argument("-d", type=int, default=8)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=10)
    p.add_argument("--negative-strategy", dest="negative_strategy",
                   choices=["hardest", "all"], default="hardest")
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("run", help="run an experiment spec end to end")
    p.add_argument("--spec", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(handler=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ManifestError, FeatureFileError, ValidationFailure, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"stage failure: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
