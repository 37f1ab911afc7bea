"""Command-line entry point: ``run``, ``verify``, ``plot`` and ``sweep``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import bounds, checkpoint, plots
from .config import (ConfigError, ExperimentConfig, build_datasets, build_loss, build_train_config,
                     layer_sizes, load_config, parse_config)
from .data import head_torso_tail_buckets
from .metrics import ecdf, evaluate
from .scorer import forward, tau_normalize_head
from .trainer import TrainingDiverged, train

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
SUMMARY_KEYS = ("accuracy", "balanced_accuracy", "balanced_error", "auc", "mean_trace_variance")


class UsageError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("MARGINLAB_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MARGINLAB_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"MARGINLAB_THREADS must be a positive integer, got {raw!r}")
    return n


@contextmanager
def mapper():
    n = worker_count()
    if n == 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=n) as pool:
        yield pool.map


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# -- run -------------------------------------------------------------------------


class SeedDiverged(RuntimeError):
    def __init__(self, seed: int, cause: TrainingDiverged):
        super().__init__(f"seed {seed}: {cause}")
        self.seed = seed


def run_seed(cfg: ExperimentConfig, seed: int, base_dir: Path) -> dict:
    try:
        train_set, test_set = build_datasets(cfg.dataset, seed, base_dir)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"dataset: {exc}") from None
    spec = build_loss(cfg.loss, train_set)
    tcfg = build_train_config(cfg.training, seed)
    try:
        result = train(train_set, layer_sizes(cfg, train_set), tcfg, spec)
    except TrainingDiverged as exc:
        raise SeedDiverged(seed, exc) from None
    params = result.params
    if cfg.training.tau > 0 and cfg.training.head == "learned":
        params = type(params)(params.layers, tau_normalize_head(params.head_W, cfg.training.tau), params.head_b)
    if result.centroids is not None:
        Z, F = result.predict(test_set.inputs, tcfg.v2)
    else:
        fwd = forward(params, test_set.inputs)
        Z, F = fwd.embeddings, fwd.logits
    buckets = head_torso_tail_buckets(train_set.counts)
    report = evaluate(Z, F, test_set.labels, train_set.num_classes, buckets=buckets)
    history = [{"epoch": h.epoch, "lr": h.lr, "loss": h.loss, "parts": h.parts} for h in result.history]
    return {"seed": seed, "report": report, "history": history, "params": params,
            "embeddings": Z if Z.shape[1] == 2 else None, "labels": test_set.labels,
            "train_counts": train_set.counts.tolist(), "buckets": buckets}


def aggregate(per_seed: list[dict]) -> dict:
    """Mean and sample standard deviation (0 for a single seed) of each summary metric."""
    keys = sorted({k for s in per_seed for k in s})
    out = {}
    for k in keys:
        vals = np.array([s[k] for s in per_seed if k in s], dtype=float)
        std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        out[k] = {"mean": float(vals.mean()), "std": std, "values": vals.tolist()}
    return out


def write_seed_outputs(out: Path, res: dict, cfg: ExperimentConfig) -> None:
    d = out / f"seed_{res['seed']}"
    rep = res["report"]
    write_json(d / "report.json", {"seed": res["seed"], "config": cfg.dump(), "train_counts": res["train_counts"],
                                   "buckets": res["buckets"], "report": rep.to_dict(), "history": res["history"]})
    write_csv(d / "margins.csv", ["class", "margin"],
              [[k, repr(v)] for k, vs in rep.margins.items() for v in vs])
    rows = []
    for k, vs in rep.margins.items():
        e = ecdf(vs)
        rows += [[k, repr(x), repr(p)] for x, p in zip(e["x"], e["p"])]
    write_csv(d / "margin_cdf.csv", ["class", "margin", "cdf"], rows)
    write_csv(d / "intra.csv", ["class", "d_max"],
              [[k, repr(v)] for k, vs in rep.intra_distances.items() for v in vs])
    checkpoint.save(res["params"], d)
    if res["embeddings"] is not None:
        write_csv(d / "embeddings.csv", ["z_0", "z_1", "y"],
                  [[repr(float(a)), repr(float(b)), int(y)] for (a, b), y in zip(res["embeddings"], res["labels"])])


def run_experiment(cfg: ExperimentConfig, base_dir: Path, out: Path | None = None) -> dict:
    out = Path(out) if out is not None else base_dir / cfg.output_dir
    with mapper() as m:
        results = list(m(lambda s: run_seed(cfg, s, base_dir), cfg.seeds))
    for res in results:
        write_seed_outputs(out, res, cfg)
    summaries = {str(r["seed"]): r["report"].summary() for r in results}
    agg = aggregate(list(summaries.values()))
    write_json(out / "report.json", {"config": cfg.dump(), "seeds": list(cfg.seeds),
                                     "per_seed": summaries, "aggregate": agg})
    header = ["metric", "mean", "std"] + [f"seed_{s}" for s in cfg.seeds]
    write_csv(out / "metrics.csv", header,
              [[k, repr(v["mean"]), repr(v["std"])] + [repr(x) for x in v["values"]] for k, v in agg.items()])
    emit_plots(out)
    return agg


# -- plots -----------------------------------------------------------------------


def emit_plots(report_dir) -> list[Path]:
    """Render SVGs for every ``seed_*/report.json`` under ``report_dir``; the
    first seed provides the per-class distribution figures."""
    root = Path(report_dir)
    seed_dirs = sorted((p for p in root.glob("seed_*") if (p / "report.json").is_file()),
                       key=lambda p: int(p.name.split("_", 1)[1]))
    written = []

    def put(name, text):
        path = root / name
        path.write_text(text)
        written.append(path)

    if (root / "sweep.json").is_file():
        sweep = json.loads((root / "sweep.json").read_text())
        lams = [row["lambda"] for row in sweep["rows"]]
        series = {k: [row[k]["mean"] for row in sweep["rows"]] for k in ("balanced_accuracy", "auc")}
        put("sensitivity.svg", plots.line_svg(lams, series, "Sensitivity to lambda", "lambda", "metric"))
    if not seed_dirs:
        if not written:
            raise FileNotFoundError(f"no reports found under {root}")
        return written
    first = json.loads((seed_dirs[0] / "report.json").read_text())
    rep = first["report"]
    for k, hist in rep["margin_hist"].items():
        put(f"margins_{k}.svg", plots.histogram_svg(hist, f"Margins, class {k}", "margin"))
    put("margin_cdf.svg", plots.cdf_svg({f"class {k}": ecdf(v) for k, v in rep["margins"].items()},
                                        "Margin CDF", "margin"))
    for k, hist in rep["intra_hist"].items():
        put(f"intra_{k}.svg", plots.histogram_svg(hist, f"Max intra-class distance, class {k}", "normalised d_max"))
    bucket_vals = {}
    for d in seed_dirs:
        for b, v in json.loads((d / "report.json").read_text())["report"]["bucket_accuracy"].items():
            bucket_vals.setdefault(b, []).append(v)
    if bucket_vals:
        means = {b: float(np.mean(v)) for b, v in bucket_vals.items()}
        errs = {b: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for b, v in bucket_vals.items()}
        put("buckets.svg", plots.bars_svg(means, "Accuracy by frequency bucket", errors=errs))
    for d in seed_dirs:
        emb = d / "embeddings.csv"
        if emb.is_file():
            with open(emb, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            pts = [(float(r[0]), float(r[1])) for r in rows]
            put(f"embedding_{d.name}.svg", plots.scatter_svg(pts, [int(r[2]) for r in rows],
                                                              f"Embeddings, {d.name.replace('_', ' ')}"))
    return written


# -- sweep -----------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, lambdas: list[float], base_dir: Path) -> None:
    out = base_dir / cfg.output_dir
    rows = []
    for lam in sorted(lambdas):
        doc = cfg.dump()
        doc["loss"]["lam_pull"] = lam
        agg = run_experiment(parse_config(doc), base_dir, out / f"lambda_{lam!r}")
        rows.append({"lambda": lam, **{k: {"mean": agg[k]["mean"], "std": agg[k]["std"]} for k in SUMMARY_KEYS}})
    write_json(out / "sweep.json", {"config": cfg.dump(), "rows": rows})
    write_csv(out / "sweep.csv", ["lambda"] + [f"{k}_{s}" for k in SUMMARY_KEYS for s in ("mean", "std")],
              [[repr(r["lambda"])] + [repr(r[k][s]) for k in SUMMARY_KEYS for s in ("mean", "std")] for r in rows])
    emit_plots(out)


# -- verify ----------------------------------------------------------------------


def run_verify(seed: int, trials: int, out: Path, auc_samples: int = 1_000_000) -> bool:
    with mapper() as m:
        suite = bounds.run_suite(seed, trials, auc_samples=auc_samples, map_fn=m)
    summary = {"seed": seed, "trials": trials, "passed": suite.passed, "coverage": suite.coverage,
               "auc": suite.auc, "failures": [r.to_dict() for r in suite.deterministic_failures]}
    counts = {}
    for r in suite.records:
        c = counts.setdefault(r.check, {"total": 0, "violations": 0, "min_slack": float("inf")})
        c["total"] += 1
        c["violations"] += not r.passed
        c["min_slack"] = min(c["min_slack"], r.slack)
    summary["checks"] = counts
    write_json(out / "verify_report.json", summary)
    write_csv(out / "checks.csv", ["check", "lhs", "rhs", "slack", "passed", "instance"],
              [[r.check, repr(r.lhs), repr(r.rhs), repr(r.slack), int(r.passed), json.dumps(r.instance, sort_keys=True)]
               for r in suite.records])
    for name, c in sorted(counts.items()):
        print(f"{name}: {c['total'] - c['violations']}/{c['total']} ok, min slack {c['min_slack']:.3g}")
    for name, c in suite.coverage.items():
        print(f"{name} coverage: {c['rate']:.4f} (required {c['required']:.4f})")
    for a in suite.auc:
        print(f"gaussian_auc L={a['L']} K={a['K']}: closed {a['closed_form']:.5f} mc {a['monte_carlo']:.5f}")
    for r in suite.deterministic_failures:
        print(f"FAIL {r.check} {json.dumps(r.instance, sort_keys=True)} slack={r.slack!r}", file=sys.stderr)
    return suite.passed


# -- entry point -----------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise argparse.ArgumentTypeError("lambda values must be non-negative")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marginlab", description="Margin and embedding-regularisation lab.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="train and evaluate the configured experiment")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    v = sub.add_parser("verify", help="run the numerical bound and identity checks")
    v.add_argument("--trials", type=_positive_int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default="verify_out")
    v.add_argument("--auc-samples", type=_positive_int, default=1_000_000)
    pl = sub.add_parser("plot", help="render SVG figures from an existing report directory")
    pl.add_argument("report_dir")
    s = sub.add_parser("sweep", help="repeat an experiment over pull weights")
    s.add_argument("config")
    s.add_argument("--lambda", dest="lambdas", type=_float_list, required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            return EXIT_OK if run_verify(args.seed, args.trials, Path(args.out), args.auc_samples) else EXIT_CHECK
        if args.command == "plot":
            for path in emit_plots(args.report_dir):
                print(path)
            return EXIT_OK
        cfg = load_config(args.config)
        base = Path(args.config).resolve().parent
        if args.command == "run":
            out = Path(args.out) if args.out else base / cfg.output_dir
            agg = run_experiment(cfg, base, out)
            for k in SUMMARY_KEYS:
                print(f"{k}: {agg[k]['mean']:.4f} +- {agg[k]['std']:.4f}")
            return EXIT_OK
        run_sweep(cfg, args.lambdas, base)
        return EXIT_OK
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SeedDiverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
