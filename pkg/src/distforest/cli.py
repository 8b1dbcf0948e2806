"""Command-line interface: train, weights, estimate, benchmark, importance.

Exit codes: 0 success, 1 usage, 2 data, 3 fit, 4 io. Data goes to stdout
(or ``--out``), diagnostics to stderr. ``DRF_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import DataError, IngestOptions, load_csv
from .estimators import (ConditionalDistribution, copula_sample, cov_corr, do_average, hsic,
                         quantile)
from .forest import Forest, ForestConfig, ForestFormatError, fingerprint, fit, variable_importance
from .tree import TreeConfig

EXIT_USAGE, EXIT_DATA, EXIT_FIT, EXIT_IO = 1, 2, 3, 4
log = logging.getLogger("distforest")


class UsageError(Exception):
    pass


class FitError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


def _on_off(v: str) -> bool:
    v = v.lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {v!r}")


def _csv_list(v: str) -> list[str]:
    return [s.strip() for s in v.split(",") if s.strip()]


def _forest_flags(p):
    g = p.add_argument_group("forest")
    g.add_argument("--num-trees", type=int, default=2000)
    g.add_argument("--mtry", type=float, default=None, help="mean candidate count (default ceil(sqrt(p)))")
    g.add_argument("--num-features", type=int, default=20, help="random Fourier features per split")
    g.add_argument("--subsample-frac", type=float, default=0.5)
    g.add_argument("--min-node-frac", type=float, default=0.10)
    g.add_argument("--min-leaf-size", type=int, default=1)
    g.add_argument("--honesty", type=_on_off, default=True, metavar="on|off")
    g.add_argument("--split-rule", choices=["mmd", "cart"], default="mmd")
    g.add_argument("--bandwidth", default="auto", help="'auto' (median heuristic) or a positive number")
    g.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="distforest", description="Distributional random forests")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a forest on a CSV file")
    t.add_argument("--data", required=True)
    t.add_argument("--response", required=True, type=_csv_list, help="comma-separated response columns")
    t.add_argument("--out", required=True, help="forest file to write")
    t.add_argument("--categorical", type=_csv_list, default=[])
    t.add_argument("--missing", choices=["error", "drop"], default="error")
    _forest_flags(t)

    w = sub.add_parser("weights", help="forest weights for query rows")
    w.add_argument("--forest", required=True)
    w.add_argument("--data", required=True, help="CSV with the predictor columns")
    w.add_argument("--out")

    e = sub.add_parser("estimate", help="weight-based estimates for query rows")
    e.add_argument("--forest", required=True)
    e.add_argument("--data", required=True, help="CSV with the predictor columns")
    e.add_argument("--target", required=True,
                   help="mean | quantile:A:C | cdf:T1,..,Td | corr:I:J | hsic:A|B | "
                        "copula-sample:M | do-average:START:STOP:NUM or do-average:W1,W2,..")
    e.add_argument("--train-data", help="training CSV to check the forest fingerprint against")
    e.add_argument("--out")
    e.add_argument("--seed", type=int, default=0)

    b = sub.add_parser("benchmark", help="repeated hold-out benchmark on a synthetic scenario")
    b.add_argument("--scenario", required=True)
    b.add_argument("--methods", type=_csv_list, default=None)
    b.add_argument("--metric", choices=["pinball", "nlpd"], default=None)
    b.add_argument("--repeats", type=int, default=10)
    b.add_argument("--split", type=float, default=0.7)
    b.add_argument("--n", type=int, default=None)
    b.add_argument("--p", type=int, default=None)
    b.add_argument("--num-trees", type=int, default=500)
    b.add_argument("--num-features", type=int, default=20)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="output prefix; writes PREFIX.json and PREFIX.csv")

    i = sub.add_parser("importance", help="permutation importance on a holdout CSV")
    i.add_argument("--forest", required=True)
    i.add_argument("--data", required=True)
    i.add_argument("--repeats", type=int, default=1)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out")

    for sp in (t, w, e, b, i):
        sp.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")
        sp.add_argument("--format", choices=["json", "csv"], default=None)
    return parser


# -- helpers -------------------------------------------------------------

def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _load_forest(path) -> Forest:
    if not Path(path).exists():
        raise OSError(f"forest file not found: {path}")
    return Forest.load(path)


def _read_table(path):
    if not Path(path).exists():
        raise OSError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], [r for r in rows[1:] if r]


def query_matrix(path, forest: Forest) -> np.ndarray:
    """Predictor matrix in the forest's column order, one-hot columns rebuilt."""
    header, rows = _read_table(path)
    col = {h: j for j, h in enumerate(header)}
    x = np.empty((len(rows), forest.n_features))
    for k, name in enumerate(forest.x_names):
        if name in col:
            j = col[name]
            for r, row in enumerate(rows):
                try:
                    x[r, k] = float(row[j])
                except (ValueError, IndexError):
                    raise DataError(f"{path}: line {r + 2}: non-numeric value in column {name!r}") from None
        elif "=" in name and name.split("=", 1)[0] in col:
            parent, level = name.split("=", 1)
            j = col[parent]
            x[:, k] = [1.0 if row[j].strip() == level else 0.0 for row in rows]
        else:
            raise DataError(f"{path}: predictor column {name!r} not found")
    if not np.isfinite(x).all():
        raise DataError(f"{path}: non-finite predictor values")
    return x


def _table_text(header, rows, fmt) -> str:
    if fmt == "json":
        return json.dumps([dict(zip(header, r)) for r in rows], indent=1) + "\n"
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _num(v: float):
    return "NA:undefined" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


# -- commands --------------------------------------------------------------

def cmd_train(args) -> int:
    opts = IngestOptions(missing=args.missing, categorical=tuple(args.categorical))
    if not Path(args.data).exists():
        raise OSError(f"data file not found: {args.data}")
    ds = load_csv(args.data, args.response, opts)
    bandwidth = args.bandwidth
    if bandwidth != "auto":
        try:
            bandwidth = float(bandwidth)
        except ValueError:
            raise UsageError(f"--bandwidth must be 'auto' or a number, got {bandwidth!r}") from None
    try:
        config = ForestConfig(
            num_trees=args.num_trees, subsample_frac=args.subsample_frac, num_features=args.num_features,
            tree=TreeConfig(mtry=args.mtry, min_node_frac=args.min_node_frac,
                            min_leaf_size=args.min_leaf_size, honesty=args.honesty),
            split_rule=args.split_rule, bandwidth=bandwidth, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    try:
        forest = fit(ds, config, n_jobs=args.threads)
    except ValueError as exc:
        raise FitError(str(exc)) from None
    wall = time.perf_counter() - t0
    forest.save(args.out)
    counts = forest.split_counts()
    summary = {
        "n": ds.n, "p": ds.p, "d": ds.d, "dropped_rows": ds.dropped_rows,
        "bandwidth_used": forest.bandwidth_used, "wall_time_s": round(wall, 3),
        "split_counts": {name: int(c) for name, c in zip(ds.x_names, counts)},
        "fingerprint": forest.train_fingerprint, "forest_file": str(args.out),
        "config": config.to_dict(),
    }
    sys.stdout.write(json.dumps(summary, indent=1) + "\n")
    return 0


def cmd_weights(args) -> int:
    forest = _load_forest(args.forest)
    x = query_matrix(args.data, forest)
    W = forest.weight_matrix(x)
    rows = []
    for q in range(W.shape[0]):
        for i in np.flatnonzero(W[q]):
            rows.append((q, int(i), repr(float(W[q, i]))))
    _emit(_table_text(["query", "train_row", "weight"], rows, args.format or "csv"), args.out)
    return 0


def _parse_target(target: str, d: int):
    parts = target.split(":")
    kind = parts[0]
    try:
        if kind == "mean" and len(parts) == 1:
            return kind, None
        if kind == "quantile" and len(parts) == 3:
            a, c = float(parts[1]), int(parts[2])
            if not 0 < a < 1 or not 0 <= c < d:
                raise ValueError
            return kind, (a, c)
        if kind == "cdf" and len(parts) == 2:
            t = [float(v) for v in parts[1].split(",")]
            if len(t) != d:
                raise ValueError
            return kind, np.array(t)
        if kind == "corr" and len(parts) == 3:
            i, j = int(parts[1]), int(parts[2])
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError
            return kind, (i, j)
        if kind == "hsic" and len(parts) == 2:
            a, b = parts[1].split("|")
            a, b = [int(v) for v in a.split(",")], [int(v) for v in b.split(",")]
            if set(a) & set(b) or max(a + b) >= d or min(a + b) < 0:
                raise ValueError
            return kind, (a, b)
        if kind == "copula-sample" and len(parts) == 2:
            m = int(parts[1])
            if m < 1 or d < 2:
                raise ValueError
            return kind, m
        if kind == "do-average" and len(parts) in (2, 4):
            if len(parts) == 4:
                grid = np.linspace(float(parts[1]), float(parts[2]), int(parts[3]))
            else:
                grid = np.array([float(v) for v in parts[1].split(",")])
            if d < 2 or grid.size == 0:
                raise ValueError
            return kind, grid
    except ValueError:
        pass
    raise UsageError(f"cannot parse target {target!r} for a forest with d={d}")


def cmd_estimate(args) -> int:
    forest = _load_forest(args.forest)
    kind, par = _parse_target(args.target, forest.d)
    if args.train_data:
        header, _ = _read_table(args.train_data)
        ds = load_csv(args.train_data, [c for c in forest.y_names if c in header])
        if fingerprint(ds, forest.config) != forest.train_fingerprint:
            log.warning("training data fingerprint does not match the forest (train/serve skew?)")
    x = query_matrix(args.data, forest)
    fmt = args.format or "csv"

    if kind == "do-average":
        res = do_average(forest, par, x)
        rows = [(repr(float(w)), _num(v) if ok else "NA:no-support", int(u))
                for w, v, ok, u in zip(res.grid, res.estimate, res.available, res.n_used)]
        _emit(_table_text(["w", "estimate", "n_used"], rows, fmt), args.out)
        return 0

    W = forest.weight_matrix(x)
    rng = np.random.default_rng(args.seed)
    rows = []
    if kind == "mean":
        header = ["query"] + [f"mean_{n}" for n in forest.y_names]
        M = W @ forest.y_train
        rows = [[q] + [repr(float(v)) for v in M[q]] for q in range(M.shape[0])]
    elif kind == "copula-sample":
        header = ["query", "draw"] + [f"u_{n}" for n in forest.y_names]
    else:
        header = ["query", kind]
    for q in range(W.shape[0]) if kind != "mean" else ():
        cd = ConditionalDistribution.from_dense(W[q], forest.y_train)
        if kind == "quantile":
            rows.append([q, repr(quantile(cd, *par))])
        elif kind == "cdf":
            rows.append([q, repr(cd.cdf(par))])
        elif kind == "corr":
            cc = cov_corr(cd, *par)
            rows.append([q, repr(cc.correlation) if cc.defined else "NA:zero-variance"])
        elif kind == "hsic":
            rows.append([q, repr(hsic(cd, *par))])
        elif kind == "copula-sample":
            cs = copula_sample(cd)
            pick = rng.choice(cs.weights.size, size=par, p=cs.weights / cs.weights.sum())
            rows.extend([q, k] + [repr(float(u)) for u in cs.u_points[i]] for k, i in enumerate(pick))
    _emit(_table_text(header, rows, fmt), args.out)
    return 0


def cmd_benchmark(args) -> int:
    from .eval import METHODS, MethodOptions, Scenario, run_benchmark
    try:
        scenario = Scenario(args.scenario, n=args.n, p=args.p, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    methods = args.methods or list(METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s) {', '.join(bad)}; choose from {', '.join(METHODS)}")
    metric = args.metric or ("nlpd" if args.scenario in ("copula", "toy-grf", "vignette") else "pinball")
    opts = MethodOptions(num_trees=args.num_trees, num_features=args.num_features, n_jobs=args.threads)
    res = run_benchmark(scenario, methods, args.split, metric, args.repeats, opts)
    res.write(f"{args.out}.json", f"{args.out}.csv")
    table = res.to_dict()["table"]
    sys.stdout.write(json.dumps({"scenario": scenario.to_dict(), "metric": metric, "repeats": args.repeats,
                                 "split": args.split, "table": table}, indent=1) + "\n")
    return 0


def cmd_importance(args) -> int:
    forest = _load_forest(args.forest)
    header, _ = _read_table(args.data)
    missing = [c for c in forest.y_names if c not in header]
    if missing:
        raise DataError(f"response column(s) not found: {', '.join(missing)}")
    ds = load_csv(args.data, forest.y_names,
                  IngestOptions(predictors=tuple(h for h in header if h not in forest.y_names)))
    x = query_matrix(args.data, forest)
    from .data import Dataset
    ds = Dataset.from_arrays(x, ds.y, forest.x_names, forest.y_names)
    scores = variable_importance(forest, ds, rng=args.seed, n_repeats=args.repeats)
    rows = [(name, repr(float(s))) for name, s in zip(forest.x_names, scores)]
    _emit(_table_text(["feature", "importance"], rows, args.format or "csv"), args.out)
    return 0


COMMANDS = {"train": cmd_train, "weights": cmd_weights, "estimate": cmd_estimate,
            "benchmark": cmd_benchmark, "importance": cmd_importance}


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DRF_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"distforest: usage error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"distforest: data error: {exc}\n")
        return EXIT_DATA
    except FitError as exc:
        sys.stderr.write(f"distforest: fit error: {exc}\n")
        return EXIT_FIT
    except (OSError, ForestFormatError) as exc:
        sys.stderr.write(f"distforest: io error: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
