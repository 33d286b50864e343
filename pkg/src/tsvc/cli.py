"""Command-line interface: ``tsvc fit | predict | simulate | datasets``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import __version__
from .algorithm import FitConfig, fit_tsvc
from .data import Dataset, predict
from .errors import ConfigError, InvalidArgs, TsvcError
from .io import format_report, load_csv, load_model, read_numeric_csv, read_schema, save_model, tree_to_dot
from .simbench import N_GRID, PRESETS, SCENARIOS, SIGMA_GRID, ScenarioSpec, run_rep, summarize

log = logging.getLogger("tsvc")

METRICS = ("tpr_c", "fpr_c", "tpr_cm", "fpr_cm", "poc")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _exclusion(text: str):
    try:
        j, m = text.split(":")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected PREDICTOR:MODIFIER, got {text!r}") from None
    return j.strip(), m.strip()


def _resolve_exclusions(pairs, data: Dataset):
    out = []
    for j, m in pairs:
        idx = []
        for token in (j, m):
            idx.append(int(token) if token.isdigit() else data.index_of(token))
        out.append(tuple(idx))
    return tuple(out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tsvc", description="Tree-structured varying-coefficient models")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", help="fit a TSVC model to a CSV file")
    fit.add_argument("--csv", required=True)
    fit.add_argument("--schema", required=True, help="JSON sidecar with column roles and scales")
    fit.add_argument("--family", choices=("gaussian", "binomial", "poisson"), default="gaussian")
    fit.add_argument("--alpha", type=float, default=0.05)
    fit.add_argument("--nperm", type=int, default=1000)
    fit.add_argument("--min-node-size", type=int, default=5)
    fit.add_argument("--max-splits", type=int, default=30)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out-dir", default=".")
    fit.add_argument("--exclude-modifier", type=_exclusion, action="append", default=[],
                     metavar="J:M", help="forbid M as modifier of J (names or 0-based indices)")
    fit.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    pred = sub.add_parser("predict", help="predict from a fitted model")
    pred.add_argument("--model", required=True)
    pred.add_argument("--csv", required=True)
    pred.add_argument("--out", required=True)

    sim = sub.add_parser("simulate", help="run simulation scenarios")
    sim.add_argument("--scenario", required=True, choices=SCENARIOS)
    sim.add_argument("--n", type=int, nargs="+", default=None)
    sim.add_argument("--sigma", type=float, nargs="+", default=None)
    sim.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    sim.add_argument("--reps", type=int, default=None, help="override the preset's replication count")
    sim.add_argument("--nperm", type=int, default=None, help="override the preset's permutation count")
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--checkpoint-dir", default=None)
    sim.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                     help="worker processes for replications")

    ds = sub.add_parser("datasets", help="write the Swiss labour and AHS data as CSV + schema")
    ds.add_argument("--out-dir", default=".")
    return parser


def cmd_fit(args) -> int:
    schema = read_schema(args.schema)
    data = load_csv(args.csv, schema)
    config = FitConfig(alpha=args.alpha, n_perm=args.nperm, min_node_size=args.min_node_size,
                       max_splits=args.max_splits, seed=args.seed,
                       modifier_exclusions=_resolve_exclusions(args.exclude_modifier, data),
                       n_jobs=max(1, args.threads))
    model = fit_tsvc(data, args.family, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    (out / "report.txt").write_text(format_report(model) + f"\nseed: {config.seed}\n")
    for j in sorted(model.trees):
        (out / f"tree_{model.names[j]}.dot").write_text(tree_to_dot(model.trees[j], model.names))
    print(json.dumps({"model": str(out / "model.json"), "deviance": model.deviance, "aic": model.aic,
                      "trees": [model.names[j] for j in sorted(model.trees)], "seed": config.seed}))
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model)
    with open(args.csv, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        if not rows:
            return 0
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        writer.writerow(header + ["eta_hat", "mu_hat"])
        if not body:
            return 0
        _, values = read_numeric_csv(args.csv, model.names)
        X = np.column_stack([values[name] for name in model.names])
        data = Dataset.from_arrays(X, np.zeros(X.shape[0]), model.names, model.scales)
        eta = predict(model, data, kind="link")
        mu = predict(model, data)
        for row, e, m in zip(body, eta, mu):
            writer.writerow(row + [repr(float(e)), repr(float(m))])
    return 0


def _fmt_metric(value) -> str:
    return "" if value is None else repr(float(value))


def _run_reps(spec, reps, config, threads):
    """Yield ``(rep, result)`` as replicates finish, in a process pool if asked."""
    if threads <= 1 or len(reps) <= 1:
        for rep in reps:
            yield rep, run_rep(spec, rep, config)
        return
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = {pool.submit(run_rep, spec, rep, config): rep for rep in reps}
        for fut in as_completed(futures):
            yield futures[fut], fut.result()


def cmd_simulate(args) -> int:
    preset = dict(PRESETS[args.preset])
    n_reps = args.reps if args.reps is not None else preset["n_reps"]
    n_perm = args.nperm if args.nperm is not None else preset["n_perm"]
    ns = args.n or list(N_GRID)
    sigmas = args.sigma or list(SIGMA_GRID)
    if n_reps < 1 or n_perm < 1 or any(n <= 0 for n in ns) or any(s <= 0 for s in sigmas):
        raise InvalidArgs("reps, nperm, n and sigma must all be positive")
    config = FitConfig(alpha=args.alpha, n_perm=n_perm)
    ckpt = Path(args.checkpoint_dir) if args.checkpoint_dir else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    stamp = {"alpha": args.alpha, "n_perm": n_perm, "seed": args.seed}

    rows = []
    for n in ns:
        for sigma in sigmas:
            spec = ScenarioSpec(args.scenario, n, sigma, n_reps, args.seed)
            results = {}
            paths = {}
            for rep in range(n_reps):
                if ckpt is not None:
                    paths[rep] = ckpt / f"s{args.scenario}_n{n}_sd{sigma:g}_r{rep}.json"
                    if paths[rep].exists():
                        saved = json.loads(paths[rep].read_text())
                        if saved.get("stamp") == stamp:
                            results[rep] = saved["result"]
            missing = [rep for rep in range(n_reps) if rep not in results]
            for rep, res in _run_reps(spec, missing, config, args.threads):
                if ckpt is not None:
                    paths[rep].write_text(json.dumps({"stamp": stamp, "result": res}, sort_keys=True))
                results[rep] = res
                log.info("scenario %s n=%d sigma=%g rep %d done", args.scenario, n, sigma, rep)
            results = [results[rep] for rep in range(n_reps)]
            ev = summarize(spec, results).as_dict()
            for metric in METRICS:
                rows.append([args.scenario, n, f"{sigma:g}", args.preset, n_reps, n_perm, args.seed,
                             metric, _fmt_metric(ev[metric])])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "n", "sigma", "preset", "reps", "n_perm", "seed", "metric", "value"])
        writer.writerows(rows)
    return 0


def cmd_datasets(args) -> int:
    from .datasets import doctor_visits, swiss_labor, write_dataset

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(swiss_labor(), out / "swiss.csv", out / "swiss.schema.json")
    write_dataset(doctor_visits(), out / "ahs.csv", out / "ahs.schema.json")
    return 0


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "datasets": cmd_datasets}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except TsvcError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return exc.exit_code
    except (OSError, ImportError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 4


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
