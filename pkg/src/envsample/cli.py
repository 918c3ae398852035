"""Command-line experiment runner.

Subcommands: ``sample`` (alias ``run``), ``coupling-time``, ``sweep`` and
``validate``.  Replications get seeds derived from ``--seed`` and the run
id, and rows are written in run-id order, so identical arguments produce
byte-identical CSV.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
import warnings
from pathlib import Path
from typing import Sequence

from . import sampler as smp
from .automaton import ModelError
from .config import METRICS, ConfigError, Model, load_model
from .zones import MODES, PiecewiseEvent

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CENSORED = 3


def _fmt(x) -> str:
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _options(model: Model, args) -> tuple[str, dict]:
    algo = args.algo or model.sampler.algorithm
    opts = {"cap": args.cap or model.sampler.cap}
    if algo != smp.PSA:
        opts["mode"] = args.mode or model.sampler.mode
        opts["minimal"] = model.sampler.minimal if args.minimal is None else args.minimal
    if algo == smp.SPLIT:
        opts["threshold"] = args.threshold or model.sampler.threshold
        opts["state_cap"] = args.state_cap or model.sampler.state_cap
    return algo, opts


def _timed_runs(model: Model, algo: str, opts: dict, args) -> tuple[list[smp.RunRecord], list[float]]:
    start = time.perf_counter()
    records = smp.run_replications(model.table, algo, args.samples, args.seed, args.workers, **opts)
    # per-run wall time is only known for the whole batch in a pool; spread it evenly
    elapsed = (time.perf_counter() - start) * 1e6
    return records, [elapsed / max(len(records), 1)] * len(records)


def write_csv(model: Model, records: Sequence[smp.RunRecord], out) -> None:
    """Per-run rows, then ``mean`` and ``ci95`` rows over the uncensored runs."""
    d = model.table.space.d
    header = ["run_id", "seed", "coupling_time", "work"] + [f"x{i + 1}" for i in range(d)]
    header += list(model.metrics) + ["censored"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    columns: list[list[float]] = [[] for _ in range(2 + d + len(model.metrics))]
    for r in records:
        if r.censored:
            w.writerow([r.run_id, r.seed, r.coupling_time, r.work] + [""] * (d + len(model.metrics)) + [1])
            continue
        x = r.result.sample
        extra = [METRICS[m](x) for m in model.metrics]
        values = [r.coupling_time, r.work] + list(x) + extra
        for col, v in zip(columns, values):
            col.append(float(v))
        w.writerow([r.run_id, r.seed] + values + [0])
    means, halves = [], []
    for col in columns:
        n = len(col)
        mean = math.fsum(col) / n if n else math.nan
        var = math.fsum((v - mean) ** 2 for v in col) / (n - 1) if n > 1 else 0.0
        means.append(mean)
        halves.append(1.96 * math.sqrt(var / n) if n > 1 else 0.0)
    censored = sum(r.censored for r in records)
    w.writerow(["mean", ""] + [_fmt(v) for v in means] + [censored])
    w.writerow(["ci95", ""] + [_fmt(v) for v in halves] + [""])


def _open_out(path: str | None):
    if path is None or path == "-":
        return None
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p.open("w", newline="")


def _load(args) -> Model:
    overrides = dict(_parse_assign(s) for s in (args.param or []))
    return load_model(args.model, overrides, args.mode)


def _parse_assign(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"--param expects NAME=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _censored_exit(records, args, stream) -> int:
    bad = [r for r in records if r.censored]
    if not bad:
        return EXIT_OK
    print(f"{len(bad)} of {len(records)} runs did not couple, e.g. run {bad[0].run_id}: {bad[0].error}", file=stream)
    return EXIT_OK if args.allow_censored else EXIT_CENSORED


def cmd_sample(args) -> int:
    model = _load(args)
    algo, opts = _options(model, args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        records, walls = _timed_runs(model, algo, opts, args)
    fh = _open_out(args.out)
    try:
        write_csv(model, records, fh or sys.stdout)
    finally:
        if fh:
            fh.close()
    if args.timing:
        with open(args.timing, "w", newline="") as th:
            tw = csv.writer(th, lineterminator="\n")
            tw.writerow(["run_id", "wall_us"])
            for r, t in zip(records, walls):
                tw.writerow([r.run_id, f"{t:.1f}"])
    return _censored_exit(records, args, sys.stderr)


def cmd_coupling_time(args) -> int:
    model = _load(args)
    algo, opts = _options(model, args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        records = smp.run_replications(model.table, algo, args.samples, args.seed, args.workers, **opts)
        stats = smp.summarize(algo, records)
    lo, hi = stats.ci
    print(f"model {model.name}  algorithm {algo}  runs {stats.n_runs}  censored {stats.censored}")
    print(f"mean coupling time {stats.mean:.6g}  95% CI [{lo:.6g}, {hi:.6g}]  variance {stats.variance:.6g}")
    works = [r.work for r in records if not r.censored]
    if works:
        print(f"mean work {sum(works) / len(works):.6g}")
    print("histogram (coupling time: count)")
    for t, c in stats.histogram.items():
        print(f"  {t}: {c}")
    if args.out:
        fh = _open_out(args.out)
        with fh:
            write_csv(model, records, fh)
    return _censored_exit(records, args, sys.stderr)


def cmd_sweep(args) -> int:
    base = _load(args)
    if args.values:
        if not args.sweep_param:
            raise ConfigError("--values needs --sweep-param")
        name = args.sweep_param
        values = [v.strip() for v in args.values.split(",") if v.strip()]
    elif base.sweep:
        name, values = base.sweep[0], [str(v) for v in base.sweep[1]]
    else:
        raise ConfigError("no sweep: give --sweep-param/--values or a 'sweep' block in the model")
    algos = [a.strip() for a in (args.algo or base.sampler.algorithm).split(",")]
    for a in algos:
        if a not in smp.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}")
    out_dir = Path(args.out or "sweep_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = [["param", "value", "algorithm", "runs", "censored", "mean_coupling_time", "ci95", "mean_work"]]
    status = EXIT_OK
    overrides = dict(_parse_assign(s) for s in (args.param or []))
    for value in values:
        overrides[name] = value
        model = load_model(args.model, overrides, args.mode)
        for algo in algos:
            sub = argparse.Namespace(**{**vars(args), "algo": algo})
            _, opts = _options(model, sub)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                records = smp.run_replications(model.table, algo, args.samples, args.seed, args.workers, **opts)
                stats = smp.summarize(algo, records)
            tag = str(value).replace("/", "_")
            with (out_dir / f"{model.name}_{name}={tag}_{algo}.csv").open("w", newline="") as fh:
                write_csv(model, records, fh)
            works = [r.work for r in records if not r.censored]
            mean_work = math.fsum(works) / len(works) if works else math.nan
            summary.append(
                [name, value, algo, stats.n_runs, stats.censored, _fmt(stats.mean), _fmt(stats.ci_half_width), _fmt(mean_work)]
            )
            if _censored_exit(records, args, sys.stderr) != EXIT_OK:
                status = EXIT_CENSORED
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(summary)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(summary)
    print(buf.getvalue(), end="")
    return status


def cmd_validate(args) -> int:
    model = _load(args)
    table = model.table
    space = table.space
    print(f"model {model.name}: d={space.d} capacities={list(space.capacities)} states={space.cardinality}")
    print(f"events {len(table.events)}  total rate {table.total_rate}")
    for ev in table.events:
        sem = ev.semantics
        if isinstance(sem, PiecewiseEvent):
            info = sem.describe()
            print(
                f"  {ev.label}: piecewise H={info['H']} K={info['K']} nodes={info['nodes']} "
                f"dropped_empty_zones={info['dropped_zones']} zone_bound={info['zone_bound']}"
            )
        else:
            print(f"  {ev.label}: {type(sem).__name__} {getattr(sem, 'v', '')}")
    try:
        smp.compiled_model(table, args.mode or model.sampler.mode)
        print("compiled backend: yes")
    except Exception as exc:  # noqa: BLE001 - report only
        print(f"compiled backend: no ({exc})")
    print("validation passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="envsample", description="Perfect sampling with envelopes.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sampling=True):
        sp.add_argument("--model", required=True, help="model configuration (YAML)")
        sp.add_argument("--mode", choices=MODES, default=None, help="envelope mode (default: model's, else lp)")
        sp.add_argument("--param", action="append", metavar="NAME=VALUE", help="override a model parameter")
        if not sampling:
            return
        sp.add_argument("--algo", default=None, help="psa, epsa or split")
        sp.add_argument("--samples", type=int, default=1000, help="number of replications")
        sp.add_argument("--seed", type=int, default=0, help="master seed (unsigned 64-bit)")
        sp.add_argument("--threshold", type=int, default=None, help="split threshold")
        sp.add_argument("--cap", type=int, default=None, help="horizon cap (default 2^22)")
        sp.add_argument("--state-cap", type=int, default=None, help="split enumeration cap")
        sp.add_argument("--out", default=None, help="output CSV path (directory for sweep)")
        sp.add_argument("--allow-censored", action="store_true", help="exit 0 even if some runs did not couple")
        sp.add_argument("--workers", type=int, default=smp.default_workers(), help="worker processes")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--minimal", dest="minimal", action="store_true", default=None,
                       help="report the minimal coupling horizon (bisection)")
        g.add_argument("--no-minimal", dest="minimal", action="store_false",
                       help="report the doubling horizon")

    for name in ("sample", "run"):
        sp = sub.add_parser(name, help="draw perfect samples and write one CSV row per run")
        common(sp)
        sp.add_argument("--timing", default=None, help="write per-run wall times (microseconds) here")
        sp.set_defaults(func=cmd_sample)
    sp = sub.add_parser("coupling-time", help="coupling-time statistics")
    common(sp)
    sp.set_defaults(func=cmd_coupling_time)
    sp = sub.add_parser("sweep", help="repeat over a grid of one parameter")
    common(sp)
    sp.add_argument("--sweep-param", default=None, help="parameter to vary")
    sp.add_argument("--values", default=None, help="comma-separated grid values")
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("validate", help="build the model and run all build-time checks")
    common(sp, sampling=False)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "samples", 1) < 1:
        print("--samples must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "algo", None) and args.command != "sweep" and args.algo not in smp.ALGORITHMS:
        print(f"--algo must be one of {', '.join(smp.ALGORITHMS)}", file=sys.stderr)
        return EXIT_CONFIG
    if getattr(args, "seed", 0) < 0 or getattr(args, "seed", 0) >= 2**64:
        print("--seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ModelError, smp.StateCapError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
