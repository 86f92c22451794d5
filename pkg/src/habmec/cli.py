"""Command-line entry point: ``habmec <subcommand> [flags]``.

Subcommands write CSV files (UTF-8, LF) into ``--out`` and nothing
anywhere else; every file carries the config hash in its first column.
Exit status is 0 on success, 1 on a validation error (bad flags, bad
config, bad trace, failed checks) and 2 on an internal failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks, fedsvm, harness, oracle
from .config import ConfigError, load_config, write_default_config
from .scenario import TraceFormatError, split_train_test

log = logging.getLogger("habmec")
TRACE_KEYS = ("dual", "primal", "gap", "descent_residual", "theta", "mu1", "omega_change")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", type=Path, help="INI file overriding the built-in defaults")
    p.add_argument("--seed", type=int, help="base seed (non-negative)")
    p.add_argument("--out", type=Path, default=Path("habmec_out"), help="output directory")
    p.add_argument("--users", type=int, help="number of users M")
    p.add_argument("--habs", type=int, help="number of HABs N")
    p.add_argument("--instants", type=int, help="time instants T")
    p.add_argument("--reps", type=int, help="repetitions (evaluate)")
    p.add_argument("--quiet", action="store_true", help="only print errors")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="habmec", description="HAB-assisted MEC: oracle, scheduler and federated SVM.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (
        ("simulate", "one scenario end to end with oracle decisions"),
        ("train", "federated training with convergence traces"),
        ("evaluate", "accuracy and utility of FL against the baselines"),
        ("oracle", "oracle association labels to file"),
        ("verify", "run the runtime property checks"),
        ("config", "write the documented default config"),
    ):
        p = sub.add_parser(name, help=text, description=text)
        _common(p)
        if name == "evaluate":
            p.add_argument("--sweep", action="store_true",
                           help="accuracy against training samples 30..150 instead of the utility comparison")
    return parser


def _config(args):
    overrides = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        overrides.setdefault("experiment", {})["seed"] = args.seed
    for flag, section, key in (("users", "scenario", "users"), ("habs", "scenario", "habs"),
                               ("instants", "traffic", "instants"), ("reps", "experiment", "reps")):
        value = getattr(args, flag)
        if value is not None:
            if value < 1:
                raise ConfigError(f"--{flag} must be >= 1")
            overrides.setdefault(section, {})[key] = value
    return load_config(args.config, overrides)


def _write(path: Path, header, rows, config_hash: str) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["config_hash"] + list(header))
        for row in rows:
            out.writerow([config_hash] + [repr(v) if isinstance(v, float) else v for v in row])
    return path


def _simulate(cfg, out: Path):
    seed = int(cfg["experiment"]["seed"])
    scenario = harness.build_instance(cfg, seed)
    digest = cfg.digest()
    detail, totals = [], []
    for t in range(scenario.trace.instants):
        res = oracle.exhaustive_association(scenario, t)
        dec = res.decision
        for m in range(scenario.num_users):
            n = int(res.assignment[m])
            detail.append((t, m, n, int(dec.ranks[m, n]), float(dec.splits[m, n]),
                           float(dec.energy[m]), float(dec.time[m])))
        totals.append((t, float(res.utility)))
    return [
        _write(out / "simulate_decisions.csv", ("t", "user", "hab", "rank", "beta", "energy", "time"),
               detail, digest),
        _write(out / "simulate_utility.csv", ("t", "utility"), totals, digest),
    ]


def _train(cfg, out: Path):
    seed = int(cfg["experiment"]["seed"])
    labels = oracle.association_labels(harness.build_instance(cfg, seed))
    times = np.arange(labels.instants - 1)
    train_times, _ = split_train_test(times, cfg["experiment"]["train_fraction"])
    norm = labels.normalizer(train_times)
    f_cfg = cfg["fedsvm"]
    hyper = cfg.hyper()
    trace_rows, model_rows = [], []
    for m in range(labels.num_users):
        data = labels.datasets(m, norm, train_times)
        state, trace = fedsvm.train(data, hyper, iterations=int(f_cfg["iterations"]), seed=seed + m,
                                    tol=f_cfg["tol"], normalizer=norm)
        for row in trace.rows():
            trace_rows.append((m, row["iteration"] + 1) + tuple(float(row[k]) for k in TRACE_KEYS))
        for n in range(state.num_tasks):
            model_rows.append((m, n, *map(float, state.W[:, n]), *map(float, state.omega[n])))
        log.info("user %d: %d iterations, gap %.3e, converged=%s", m, len(trace),
                 trace.gap[-1] if len(trace) else 0.0, state.converged)
    N = labels.num_habs
    digest = cfg.digest()
    return [
        _write(out / "train_trace.csv", ("user", "iteration") + TRACE_KEYS, trace_rows, digest),
        _write(out / "train_models.csv", ("user", "hab", "w_x", "w_y", "w_z")
               + tuple(f"omega_{k}" for k in range(N)), model_rows, digest),
        _write(out / "train_normalizer.csv", ("feature", "low", "high"),
               [(name, float(lo), float(hi)) for name, lo, hi in zip("xyz", norm.low, norm.high)], digest),
    ]


def _evaluate(cfg, out: Path, sweep: bool):
    if sweep:
        report = harness.run_sample_sweep(cfg)
        paths = report.write(out, "sweep")
    else:
        report = harness.run_experiment(cfg)
        paths = report.write(out, "evaluate")
        if not report.oracle_ok:
            log.error("a learned method beat the oracle on some instance")
    for entry in report.summary:
        log.info("%s", ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                 for k, v in entry.items()))
    if report.failures:
        log.error("%d repetitions failed; see the failures file", len(report.failures))
    return paths


def _oracle(cfg, out: Path):
    seed = int(cfg["experiment"]["seed"])
    labels = oracle.association_labels(harness.build_instance(cfg, seed))
    rows = []
    for t in range(labels.instants):
        for m in range(labels.num_users):
            x, y, z = labels.features[t, m]
            rows.append((t, m, float(x), float(y), float(z), int(labels.assignment[t, m])))
    util = [(t, float(u)) for t, u in enumerate(labels.utility)]
    digest = cfg.digest()
    return [
        _write(out / "oracle_labels.csv", ("t", "user", "x", "y", "z", "hab"), rows, digest),
        _write(out / "oracle_utility.csv", ("t", "utility"), util, digest),
    ]


def _verify(cfg, out: Path):
    results = checks.run_checks(seed=int(cfg["experiment"]["seed"]))
    for r in results:
        log.warning("%s %-24s %s", "PASS" if r.ok else "FAIL", r.name, r.detail)
    path = _write(out / "verify.csv", ("check", "ok", "detail"),
                  [(r.name, r.ok, r.detail) for r in results], cfg.digest())
    return [path], all(r.ok for r in results)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = _config(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        ok = True
        if args.command == "config":
            paths = [write_default_config(out / "habmec.ini")]
        elif args.command == "simulate":
            paths = _simulate(cfg, out)
        elif args.command == "train":
            paths = _train(cfg, out)
        elif args.command == "evaluate":
            paths = _evaluate(cfg, out, args.sweep)
        elif args.command == "oracle":
            paths = _oracle(cfg, out)
        else:
            paths, ok = _verify(cfg, out)
    except (ConfigError, TraceFormatError, oracle.SizeError, oracle.NoFeasibleAssociation) as exc:
        log.error("error: %s", exc)
        return 1
    except Exception as exc:
        log.exception("internal failure: %s", exc)
        return 2
    for p in paths:
        log.info("wrote %s", p)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
