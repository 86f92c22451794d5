"""Experiment orchestration: oracle labels, FL and baselines, accuracy and utility.

A repetition draws a scenario and a traffic trace, labels every instant with
the exhaustive oracle, trains one model per user with each method on the
earliest samples, and scores the later instants: how often the predicted
HAB matches the oracle, and what utility the scheduler reaches when fed
the predicted association.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fedsvm, oracle, scheduler
from .config import Config
from .fedsvm import Hyper
from .scenario import generate_scenario, ingest_trace, split_train_test, synth_traffic

log = logging.getLogger(__name__)

METHODS = ("fl", "local", "global")
ALL_METHODS = METHODS + ("oracle",)


def worker_count() -> int:
    """Parallel workers allowed by HABMEC_THREADS (default 1: sequential)."""
    raw = os.environ.get("HABMEC_THREADS", "1").strip() or "1"
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"HABMEC_THREADS must be an integer, got {raw!r}") from None
    return max(value, 1)


def repetition_seed(seed: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


@dataclass
class LocalModels:
    """Independent per-HAB columns; ``samples_seen[n]`` audits what HAB n read."""

    W: np.ndarray
    samples_seen: list


def baseline_local(datasets, hyper: Hyper = Hyper()) -> LocalModels:
    """Each HAB fits its own column on its own samples, no exchange.

    With ``lam2 = 0`` nothing couples the columns, so HAB n minimises the
    squared loss on its samples plus ``lam1 |w_n|^2``; that ridge problem is
    solved exactly. HABs without samples keep w = 0.
    """
    datasets = list(datasets)
    d = next((ds.dim for ds in datasets if ds.size), 3)
    uncoupled = replace(hyper, lam2=0.0)
    W = np.zeros((d, len(datasets)))
    seen = []
    for n, ds in enumerate(datasets):
        seen.append(ds.size)
        if ds.size == 0:
            continue
        w, _, _ = fedsvm.centralized_solve([ds], uncoupled, omega0=np.ones((1, 1)), fixed_omega=True)
        W[:, n] = w[:, 0]
    return LocalModels(W, seen)


@dataclass
class GlobalModel:
    W: np.ndarray
    omega: np.ndarray
    objective: float


def baseline_global(datasets, hyper: Hyper = Hyper()) -> GlobalModel:
    """All HABs ship their samples to one node which solves the same objective."""
    W, omega, value = fedsvm.centralized_solve(datasets, hyper)
    return GlobalModel(W, omega, value)


def accuracy_rate(W, features, labels) -> float:
    """Fraction of samples whose argmax HAB equals the oracle's."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty test set")
    return float(np.mean(fedsvm.predict_association(W, features) == labels))


def repair_association(scenario, t: int, scores) -> np.ndarray:
    """Turn per-user HAB scores into a feasible assignment.

    Users take their top-scoring HAB; if it does not cover them, or adding
    them pushes the HAB's hover energy past its budget, they fall back to
    the best-scoring HAB that is covering and still budget-feasible.
    """
    scores = np.asarray(scores, dtype=float)
    M, N = scores.shape
    cover = scenario.coverage(t)
    hover = scenario.compute.hab_hover_energy
    budget = scenario.compute.energy_budget
    load = np.zeros(N, dtype=int)
    out = np.full(M, -1, dtype=int)
    for m in range(M):
        for n in np.argsort(-scores[m], kind="stable"):
            if cover[m, n] and (load[n] + 1) * hover <= budget:
                out[m] = n
                load[n] += 1
                break
        if out[m] < 0:
            raise oracle.NoFeasibleAssociation(f"user {m} has no covering HAB with budget left at t={t}")
    return out


def build_instance(cfg: Config, seed: int, instants: int | None = None):
    sc_cfg, tr_cfg = cfg["scenario"], cfg["traffic"]
    radio_cfg = cfg["radio"]
    T = tr_cfg["instants"] if instants is None else instants
    scenario = generate_scenario(
        seed, int(sc_cfg["users"]), int(sc_cfg["habs"]), sc_cfg["area_radius"],
        radio=cfg.radio(), compute=cfg.compute(), coverage_radius=sc_cfg["coverage_radius"],
        mobility=sc_cfg["mobility"], instants=T, speed=sc_cfg["speed"],
        deterministic_fading=radio_cfg["deterministic_fading"], ricean_k=radio_cfg["ricean_k_factor"])
    if tr_cfg["trace_path"]:
        trace = ingest_trace(tr_cfg["trace_path"])
        if trace.instants < T:
            raise ValueError(f"trace has {trace.instants} instants, need {T}")
        trace = type(trace)(trace.z[: scenario.num_users, :T])
    else:
        trace = synth_traffic(seed, scenario.num_users, T, log_mean=tr_cfg["log_mean"],
                              log_std=tr_cfg["log_std"], ar_coeff=tr_cfg["ar_coeff"])
    return scenario.with_trace(trace)


@dataclass
class TrainedModels:
    W: dict            # method -> list of per-user (d, N) matrices
    fl_gaps: list
    fl_converged: list


def train_methods(labels: oracle.AssociationLabels, train_times, normalizer, hyper: Hyper,
                  iterations: int, tol: float, seed: int, methods=METHODS) -> TrainedModels:
    W = {name: [] for name in methods}
    gaps, converged = [], []
    for m in range(labels.num_users):
        data = labels.datasets(m, normalizer, train_times)
        if "fl" in methods:
            state, trace = fedsvm.train(data, hyper, iterations=iterations, seed=seed + m, tol=tol)
            W["fl"].append(state.W)
            gaps.append(trace.gap[-1] if len(trace) else 0.0)
            converged.append(state.converged)
        if "local" in methods:
            W["local"].append(baseline_local(data, hyper).W)
        if "global" in methods:
            W["global"].append(baseline_global(data, hyper).W)
    return TrainedModels(W, gaps, converged)


def _predict_scores(Ws, X):
    """(M, N) scores for every user given normalised rows X (M, d)."""
    return np.stack([X[m] @ Ws[m] for m in range(len(Ws))])


@dataclass
class RepetitionResult:
    rep: int
    seed: int
    rows: list
    oracle_ok: bool
    decisions: list = field(default_factory=list, repr=False)
    runtime: dict = field(default_factory=dict)
    error: str | None = None


def run_repetition(cfg: Config, rep: int, keep_decisions: bool = False) -> RepetitionResult:
    base = int(cfg["experiment"]["seed"])
    seed = repetition_seed(base, rep)
    runtime = {}
    clock = time.perf_counter()
    scenario = build_instance(cfg, seed)
    labels = oracle.association_labels(scenario)
    runtime["oracle"] = time.perf_counter() - clock

    times = np.arange(labels.instants - 1)
    train_times, test_times = (np.asarray(x) for x in
                               split_train_test(times, cfg["experiment"]["train_fraction"]))
    norm = labels.normalizer(train_times)
    f_cfg = cfg["fedsvm"]
    clock = time.perf_counter()
    models = train_methods(labels, train_times, norm, cfg.hyper(), int(f_cfg["iterations"]),
                           f_cfg["tol"], seed)
    runtime["train"] = time.perf_counter() - clock

    rows = []
    oracle_ok = True
    decisions = []
    per_method = {name: {"hits": 0, "energy": [], "time": [], "utility": []} for name in ALL_METHODS}
    compute = scenario.compute
    for t in test_times:
        X = norm(labels.features[t])
        target_t = t + 1
        truth = labels.assignment[target_t]
        oracle_dec = scheduler.allocate(scenario, target_t, truth)
        candidates = {"oracle": oracle_dec}
        for name in METHODS:
            scores = _predict_scores(models.W[name], X)
            pred = np.argmax(scores, axis=1)
            per_method[name]["hits"] += int(np.sum(pred == truth))
            assign = repair_association(scenario, target_t, scores)
            candidates[name] = scheduler.allocate(scenario, target_t, assign)
        per_method["oracle"]["hits"] += truth.size
        for name, dec in candidates.items():
            stats = per_method[name]
            stats["energy"].append(compute.weight_energy * float(dec.energy.sum()))
            stats["time"].append(compute.weight_time * float(dec.time.sum()))
            stats["utility"].append(dec.utility)
        best = candidates["oracle"].utility
        if any(dec.utility < best - 1e-9 * max(1.0, abs(best)) for dec in candidates.values()):
            oracle_ok = False
        if keep_decisions:
            decisions.extend((int(target_t), name, dec) for name, dec in candidates.items())
    n_samples = len(test_times) * scenario.num_users
    for name in ALL_METHODS:
        stats = per_method[name]
        rows.append({
            "method": name, "rep": rep, "seed": seed,
            "accuracy": stats["hits"] / n_samples,
            "energy_term": float(np.mean(stats["energy"])),
            "time_term": float(np.mean(stats["time"])),
            "utility": float(np.mean(stats["utility"])),
        })
    return RepetitionResult(rep, seed, rows, oracle_ok, decisions, runtime)


def _safe_repetition(args):
    cfg_values, rep, keep = args
    cfg = Config(cfg_values)
    try:
        return run_repetition(cfg, rep, keep)
    except Exception as exc:  # a failed repetition is reported, never dropped silently
        log.error("repetition %d failed: %s", rep, exc)
        return RepetitionResult(rep, repetition_seed(int(cfg["experiment"]["seed"]), rep), [], False,
                                error=f"{type(exc).__name__}: {exc}")


@dataclass
class ExperimentReport:
    config_hash: str
    rows: list
    summary: list
    seeds: list
    oracle_ok: bool
    failures: list
    runtime: dict = field(default_factory=dict)

    def method_mean(self, method: str, key: str) -> float:
        vals = [r[key] for r in self.rows if r["method"] == method]
        return float(np.mean(vals)) if vals else math.nan

    def write(self, out_dir, stem: str = "experiment") -> list[Path]:
        """CSV files stamped with the config hash; runtimes are left out so reruns match byte for byte."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{stem}_rows.csv", out / f"{stem}_summary.csv"]
        _write_csv(paths[0], self.rows, self.config_hash)
        _write_csv(paths[1], self.summary, self.config_hash)
        if self.failures:
            paths.append(out / f"{stem}_failures.csv")
            _write_csv(paths[2], self.failures, self.config_hash)
        return paths


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, rows, config_hash):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if not rows:
            fh.write("config_hash\n" + config_hash + "\n")
            return
        keys = list(rows[0])
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["config_hash"] + keys)
        for row in rows:
            out.writerow([config_hash] + [_fmt(row[k]) for k in keys])


def summarize(rows, x_key: str | None = None, x_value=None):
    out = []
    for name in ALL_METHODS:
        sel = [r for r in rows if r["method"] == name]
        if not sel:
            continue
        entry = {"method": name}
        if x_key:
            entry[x_key] = x_value
        entry["reps"] = len(sel)
        for key in ("accuracy", "energy_term", "time_term", "utility"):
            vals = np.array([r[key] for r in sel if key in r], dtype=float)
            if vals.size:
                entry[f"{key}_mean"] = float(vals.mean())
                entry[f"{key}_std"] = float(vals.std())
        out.append(entry)
    return out


def run_experiment(cfg: Config, reps: int | None = None, keep_decisions: bool = False) -> ExperimentReport:
    """All repetitions of the utility/accuracy comparison, aggregated in seed order."""
    reps = int(cfg["experiment"]["reps"]) if reps is None else reps
    jobs = [(cfg.values, rep, keep_decisions) for rep in range(reps)]
    clock = time.perf_counter()
    workers = min(worker_count(), max(reps, 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_safe_repetition, jobs))
    else:
        results = [_safe_repetition(job) for job in jobs]
    results.sort(key=lambda r: r.rep)
    rows, failures = [], []
    for res in results:
        if res.error:
            failures.append({"rep": res.rep, "seed": res.seed, "error": res.error})
        rows.extend(res.rows)
        # every reported utility must come from a feasible decision
        for t, _, dec in res.decisions:
            problems = scheduler.check_constraints(dec, build_instance(cfg, res.seed), t)
            if problems:
                raise scheduler.ConstraintViolation(problems)
    nx = {"wall": time.perf_counter() - clock}
    return ExperimentReport(cfg.digest(), rows, summarize(rows), [r.seed for r in results],
                            all(r.oracle_ok for r in results if not r.error), failures, nx)


def run_sample_sweep(cfg: Config, sizes=(30, 60, 90, 120, 150), test_size: int = 50,
                     reps: int | None = None, methods=METHODS) -> ExperimentReport:
    """Accuracy against the number of training samples per user.

    Each repetition labels one long horizon; every size trains on the
    earliest ``size`` samples and all sizes share the same final
    ``test_size`` samples.
    """
    reps = int(cfg["experiment"]["reps"]) if reps is None else reps
    sizes = sorted(int(s) for s in sizes)
    T = sizes[-1] + test_size + 1
    base = int(cfg["experiment"]["seed"])
    f_cfg = cfg["fedsvm"]
    rows = []
    seeds = []
    clock = time.perf_counter()
    for rep in range(reps):
        seed = repetition_seed(base, rep)
        seeds.append(seed)
        labels = oracle.association_labels(build_instance(cfg, seed, T))
        test_times = np.arange(T - 1 - test_size, T - 1)
        truth = labels.assignment[test_times + 1]
        for size in sizes:
            train_times = np.arange(size)
            norm = labels.normalizer(train_times)
            models = train_methods(labels, train_times, norm, cfg.hyper(), int(f_cfg["iterations"]),
                                   f_cfg["tol"], seed, methods)
            for name in methods:
                hits = 0
                for m in range(labels.num_users):
                    X = norm(labels.features[test_times, m])
                    hits += int(np.sum(fedsvm.predict_association(models.W[name][m], X) == truth[:, m]))
                rows.append({"method": name, "samples": size, "rep": rep, "seed": seed,
                             "accuracy": hits / truth.size})
    summary = []
    for size in sizes:
        summary.extend(summarize([r for r in rows if r["samples"] == size], "samples", size))
    return ExperimentReport(cfg.digest(), rows, summary, seeds, True, [],
                            {"wall": time.perf_counter() - clock})
