"""Runtime property checks behind ``habmec verify``.

Each check draws its own random instances from a fixed seed, compares a
fast routine against an independent reference and returns a
``CheckResult``. The pytest suite exercises the same properties at larger
sizes; this module is what a user can run against an installed copy.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import fedsvm, oracle, scheduler
from .netmodel import ComputeParams, RadioParams
from .scheduler import PerHabProblem


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def random_split_problem(rng, M: int, compute: ComputeParams | None = None,
                         radio: RadioParams | None = None, tightness: float | None = None) -> PerHabProblem:
    """A feasible per-HAB split problem with rates of the right order for the default radio.

    ``tightness`` scales the budget between the hover energy alone (0) and
    full offload of every task (1); by default it is drawn uniformly so the
    budget binds in a good share of instances.
    """
    compute = compute or ComputeParams()
    radio = radio or RadioParams()
    z = rng.uniform(2e5, 2e6, M)
    up = rng.uniform(5e7, 3e8, M)
    down = rng.uniform(5e7, 3e8, M)
    base = PerHabProblem.build(np.arange(M), z, up, down, compute, radio, budget=np.inf)
    hover = M * base.hover_energy
    full = float(base.hab_energy_slope.sum())
    frac = rng.uniform(0.05, 1.2) if tightness is None else tightness
    base.budget = hover + frac * full
    return base


def _sjf_vs_brute(rng, count=100):
    worst = 0.0
    for _ in range(count):
        l = rng.exponential(1.0, rng.integers(2, 8))
        value = scheduler.weighted_sum_delay(l, scheduler.sjf_sequence(l))
        _, best = oracle.brute_force_sequence(l)
        worst = max(worst, value - best)
    return worst <= 0.0, f"{count} instances, worst excess {worst:.3g}"


def _weighted_delay_identity(rng, count=300):
    worst = 0.0
    for _ in range(count):
        l = rng.exponential(1.0, rng.integers(1, 12))
        ranks = rng.permutation(l.size) + 1
        direct = float(scheduler.queue_delays(l, ranks).sum())
        worst = max(worst, abs(direct - scheduler.weighted_sum_delay(l, ranks)) / max(direct, 1.0))
    return worst <= 1e-12, f"{count} permutations, worst relative error {worst:.3g}"


def _splits_vs_grid(rng, count=60, step=1e-3):
    worst_gap, worst_feas = 0.0, 0.0
    for _ in range(count):
        problem = random_split_problem(rng, int(rng.integers(1, 4)))
        ranks = rng.permutation(problem.size) + 1
        fast = scheduler.optimize_splits(problem, ranks)
        _, grid = oracle.grid_search_splits(problem, ranks, step)
        worst_gap = max(worst_gap, (fast.objective - grid) / abs(grid))
        worst_feas = max(worst_feas, problem.hab_energy(fast.beta) - problem.budget,
                         -fast.beta.min(), fast.beta.max() - 1.0)
    ok = worst_gap <= 1e-3 and worst_feas <= scheduler.FEAS_TOL * 1e3
    return ok, f"{count} instances, worst relative gap {worst_gap:.3g}, worst violation {worst_feas:.3g}"


def _omega_closed_form(rng, count=20, samples=200):
    worst_attain, beaten = 0.0, 0
    for _ in range(count):
        N = int(rng.integers(2, 4))   # N <= d keeps W^T W invertible
        W = rng.standard_normal((3, N))
        omega = fedsvm.update_structure_matrix(W, 0.0)
        value = float(np.trace(W @ np.linalg.inv(omega) @ W.T))
        root = np.sqrt(np.clip(np.linalg.eigvalsh(W.T @ W), 0.0, None)).sum()
        worst_attain = max(worst_attain, abs(value - root ** 2) / root ** 2)
        for _ in range(samples):
            cand = fedsvm.random_structure_matrix(N, rng)
            if np.linalg.eigvalsh(cand).min() <= 1e-9:
                continue
            if float(np.trace(W @ np.linalg.inv(cand) @ W.T)) < value - 1e-9:
                beaten += 1
    ok = worst_attain <= 1e-8 and beaten == 0
    return ok, f"{count} W, attain error {worst_attain:.3g}, random Omega below closed form: {beaten}"


def _random_datasets(rng, N, K=6, d=3):
    return [fedsvm.LocalDataset(rng.uniform(0, fedsvm.FEATURE_SCALE, (K, d)),
                                rng.integers(0, 2, K).astype(float)) for _ in range(N)]


def _duality(rng, count=30):
    hyper = fedsvm.Hyper()
    worst_fy, worst_grad, worst_gap = 0.0, 0.0, np.inf
    for _ in range(count):
        N = int(rng.integers(1, 4))
        data = _random_datasets(rng, N)
        omega = fedsvm.random_structure_matrix(N, rng)
        Z = rng.standard_normal((3, N))
        W = fedsvm.conjugate_regularizer_grad(Z, omega, hyper)
        # Fenchel-Young equality at W = grad R*(Z)
        fy = fedsvm.regularizer(W, omega, hyper) + fedsvm.conjugate_regularizer(Z, omega, hyper) - np.sum(W * Z)
        worst_fy = max(worst_fy, abs(fy))
        h = 1e-6
        E = rng.standard_normal(Z.shape)
        fd = (fedsvm.conjugate_regularizer(Z + h * E, omega, hyper)
              - fedsvm.conjugate_regularizer(Z - h * E, omega, hyper)) / (2 * h)
        worst_grad = max(worst_grad, abs(fd - np.sum(W * E)))
        alpha = [rng.standard_normal(ds.size) for ds in data]
        worst_gap = min(worst_gap, fedsvm.duality_gap(alpha, omega, data, hyper))
    ok = worst_fy <= 1e-5 and worst_grad <= 1e-5 and worst_gap >= 0
    return ok, f"Fenchel-Young {worst_fy:.3g}, gradient FD {worst_grad:.3g}, smallest gap {worst_gap:.3g}"


def _federation(rng):
    hyper = fedsvm.Hyper()
    data = _random_datasets(rng, 1, K=20)
    state, trace = fedsvm.train(data, hyper, iterations=500, tol=1e-10)
    _, _, central = fedsvm.centralized_solve(data, hyper)
    single = abs(-trace.dual[-1] - central)
    data = _random_datasets(rng, 3, K=20)
    state, trace = fedsvm.train(data, hyper, iterations=500, tol=1e-6)
    _, _, central = fedsvm.centralized_solve(data, hyper)
    multi = abs(trace.primal[-1] - central)
    ok = single <= 1e-6 and multi <= 1e-4 and trace.gap[-1] <= 1e-6
    return ok, f"N=1 dual vs centralized {single:.3g}, N=3 primal vs centralized {multi:.3g}"


def _descent_inequality(rng):
    hyper = fedsvm.Hyper()
    data = _random_datasets(rng, 3, K=15)
    _, trace = fedsvm.train(data, hyper, iterations=300, tol=1e-8)
    worst = max(trace.descent_residual)
    return worst <= 1e-9, f"{len(trace)} iterations, worst residual {worst:.3g}"


CHECKS = {
    "sjf-optimal": _sjf_vs_brute,
    "weighted-delay-identity": _weighted_delay_identity,
    "split-optimal": _splits_vs_grid,
    "omega-closed-form": _omega_closed_form,
    "duality": _duality,
    "federation-consistency": _federation,
    "descent-inequality": _descent_inequality,
}


def run_checks(seed: int = 0, names=None) -> list[CheckResult]:
    names = list(CHECKS) if names is None else list(names)
    out = []
    for i, name in enumerate(names):
        rng = np.random.default_rng([seed, i])
        clock = time.perf_counter()
        try:
            ok, detail = CHECKS[name](rng)
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail, time.perf_counter() - clock))
    return out
