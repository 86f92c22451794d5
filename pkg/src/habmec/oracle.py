"""Brute-force reference solvers.

These are the ground truth behind the training labels and the tests, and
are written to be obviously correct rather than fast.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import scheduler
from .fedsvm import LocalDataset, Normalizer
from .scheduler import InfeasibleBudgetError, PerHabProblem

ENUMERATION_LIMIT = 10_000_000
GRID_LIMIT = 20_000_000
_CHUNK = 200_000


class SizeError(ValueError):
    """An exhaustive search would exceed its enumeration guard."""


class NoFeasibleAssociation(ValueError):
    """No association of every user to a covering HAB meets the budgets."""


@dataclass
class OracleResult:
    assignment: np.ndarray
    association: np.ndarray
    utility: float
    decision: scheduler.AllocationDecision
    table: np.ndarray | None = None


def subset_utilities(scenario, t: int, n: int) -> np.ndarray:
    """Optimal per-HAB objective for every user subset (bitmask over users).

    Subsets containing a user outside the HAB's coverage, or whose budget
    cannot be met, are ``inf``; the empty subset costs nothing.
    """
    M = scenario.num_users
    covered = np.flatnonzero(scenario.coverage(t)[:, n])
    table = np.full(1 << M, np.inf)
    table[0] = 0.0
    up, down = scenario.link_rates(t)
    z = scenario.task_sizes(t)
    full = PerHabProblem.build(covered, z[covered], up[covered, n], down[covered, n],
                               scenario.compute, scenario.radio)
    for size in range(1, covered.size + 1):
        for combo in itertools.combinations(range(covered.size), size):
            idx = np.array(combo)
            users = covered[idx]
            sub = PerHabProblem(
                users=users, z=full.z[idx], uplink=full.uplink[idx], downlink=full.downlink[idx],
                local_cycles_per_sec=full.local_cycles_per_sec[idx],
                local_energy_per_bit=full.local_energy_per_bit[idx], op_energy=full.op_energy[idx],
                hab_seconds_per_bit=full.hab_seconds_per_bit, hab_energy_per_bit=full.hab_energy_per_bit,
                hover_energy=full.hover_energy, budget=full.budget, tx_power_user=full.tx_power_user,
                tx_power_hab=full.tx_power_hab, weight_energy=full.weight_energy,
                weight_time=full.weight_time)
            try:
                value = scheduler.solve_per_hab(sub).objective
            except InfeasibleBudgetError:
                value = np.inf
            table[int(np.sum(1 << users))] = value
    return table


def _digits(index: np.ndarray, M: int, N: int) -> np.ndarray:
    powers = N ** np.arange(M - 1, -1, -1, dtype=np.int64)
    return (index[:, None] // powers[None, :]) % N


def exhaustive_association(scenario, t: int, audit: bool = False) -> OracleResult:
    """Minimise the utility over all N^M one-HAB-per-user associations.

    Candidates are scanned in lexicographic order of the assignment vector
    (user 0 most significant), so the first minimiser wins ties.
    """
    M, N = scenario.num_users, scenario.num_habs
    total = N ** M
    if total > ENUMERATION_LIMIT:
        raise SizeError(f"{N}^{M} = {total} associations exceeds the guard of {ENUMERATION_LIMIT}")
    uncovered = np.flatnonzero(~scenario.coverage(t).any(axis=1))
    if uncovered.size:
        raise NoFeasibleAssociation(f"users {uncovered.tolist()} are outside every HAB's coverage")
    tables = [subset_utilities(scenario, t, n) for n in range(N)]
    bits = (1 << np.arange(M, dtype=np.int64))
    best_value, best_index = np.inf, -1
    audit_table = np.empty(total) if audit else None
    for start in range(0, total, _CHUNK):
        index = np.arange(start, min(start + _CHUNK, total), dtype=np.int64)
        digits = _digits(index, M, N)
        value = np.zeros(index.size)
        for n in range(N):
            value += tables[n][((digits == n) * bits).sum(axis=1)]
        if audit:
            audit_table[index] = value
        k = int(np.argmin(value))
        if value[k] < best_value:
            best_value, best_index = float(value[k]), int(index[k])
    if not np.isfinite(best_value):
        raise NoFeasibleAssociation(f"no budget-feasible association at t={t}")
    assignment = _digits(np.array([best_index]), M, N)[0].astype(int)
    decision = scheduler.allocate(scenario, t, assignment)
    return OracleResult(assignment, decision.association, best_value, decision, audit_table)


def brute_force_sequence(proc_times):
    """Best service order by trying every permutation: (ranks, weighted delay)."""
    l = np.asarray(proc_times, dtype=float)
    if l.size > 8:
        raise SizeError(f"{l.size}! permutations exceeds the 8-user guard")
    best, best_ranks = np.inf, None
    for perm in itertools.permutations(range(1, l.size + 1)):
        ranks = np.array(perm)
        value = scheduler.weighted_sum_delay(l, ranks)
        if value < best:
            best, best_ranks = value, ranks
    return best_ranks, best


def _user_costs(problem: PerHabProblem, ranks, grid):
    weights = problem.size - np.asarray(ranks) + 1
    b = grid[None, :]
    energy = problem.energy_intercept[:, None] + problem.energy_slope[:, None] * b
    delay = np.maximum(problem.edge_slope[:, None] * b, problem.local_time[:, None] * (1.0 - b))
    return problem.weight_energy * energy + problem.weight_time * weights[:, None] * delay


def grid_search_splits(problem: PerHabProblem, ranks, step: float):
    """Feasible grid minimiser of the split problem: (beta, objective).

    Up to four users the grid is exhaustive: every combination of the first
    M-1 users is enumerated and the last user's best budget-feasible grid
    value is looked up through a running minimum. Larger problems use
    independent per-user grids and reject the result if it breaks the
    budget.
    """
    if not 0 < step <= 0.1:
        raise ValueError("step must lie in (0, 0.1]")
    scheduler._validate_ranks(ranks)
    if problem.size == 0:
        return np.zeros(0), 0.0
    points = int(round(1.0 / step)) + 1
    grid = np.linspace(0.0, 1.0, points)
    cost = _user_costs(problem, ranks, grid)
    h = problem.hab_energy_slope
    spare = problem.spare_budget
    if spare < 0:
        raise InfeasibleBudgetError("no feasible grid point: hover energy alone exceeds the budget")

    if problem.size > 4:
        pick = np.argmin(cost, axis=1)
        beta = grid[pick]
        if float(h @ beta) > spare * (1 + 1e-12):
            raise InfeasibleBudgetError("per-user grid optimum violates the budget")
        return beta, float(cost[np.arange(problem.size), pick].sum())

    head = problem.size - 1
    if points ** head > GRID_LIMIT:
        raise SizeError(f"{points}^{head} grid combinations exceeds the guard of {GRID_LIMIT}")
    last_cost = cost[-1]
    running = np.minimum.accumulate(last_cost)
    fresh = np.concatenate([[True], last_cost[1:] < running[:-1]])
    running_arg = np.maximum.accumulate(np.where(fresh, np.arange(points), 0))
    # largest grid index of the last user that keeps the budget
    last_energy = h[-1] * grid

    best = (np.inf, None)
    shape = (points,) * head
    if head == 0:
        combos = np.zeros((1, 0), dtype=int)
    else:
        combos = np.indices(shape).reshape(head, -1).T
    for start in range(0, combos.shape[0], _CHUNK):
        chunk = combos[start:start + _CHUNK]
        used = (grid[chunk] * h[:head]).sum(axis=1) if head else np.zeros(1)
        head_cost = cost[np.arange(head), chunk].sum(axis=1) if head else np.zeros(1)
        room = spare - used
        cap = np.searchsorted(last_energy, room * (1 + 1e-12), side="right") - 1
        ok = cap >= 0
        if not ok.any():
            continue
        value = np.full(chunk.shape[0], np.inf)
        value[ok] = head_cost[ok] + running[cap[ok]]
        k = int(np.argmin(value))
        if value[k] < best[0]:
            beta = np.concatenate([grid[chunk[k]], [grid[running_arg[cap[k]]]]])
            best = (float(value[k]), beta)
    if best[1] is None:
        raise InfeasibleBudgetError("no feasible grid point")
    return best[1], best[0]


@dataclass
class AssociationLabels:
    """Oracle associations over a horizon plus the raw features behind them.

    ``assignment[t, m]`` is the oracle HAB of user m at t; ``features[t, m]``
    holds (x, y, z). Sample t of user m pairs ``features[t, m]`` with the
    association at t+1 and is held by HAB ``assignment[t, m]``.
    """

    assignment: np.ndarray
    utility: np.ndarray
    features: np.ndarray
    num_habs: int
    area_radius: float

    @property
    def instants(self) -> int:
        return self.assignment.shape[0]

    @property
    def num_users(self) -> int:
        return self.assignment.shape[1]

    def targets(self, m: int) -> np.ndarray:
        return self.assignment[1:, m]

    def holders(self, m: int) -> np.ndarray:
        return self.assignment[:-1, m]

    def datasets(self, m: int, normalizer: Normalizer, times=None) -> list[LocalDataset]:
        """HAB-partitioned training sets of user ``m`` over sample ``times``."""
        times = np.arange(self.instants - 1) if times is None else np.asarray(times, dtype=int)
        X = normalizer(self.features[times, m])
        holder = self.assignment[times, m]
        label = (self.assignment[times + 1, m] == holder).astype(float)
        return [LocalDataset(X[holder == n], label[holder == n], times[holder == n])
                for n in range(self.num_habs)]

    def normalizer(self, times=None) -> Normalizer:
        times = np.arange(self.instants - 1) if times is None else np.asarray(times, dtype=int)
        return Normalizer.fit(self.features[times].reshape(-1, 3), self.area_radius)


def association_labels(scenario, T: int | None = None) -> AssociationLabels:
    """Run the oracle at every instant of the horizon."""
    T = scenario.trace.instants if T is None else T
    if T < 2:
        raise ValueError("need a horizon of at least 2 instants")
    results = [exhaustive_association(scenario, t) for t in range(T)]
    assignment = np.array([r.assignment for r in results], dtype=int)
    utility = np.array([r.utility for r in results])
    features = np.stack([scenario.features(t) for t in range(T)])
    return AssociationLabels(assignment, utility, features, scenario.num_habs, scenario.area_radius)


def label_dataset(scenario, T: int | None = None):
    """Per-user, HAB-partitioned training sets over the whole horizon.

    Returns ``(datasets, labels)`` where ``datasets[m][n]`` is what HAB n
    holds about user m, normalised with constants fitted on the horizon.
    """
    labels = association_labels(scenario, T)
    norm = labels.normalizer()
    return [labels.datasets(m, norm) for m in range(labels.num_users)], labels
