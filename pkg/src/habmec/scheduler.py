"""Service sequencing, task splitting and utility evaluation for a fixed association.

Per-HAB subproblems are independent: given the users a HAB serves, the
optimal order is shortest-processing-time first and, for a fixed order, the
optimal offload fractions solve a small linear program with a single
coupling energy budget.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import netmodel
from .netmodel import ComputeParams, RadioParams

FEAS_TOL = 1e-9


class InfeasibleBudgetError(ValueError):
    """Even zero offloading exceeds a HAB's energy budget."""


class ConstraintViolation(ValueError):
    """An allocation decision breaks one or more problem constraints."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _validate_ranks(ranks):
    ranks = np.asarray(ranks)
    if ranks.ndim != 1 or sorted(ranks.tolist()) != list(range(1, ranks.size + 1)):
        raise ValueError(f"ranks {ranks.tolist()} are not a permutation of 1..{ranks.size}")
    return ranks


def access_delay(ranks, proc_times, m: int) -> float:
    """Waiting time of user ``m``: processing times of everyone served before it."""
    ranks = _validate_ranks(ranks)
    l = np.asarray(proc_times, dtype=float)
    return float(l[ranks < ranks[m]].sum())


def queue_delays(proc_times, ranks) -> np.ndarray:
    """Access delay plus own processing time for every user, by simulating the queue."""
    ranks = _validate_ranks(ranks)
    l = np.asarray(proc_times, dtype=float)
    order = np.argsort(ranks)
    finish = np.empty_like(l)
    clock = 0.0
    for m in order:
        clock += l[m]
        finish[m] = clock
    return finish


def weighted_sum_delay(proc_times, ranks) -> float:
    """Sum of completion times in closed form: user at rank q counts (n - q + 1) times."""
    ranks = _validate_ranks(ranks)
    l = np.asarray(proc_times, dtype=float)
    return float(np.dot(ranks.size - ranks + 1, l))


def sjf_sequence(proc_times) -> np.ndarray:
    """Ranks (1-based) serving users in ascending processing time, ties by index."""
    l = np.asarray(proc_times, dtype=float)
    order = np.argsort(l, kind="stable")
    ranks = np.empty(l.size, dtype=int)
    ranks[order] = np.arange(1, l.size + 1)
    return ranks


@dataclass
class PerHabProblem:
    """Task split subproblem of one HAB and the users associated with it.

    Array fields are per associated user; ``users`` holds their global indices.
    """

    users: np.ndarray
    z: np.ndarray
    uplink: np.ndarray
    downlink: np.ndarray
    local_cycles_per_sec: np.ndarray   # omega_U / f_U
    local_energy_per_bit: np.ndarray   # user chip coeff * f_U^2
    op_energy: np.ndarray
    hab_seconds_per_bit: float         # omega_B / f_B
    hab_energy_per_bit: float          # HAB chip coeff * f_B^2
    hover_energy: float
    budget: float
    tx_power_user: float
    tx_power_hab: float
    weight_energy: float
    weight_time: float

    def __post_init__(self):
        for name in ("users", "z", "uplink", "downlink", "local_cycles_per_sec",
                     "local_energy_per_bit", "op_energy"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        self.users = self.users.astype(int)
        if np.any(self.uplink <= 0) or np.any(self.downlink <= 0):
            raise ValueError("all link rates of a per-HAB problem must be > 0")

    @classmethod
    def build(cls, users, z, uplink, downlink, compute: ComputeParams, radio: RadioParams,
              budget: float | None = None):
        users = np.atleast_1d(np.asarray(users, dtype=int))
        return cls(
            users=users, z=z, uplink=uplink, downlink=downlink,
            local_cycles_per_sec=compute.user("user_cycles_per_bit", users) / compute.user("user_cpu_freq", users),
            local_energy_per_bit=compute.user("user_chip_coeff", users) * compute.user("user_cpu_freq", users) ** 2,
            op_energy=compute.user("user_op_energy", users),
            hab_seconds_per_bit=compute.hab_cycles_per_bit / compute.hab_cpu_freq,
            hab_energy_per_bit=compute.hab_chip_coeff * compute.hab_cpu_freq ** 2,
            hover_energy=compute.hab_hover_energy,
            budget=compute.energy_budget if budget is None else budget,
            tx_power_user=radio.tx_power_user, tx_power_hab=radio.tx_power_hab,
            weight_energy=compute.weight_energy, weight_time=compute.weight_time,
        )

    @property
    def size(self) -> int:
        return self.z.size

    # every quantity below is affine in beta; these are the coefficients
    @property
    def edge_slope(self):
        return self.z * (1.0 / self.uplink + 1.0 / self.downlink + self.hab_seconds_per_bit)

    @property
    def local_time(self):
        return self.z * self.local_cycles_per_sec

    @property
    def energy_intercept(self):
        return self.op_energy + self.local_energy_per_bit * self.z

    @property
    def energy_slope(self):
        return self.z * (self.tx_power_user / self.uplink - self.local_energy_per_bit)

    @property
    def hab_energy_slope(self):
        return self.z * (self.hab_energy_per_bit + self.tx_power_hab / self.downlink)

    @property
    def spare_budget(self) -> float:
        return self.budget - self.size * self.hover_energy

    def processing_times(self, beta) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        return np.maximum(self.edge_slope * beta, self.local_time * (1.0 - beta))

    def user_energy(self, beta) -> np.ndarray:
        return self.energy_intercept + self.energy_slope * np.asarray(beta, dtype=float)

    def hab_energy(self, beta) -> float:
        return float(self.size * self.hover_energy + np.dot(self.hab_energy_slope, beta))

    def objective(self, ranks, beta) -> float:
        weights = self.size - np.asarray(ranks) + 1
        return float(np.sum(self.weight_energy * self.user_energy(beta)
                            + self.weight_time * weights * self.processing_times(beta)))


@dataclass
class SplitResult:
    beta: np.ndarray
    objective: float
    multiplier: float
    energy_used: float


def optimize_splits(problem: PerHabProblem, ranks) -> SplitResult:
    """Optimal offload fractions for a fixed service order.

    Each user's cost is convex piecewise-linear in beta with a kink where the
    edge and local paths take equal time, so it is made of two segments. The
    budget is priced by a multiplier ``nu``: for a given ``nu`` a user takes a
    segment iff its slope plus ``nu`` times its HAB energy per unit beta is
    negative. The critical ``nu`` is located by binary search over the
    segments' break-even prices, and the marginal segment is filled exactly
    up to the budget.
    """
    if problem.size == 0:
        return SplitResult(np.zeros(0), 0.0, 0.0, 0.0)
    ranks = _validate_ranks(ranks)
    spare = problem.spare_budget
    if spare < 0:
        raise InfeasibleBudgetError(
            f"hover energy {problem.size * problem.hover_energy:.6g} J of {problem.size} users "
            f"exceeds the budget {problem.budget:.6g} J")

    weights = problem.size - ranks + 1
    edge, local = problem.edge_slope, problem.local_time
    kink = local / (edge + local)
    e1 = problem.weight_energy * problem.energy_slope
    t_weight = problem.weight_time * weights
    h = problem.hab_energy_slope

    # segment j < M covers [0, kink_j], segment M + j covers [kink_j, 1]
    starts = np.concatenate([np.zeros(problem.size), kink])
    lengths = np.concatenate([kink, 1.0 - kink])
    slopes = np.concatenate([e1 - t_weight * local, e1 + t_weight * edge])
    cost = np.concatenate([h, h]) * lengths
    owner = np.concatenate([np.arange(problem.size)] * 2)

    useful = np.flatnonzero((slopes < 0) & (lengths > 0))
    beta = np.zeros(problem.size)
    if useful.size == 0:
        return SplitResult(beta, problem.objective(ranks, beta), 0.0, problem.hab_energy(beta))

    price = -slopes[useful] / np.concatenate([h, h])[useful]
    order = useful[np.argsort(-price, kind="stable")]
    cumulative = np.cumsum(cost[order])
    if cumulative[-1] <= spare:
        take, nu = order, 0.0
        partial = None
    else:
        k = int(np.searchsorted(cumulative, spare, side="right"))
        take = order[:k]
        partial = order[k]
        nu = float(-slopes[partial] / h[owner[partial]])
    for j in take:
        beta[owner[j]] = max(beta[owner[j]], starts[j] + lengths[j])
    if partial is not None:
        used = problem.hab_energy(beta) - problem.size * problem.hover_energy
        room = max(spare - used, 0.0)
        m = owner[partial]
        beta[m] = starts[partial] + min(lengths[partial], room / h[m])
        over = problem.hab_energy(beta) - problem.budget
        if over > 0:
            beta[m] = max(starts[partial], beta[m] - over / h[m])
    beta = np.clip(beta, 0.0, 1.0)
    return SplitResult(beta, problem.objective(ranks, beta), nu, problem.hab_energy(beta))


@dataclass
class PerHabSolution:
    ranks: np.ndarray
    beta: np.ndarray
    objective: float
    iterations: int
    converged: bool


def solve_per_hab(problem: PerHabProblem, max_iter: int = 20) -> PerHabSolution:
    """Alternate SJF ordering and split optimisation from beta = 0.5.

    Stops once the order repeats; returns the best (ranks, beta) pair seen.
    """
    if problem.size == 0:
        return PerHabSolution(np.zeros(0, dtype=int), np.zeros(0), 0.0, 0, True)
    ranks = sjf_sequence(problem.processing_times(np.full(problem.size, 0.5)))
    best = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        split = optimize_splits(problem, ranks)
        if best is None or split.objective < best[2]:
            best = (ranks, split.beta, split.objective)
        new_ranks = sjf_sequence(problem.processing_times(split.beta))
        if np.array_equal(new_ranks, ranks):
            converged = True
            break
        value = problem.objective(new_ranks, split.beta)
        if value < best[2]:
            best = (new_ranks, split.beta, value)
        ranks = new_ranks
    return PerHabSolution(best[0], best[1], best[2], it, converged)


@dataclass
class AllocationDecision:
    """Association, service order and splits for one time instant.

    ``association`` is an (M, N) 0/1 matrix, ``ranks`` holds 1-based service
    positions (0 where unassociated) and ``splits`` the offload fractions.
    """

    association: np.ndarray
    ranks: np.ndarray
    splits: np.ndarray
    utility: float = float("nan")
    energy: np.ndarray = field(default=None, repr=False)
    time: np.ndarray = field(default=None, repr=False)
    converged: bool = True

    @property
    def assignment(self) -> np.ndarray:
        """HAB index per user, -1 if unassociated."""
        a = np.asarray(self.association)
        out = np.argmax(a, axis=1)
        out[a.sum(axis=1) == 0] = -1
        return out


def hab_problem(scenario, t: int, n: int, users) -> PerHabProblem:
    """Per-HAB subproblem for HAB ``n`` serving ``users`` at instant ``t``."""
    users = np.atleast_1d(np.asarray(users, dtype=int))
    up, down = scenario.link_rates(t)
    z = scenario.task_sizes(t)
    return PerHabProblem.build(users, z[users], up[users, n], down[users, n],
                               scenario.compute, scenario.radio)


def allocate(scenario, t: int, assignment) -> AllocationDecision:
    """Solve every HAB's subproblem for a given user-to-HAB assignment."""
    assignment = np.asarray(assignment, dtype=int)
    M, N = scenario.num_users, scenario.num_habs
    A = np.zeros((M, N), dtype=int)
    Q = np.zeros((M, N), dtype=int)
    B = np.zeros((M, N))
    converged = True
    for n in range(N):
        users = np.flatnonzero(assignment == n)
        if users.size == 0:
            continue
        sol = solve_per_hab(hab_problem(scenario, t, n, users))
        A[users, n] = 1
        Q[users, n] = sol.ranks
        B[users, n] = sol.beta
        converged &= sol.converged
    decision = AllocationDecision(A, Q, B, converged=converged)
    return evaluate(decision, scenario, t)


def check_constraints(decision: AllocationDecision, scenario, t: int) -> list[str]:
    """List every constraint the decision violates (empty when feasible)."""
    A = np.asarray(decision.association)
    Q = np.asarray(decision.ranks)
    B = np.asarray(decision.splits, dtype=float)
    M, N = scenario.num_users, scenario.num_habs
    problems = []
    if A.shape != (M, N) or Q.shape != (M, N) or B.shape != (M, N):
        return [f"decision matrices must have shape {(M, N)}"]
    if not np.all((A == 0) | (A == 1)):
        problems.append("association entries must be 0 or 1")
    rows = A.sum(axis=1)
    for m in np.flatnonzero(rows > 1):
        problems.append(f"user {m} is associated with {rows[m]} HABs")
    covered = scenario.coverage(t)
    for m, n in np.argwhere((A == 1) & ~covered):
        problems.append(f"user {m} is outside the coverage of HAB {n}")
    for n in range(N):
        users = np.flatnonzero(A[:, n] == 1)
        got = sorted(Q[users, n].tolist())
        if got != list(range(1, users.size + 1)):
            problems.append(f"ranks at HAB {n} are {got}, expected a permutation of 1..{users.size}")
        if np.any(Q[A[:, n] == 0, n] != 0):
            problems.append(f"HAB {n} ranks an unassociated user")
    if np.any(B < -FEAS_TOL) or np.any(B > 1 + FEAS_TOL):
        problems.append("splits must lie in [0, 1]")
    up, down = scenario.link_rates(t)
    z = scenario.task_sizes(t)
    budget = scenario.compute.energy_budget
    for n in range(N):
        users = np.flatnonzero(A[:, n] == 1)
        if users.size == 0:
            continue
        used = float(np.sum(netmodel.hab_energy(np.clip(B[users, n], 0, 1), 1, z[users], down[users, n],
                                                scenario.compute, n, scenario.radio)))
        if used > budget * (1 + FEAS_TOL):
            problems.append(f"HAB {n} uses {used:.6g} J over its budget {budget:.6g} J")
    return problems


def evaluate(decision: AllocationDecision, scenario, t: int) -> AllocationDecision:
    """Fill in per-user energy/delay and the weighted utility of a decision.

    Raises :class:`ConstraintViolation` listing every broken constraint.
    """
    problems = check_constraints(decision, scenario, t)
    if problems:
        raise ConstraintViolation(problems)
    A = np.asarray(decision.association)
    Q = np.asarray(decision.ranks)
    B = np.clip(np.asarray(decision.splits, dtype=float), 0.0, 1.0)
    compute, radio = scenario.compute, scenario.radio
    up, down = scenario.link_rates(t)
    z = scenario.task_sizes(t)
    M = scenario.num_users
    energy = np.zeros(M)
    delay = np.zeros(M)
    for m in range(M):
        hits = np.flatnonzero(A[m] == 1)
        if hits.size == 0:
            # unassociated users compute everything locally and never queue
            energy[m] = netmodel.user_energy(0.0, 0, z[m], 1.0, compute, m, radio)
            delay[m] = netmodel.compute_time(z[m], 0.0, compute, netmodel.LOCAL, m)
            continue
        n = hits[0]
        energy[m] = netmodel.user_energy(B[m, n], 1, z[m], up[m, n], compute, m, radio)
    for n in range(scenario.num_habs):
        users = np.flatnonzero(A[:, n] == 1)
        if users.size == 0:
            continue
        l = np.array([netmodel.total_task_time(B[m, n], 1, up[m, n], down[m, n], z[m], compute, m)
                      for m in users])
        delay[users] = [access_delay(Q[users, n], l, i) + l[i] for i in range(users.size)]
    decision.energy = energy
    decision.time = delay
    decision.utility = float(np.sum(compute.weight_energy * energy + compute.weight_time * delay))
    return decision


def utility(decision: AllocationDecision, scenario, t: int) -> float:
    """Weighted energy-plus-delay of all users at instant ``t``."""
    return evaluate(decision, scenario, t).utility
