"""Independent reference computations used only by the tests."""
import itertools

import numpy as np
from scipy.optimize import linprog

from habmec import netmodel as nm


def split_lp(problem, ranks):
    """Epigraph LP of the split problem for fixed ranks, solved by HiGHS.

    Variables are (beta_1..beta_M, t_1..t_M) with t_m above both affine
    branches of the task time; returns (beta, objective).
    """
    M = problem.size
    weights = M - np.asarray(ranks) + 1
    E, L = problem.edge_slope, problem.local_time
    c = np.concatenate([problem.weight_energy * problem.energy_slope, problem.weight_time * weights])
    A, b = [], []
    for m in range(M):
        row = np.zeros(2 * M)
        row[m], row[M + m] = E[m], -1.0        # E beta - t <= 0
        A.append(row), b.append(0.0)
        row = np.zeros(2 * M)
        row[m], row[M + m] = -L[m], -1.0       # L (1 - beta) - t <= 0
        A.append(row), b.append(-L[m])
    row = np.zeros(2 * M)
    row[:M] = problem.hab_energy_slope
    A.append(row), b.append(problem.spare_budget)
    bounds = [(0.0, 1.0)] * M + [(0.0, None)] * M
    res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    assert res.status == 0, res.message
    const = problem.weight_energy * float(problem.energy_intercept.sum())
    return res.x[:M], float(res.fun) + const


def straight_line_utility(scenario, t, assignment, ranks, betas):
    """Sum of weighted per-user energy and completion times, term by term."""
    cp, radio = scenario.compute, scenario.radio
    up, down = scenario.link_rates(t)
    z = scenario.task_sizes(t)
    total = 0.0
    for m in range(scenario.num_users):
        n = assignment[m]
        b = betas[m]
        e = cp.user_op_energy + cp.user_chip_coeff * cp.user_cpu_freq ** 2 * (1 - b) * z[m] \
            + radio.tx_power_user * b * z[m] / up[m, n]
        own = max(b * z[m] / up[m, n] + cp.hab_cycles_per_bit * b * z[m] / cp.hab_cpu_freq
                  + b * z[m] / down[m, n],
                  cp.user_cycles_per_bit * (1 - b) * z[m] / cp.user_cpu_freq)
        wait = 0.0
        for k in range(scenario.num_users):
            if k != m and assignment[k] == n and ranks[k] < ranks[m]:
                bk = betas[k]
                wait += nm.total_task_time(bk, 1, up[k, n], down[k, n], z[k], cp)
        total += cp.weight_energy * e + cp.weight_time * (wait + own)
    return total


def all_orders_min(l):
    best = np.inf
    for perm in itertools.permutations(range(len(l))):
        clock, total = 0.0, 0.0
        for m in perm:
            clock += l[m]
            total += clock
        best = min(best, total)
    return best
