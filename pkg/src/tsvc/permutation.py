"""Permutation null for the maximally selected LR statistic.

Each replicate draws a uniform permutation of all ``n`` values of the
modifier column, recomputes the admissible split points inside the node
from the permuted values and takes the maximum LR statistic over them.
Replicate ``r`` uses its own PCG64 stream derived from
``SeedSequence(seed, spawn_key=key + (r,))``, so results do not depend on
the order or the threads in which replicates run.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgs, NoAdmissibleSplit
from .splits import DEFAULT_MIN_NODE_SIZE, CurrentModel, max_selected

log = logging.getLogger(__name__)

DEFAULT_N_PERM = 1000


@dataclass
class PermTestResult:
    t_obs: float
    n_perm: int
    n_geq: int
    p_value: float
    alpha_local: float
    significant: bool
    seed: int


def alpha_local(alpha: float, p: int) -> float:
    """Per-test level ``alpha / (p - 1)`` for ``p`` covariates."""
    if not 0.0 < alpha < 1.0:
        raise InvalidArgs(f"alpha must lie in (0, 1), got {alpha}")
    if int(p) != p or p < 2:
        raise InvalidArgs(f"need at least two covariates, got p={p}")
    return alpha / (p - 1)


def replicate_rng(seed: int, key: tuple, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key) + (int(rep),))
    return np.random.Generator(np.random.PCG64(ss))


def count_exceedances(t_obs: float, stats) -> int:
    # relative slack so that t_obs == 0 counts every replicate
    slack = 1e-10 * max(1.0, abs(t_obs))
    return int(np.sum(np.asarray(stats) >= t_obs - slack))


def permutation_p_value(n_geq: int, n_perm: int) -> float:
    return (n_geq + 1.0) / (n_perm + 1.0)


def run_replicates(stat_fn, n_perm: int, seed: int, key: tuple, n: int, n_jobs: int = 1) -> np.ndarray:
    """Evaluate ``stat_fn(permutation)`` for ``n_perm`` seeded permutations of ``range(n)``."""

    def one(rep):
        return stat_fn(replicate_rng(seed, key, rep).permutation(n))

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            return np.fromiter(pool.map(one, range(n_perm)), dtype=float, count=n_perm)
    return np.fromiter((one(r) for r in range(n_perm)), dtype=float, count=n_perm)


def permutation_test(current: CurrentModel, j: int, node_id: int, m: int, n_perm: int = DEFAULT_N_PERM,
                     alpha_local: float = 0.05, seed: int = 0, *, t_obs: float | None = None,
                     min_node_size: int = DEFAULT_MIN_NODE_SIZE, key: tuple = (),
                     n_jobs: int = 1) -> PermTestResult:
    """Permutation test of the maximally selected statistic for (j, node, m)."""
    if n_perm < 1:
        raise InvalidArgs("n_perm must be at least 1")
    if t_obs is None:
        t_obs = max_selected(current, j, node_id, m, min_node_size).t_max
    xm = current.data.column(m)

    def stat(perm):
        try:
            return max_selected(current, j, node_id, m, min_node_size, modifier_values=xm[perm]).t_max
        except NoAdmissibleSplit:
            log.debug("permuted modifier %d has no admissible split; statistic set to 0", m)
            return 0.0

    stats = run_replicates(stat, n_perm, seed, key, current.data.n, n_jobs)
    n_geq = count_exceedances(t_obs, stats)
    p_value = permutation_p_value(n_geq, n_perm)
    return PermTestResult(float(t_obs), int(n_perm), n_geq, p_value, float(alpha_local),
                          bool(p_value <= alpha_local), int(seed))
