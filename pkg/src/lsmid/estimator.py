"""Least sum-of-minimums (LSM) estimation with absolute-deviation loss.

Three entry points:

* :func:`lad_regression` solves the per-mode least absolute deviation fit exactly.
* :func:`lsm_alternating` is the multi-start alternating heuristic
  (assign samples to their nearest mode, refit each mode by LAD, repeat).
* :func:`lsm_bruteforce` enumerates every switching signal; exponential, meant as
  an oracle on small instances.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, product
from math import comb
from typing import Literal, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog

from .assign import DEFAULT_TIE_TOL, AssignmentResult, canonical_assignment, cost
from .model import BudgetExceededError, Dataset

__all__ = [
    "LADResult",
    "EstimatorConfig",
    "EstimateResult",
    "BudgetExceededError",
    "EmptyModeError",
    "lad_regression",
    "lsm_alternating",
    "lsm_bruteforce",
    "estimate",
    "match_columns",
    "matched_error",
    "distinct_column_sets",
]

log = logging.getLogger(__name__)


class EmptyModeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# LAD regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LADResult:
    a: np.ndarray
    objective: float
    degenerate: bool = False


_ENUM_LIMIT = 20000


def _row_space_basis(Xs: np.ndarray, tol: float = 1e-12):
    """Orthonormal basis (n x rho) of the span of the columns of ``Xs``."""
    U, sv, _ = np.linalg.svd(Xs, full_matrices=False)
    rho = int(np.sum(sv > tol * max(sv[0], 1e-300))) if sv.size else 0
    return U[:, :rho]


def _lad_vertices(Xs: np.ndarray, ys: np.ndarray):
    """Exact LAD by enumerating interpolating fits through rank-many samples.

    Some minimizer of a LAD problem interpolates ``rank(X)`` samples, so the best
    interpolant over all such subsets is optimal.
    """
    n, k = Xs.shape
    Q = _row_space_basis(Xs)
    rho = Q.shape[1]
    if rho == 0:
        return np.zeros(n), float(np.abs(ys).sum()), False
    B = Q.T @ Xs  # rho x k, full row rank
    idx = np.array(list(combinations(range(k), rho)), dtype=int)
    M = B[:, idx].transpose(1, 2, 0)  # (C, rho, rho): rows are chosen samples
    rhs = ys[idx]
    det = np.linalg.det(M)
    scale = np.prod(np.linalg.norm(M, axis=2), axis=1)
    good = np.abs(det) > 1e-10 * np.maximum(scale, 1e-300)
    b = np.linalg.solve(M[good], rhs[good][..., None])[..., 0]  # (C', rho)
    obj = np.abs(ys[None, :] - b @ B).sum(axis=1)
    j = int(np.argmin(obj))
    best = obj[j]
    near = obj <= best + 1e-9 * (1.0 + best)
    cand = b[near]
    degenerate = bool(np.ptp(cand, axis=0).max() > 1e-9 * (1.0 + np.abs(cand).max())) if len(cand) > 1 else False
    a = Q @ b[j]
    return a, float(np.abs(ys - Xs.T @ a).sum()), degenerate


def _lad_lp(Xs: np.ndarray, ys: np.ndarray, detect_degenerate: bool):
    """LP form: minimize sum(e) subject to -e <= y - X'a <= e."""
    n, k = Xs.shape
    c = np.concatenate([np.zeros(n), np.ones(k)])
    I = np.eye(k)
    A_ub = np.block([[-Xs.T, -I], [Xs.T, -I]])
    b_ub = np.concatenate([-ys, ys])
    bounds = [(None, None)] * n + [(0, None)] * k
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs-ds")
    if res.status != 0:  # pragma: no cover - LAD is always feasible and bounded
        raise RuntimeError(f"LAD linear program failed: {res.message}")
    a = res.x[:n]
    obj = float(np.abs(ys - Xs.T @ a).sum())
    degenerate = False
    if detect_degenerate:
        # probe the optimal face along a fixed direction
        d = np.linspace(1.0, 2.0, n)
        A_eq = np.concatenate([np.zeros(n), np.ones(k)])[None, :]
        spans = []
        for sgn in (1.0, -1.0):
            r = linprog(np.concatenate([sgn * d, np.zeros(k)]), A_ub=np.vstack([A_ub, A_eq]),
                        b_ub=np.concatenate([b_ub, [obj * (1 + 1e-12) + 1e-12]]), bounds=bounds, method="highs-ds")
            spans.append(sgn * r.fun if r.status == 0 else np.nan)
        degenerate = bool(abs(spans[0] - spans[1]) > 1e-5 * (1.0 + np.abs(a).max()))
    return a, obj, degenerate


def lad_regression(X_sub, y_sub, method: Literal["auto", "enumerate", "lp"] = "auto",
                   detect_degenerate: bool = True) -> LADResult:
    """Least absolute deviation fit ``argmin_a ||y - X' a||_1``.

    ``X_sub`` is n x k (samples as columns).  ``method="enumerate"`` scans the
    interpolating vertex solutions, ``"lp"`` solves the linear program with a
    simplex method; ``"auto"`` enumerates when that is cheap.
    """
    Xs = np.atleast_2d(np.asarray(X_sub, dtype=float))
    ys = np.asarray(y_sub, dtype=float).ravel()
    n, k = Xs.shape
    if k < 1:
        raise EmptyModeError("empty mode")
    if ys.shape[0] != k:
        raise ValueError("dimension mismatch")
    if method == "auto":
        method = "enumerate" if comb(k, min(n, k)) <= _ENUM_LIMIT else "lp"
    if method == "enumerate":
        a, obj, deg = _lad_vertices(Xs, ys)
    elif method == "lp":
        a, obj, deg = _lad_lp(Xs, ys, detect_degenerate)
    else:
        raise ValueError(f"unknown LAD method {method!r}")
    return LADResult(a, obj, deg)


# ---------------------------------------------------------------------------
# Column matching helpers
# ---------------------------------------------------------------------------


def match_columns(A_ref, A) -> np.ndarray:
    """Permutation ``p`` minimizing ``sum_i ||A[:, p[i]] - A_ref[:, i]||_2``."""
    A_ref = np.atleast_2d(A_ref)
    A = np.atleast_2d(A)
    C = np.linalg.norm(A_ref[:, :, None] - A[:, None, :], axis=0)
    rows, cols = linear_sum_assignment(C)
    return cols[np.argsort(rows)]


def matched_error(A_ref, A, perm=None) -> float:
    """``sum_i ||A[:, perm[i]] - A_ref[:, i]||_2`` (best matching when ``perm`` is None)."""
    A_ref = np.atleast_2d(A_ref)
    A = np.atleast_2d(A)
    if perm is None:
        perm = match_columns(A_ref, A)
    return float(np.linalg.norm(A[:, perm] - A_ref, axis=0).sum())


def distinct_column_sets(mats, tol: float = 1e-7) -> list:
    """Deduplicate parameter matrices up to column permutation."""
    out: list = []
    for A in mats:
        if not any(np.shape(A) == np.shape(B) and matched_error(B, A) <= tol * (1 + np.abs(B).max()) for B in out):
            out.append(A)
    return out


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorConfig:
    restarts: int = 10
    max_iters: int = 100
    cost_tol: float = 1e-10
    tie_tol: float = DEFAULT_TIE_TOL
    empty_mode_policy: Literal["reseed_random_point", "reseed_worst_residual"] = "reseed_worst_residual"
    seed: int = 0
    mode: Literal["heuristic", "exact_bruteforce", "both"] = "heuristic"
    budget: int = 10**6
    n_jobs: int = 1

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1:
            raise ValueError("restarts and max_iters must be positive")
        if self.cost_tol <= 0:
            raise ValueError("cost_tol must be positive")
        if self.empty_mode_policy not in ("reseed_random_point", "reseed_worst_residual"):
            raise ValueError(f"unknown empty mode policy {self.empty_mode_policy!r}")
        if self.mode not in ("heuristic", "exact_bruteforce", "both"):
            raise ValueError(f"unknown estimator mode {self.mode!r}")


@dataclass
class EstimateResult:
    A_hat: np.ndarray
    cost: float
    assignment: AssignmentResult
    trajectory: list
    solver_status: Literal["converged", "iter_limit", "oracle_exact"]
    restarts_used: int
    optima: list = field(default_factory=list)
    empty_modes: list = field(default_factory=list)
    best_restart: int = 0
    restart_trajectories: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "cost": self.cost,
            "solver_status": self.solver_status,
            "restarts_used": self.restarts_used,
            "trajectory": list(self.trajectory),
            "assignment": self.assignment.to_dict(),
            "distinct_optima": [A.tolist() for A in self.optima],
            "empty_modes": list(self.empty_modes),
            "best_restart": self.best_restart,
        }


def _fit_modes(data: Dataset, A: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    A = A.copy()
    for i in range(A.shape[1]):
        idx = np.flatnonzero(sigma == i)
        if idx.size:
            A[:, i] = lad_regression(data.X[:, idx], data.y[idx], detect_degenerate=False).a
    return A


def _interpolant(data: Dataset, t: int) -> np.ndarray:
    x = data.X[:, t]
    nx = x @ x
    return x * (data.y[t] / nx) if nx > 0 else np.zeros_like(x)


def _reseed(data: Dataset, A: np.ndarray, asg: AssignmentResult, policy: str, rng) -> tuple[np.ndarray, bool]:
    counts = asg.counts
    empty = np.flatnonzero(counts == 0)
    if not empty.size:
        return A, False
    A = A.copy()
    resid = np.abs(asg.phi)
    order = np.lexsort((np.arange(data.N), -resid))
    for j, i in enumerate(empty):
        t = int(order[j]) if policy == "reseed_worst_residual" else int(rng.integers(data.N))
        A[:, i] = _interpolant(data, t)
    return A, True


def _initial_matrix(data: Dataset, s: int, j: int, rng) -> np.ndarray:
    """LAD fit of a random partition into s blocks.

    Even restarts draw a balanced partition. Odd restarts draw minimal blocks:
    the first s - 1 modes get n samples each and the last mode takes the rest,
    which keeps optima with a sparsely populated mode reachable.
    """
    N, n = data.N, data.n
    if j % 2 == 0 or N < s * n:
        labels = np.resize(np.arange(s), N)[rng.permutation(N)]
    else:
        labels = np.full(N, s - 1)
        labels[rng.permutation(N)[: (s - 1) * n]] = np.repeat(np.arange(s - 1), n)
    return _fit_modes(data, np.zeros((data.n, s)), labels)


def _single_restart(data: Dataset, s: int, cfg: EstimatorConfig, rng, j: int = 0) -> tuple:
    A = _initial_matrix(data, s, j, rng)
    asg = canonical_assignment(data, A, cfg.tie_tol)
    A, _ = _reseed(data, A, asg, cfg.empty_mode_policy, rng)
    asg = canonical_assignment(data, A, cfg.tie_tol)
    traj = [asg.cost]
    status = "iter_limit"
    slack = lambda c: 1e-9 * (1.0 + c)
    for _ in range(cfg.max_iters):
        A_new = _fit_modes(data, A, asg.sigma)
        # refitting on a fixed assignment cannot increase the joint cost
        joint = float(np.abs(data.y - np.einsum("ij,ij->j", data.X, A_new[:, asg.sigma])).sum())
        assert joint <= asg.cost + slack(asg.cost), "LAD step increased the cost"
        asg_new = canonical_assignment(data, A_new, cfg.tie_tol)
        assert asg_new.cost <= joint + slack(joint), "assignment step increased the cost"
        A_new, reseeded = _reseed(data, A_new, asg_new, cfg.empty_mode_policy, rng)
        if reseeded:
            before = asg_new.cost
            asg_new = canonical_assignment(data, A_new, cfg.tie_tol)
            assert asg_new.cost <= before + slack(before), "reseeding increased the cost"
        improvement = asg.cost - asg_new.cost
        A, asg = A_new, asg_new
        traj.append(asg.cost)
        if improvement < cfg.cost_tol and not reseeded:
            status = "converged"
            break
    return A, asg, traj, status


def lsm_alternating(data: Dataset, s: int, cfg: EstimatorConfig = EstimatorConfig()) -> EstimateResult:
    """Multi-start alternating minimization of the sum-of-minimums cost.

    Restart ``j`` draws its randomness from ``SeedSequence([cfg.seed, j])`` so the
    result does not depend on ``cfg.n_jobs``; ties between restarts go to the
    lowest restart index.
    """
    if s < 1:
        raise ValueError("s must be positive")
    if data.N < s:
        raise ValueError(f"need at least s={s} samples, got N={data.N}")
    if s == 1:
        fit = lad_regression(data.X, data.y)
        A = fit.a[:, None]
        asg = canonical_assignment(data, A, cfg.tie_tol)
        return EstimateResult(A, asg.cost, asg, [asg.cost], "converged", 1, [A],
                              restart_trajectories=[[asg.cost]])

    def run(j):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, j]))
        return _single_restart(data, s, cfg, rng, j)

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(cfg.n_jobs) as pool:
            runs = list(pool.map(run, range(cfg.restarts)))
    else:
        runs = [run(j) for j in range(cfg.restarts)]

    costs = np.array([r[1].cost for r in runs])
    best = int(np.argmin(costs))
    A, asg, traj, status = runs[best]
    tol = 1e-9 * (1.0 + costs[best])
    optima = distinct_column_sets([r[0] for r in runs if r[1].cost <= costs[best] + tol])
    log.debug("alternating LSM: best cost %.3g from restart %d", costs[best], best)
    return EstimateResult(A, float(asg.cost), asg, traj, status, cfg.restarts, optima,
                          best_restart=best, restart_trajectories=[list(r[2]) for r in runs])


def _canonical_labelings(N: int, s: int):
    """Switching signals up to relabeling: first occurrences appear in order 0, 1, ..."""
    if s == 1:
        yield np.zeros(N, dtype=int)
        return
    for tail in product(range(s), repeat=N - 1):
        sig = (0,) + tail
        mx = 0
        ok = True
        for lab in tail:
            if lab > mx + 1:
                ok = False
                break
            mx = max(mx, lab)
        if ok:
            yield np.array(sig, dtype=int)


def lsm_bruteforce(data: Dataset, s: int, budget: int = 10**6, tie_tol: float = DEFAULT_TIE_TOL) -> EstimateResult:
    """Global minimizer by enumerating all switching signals.

    Labelings equal up to a relabeling of modes are visited once.  Each distinct
    sample subset is fitted once by exact LAD.  Modes left empty by a labeling
    get a zero column and are reported in ``empty_modes``.
    """
    N = data.N
    if s ** N > budget:
        raise BudgetExceededError(f"s^N = {s}^{N} exceeds the enumeration budget {budget}")
    memo: dict = {}

    def fit(mask: int):
        if mask not in memo:
            idx = [t for t in range(N) if mask >> t & 1]
            memo[mask] = lad_regression(data.X[:, idx], data.y[idx], detect_degenerate=False) if idx else None
        return memo[mask]

    best = np.inf
    found: list = []
    weights = 1 << np.arange(N)
    for sig in _canonical_labelings(N, s):
        total = 0.0
        cols = []
        for i in range(s):
            sel = sig == i
            r = fit(int(weights[sel].sum())) if sel.any() else None
            cols.append(r)
            total += 0.0 if r is None else r.objective
        if total <= best + 1e-9 * (1.0 + abs(best)):
            if total < best - 1e-9 * (1.0 + abs(best)):
                found = []
            best = min(best, total)
            A = np.column_stack([np.zeros(data.n) if r is None else r.a for r in cols])
            found.append((total, A, [i for i, r in enumerate(cols) if r is None]))

    found = [f for f in found if f[0] <= best + 1e-9 * (1.0 + best)]
    optima = distinct_column_sets([f[1] for f in found])
    _, A, empty = found[0]
    asg = canonical_assignment(data, A, tie_tol)
    return EstimateResult(A, float(asg.cost), asg, [float(asg.cost)], "oracle_exact", 1, optima, empty)


def estimate(data: Dataset, s: int, cfg: EstimatorConfig = EstimatorConfig()) -> dict:
    """Run the estimator(s) selected by ``cfg.mode``; returns ``{"heuristic": ..., "oracle": ...}``."""
    out = {}
    if cfg.mode in ("heuristic", "both"):
        out["heuristic"] = lsm_alternating(data, s, cfg)
    if cfg.mode in ("exact_bruteforce", "both"):
        out["oracle"] = lsm_bruteforce(data, s, cfg.budget, cfg.tie_tol)
    return out


def recompute_cost(data: Dataset, res: EstimateResult) -> float:
    return cost(data, res.A_hat)
