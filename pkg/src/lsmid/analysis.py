"""Comparability, recovery conditions and parametric error bounds.

Matrix errors are measured in the column-sum norm
``||Lambda||_{2,col} = sum_i ||Lambda[:, i]||_2``; it is the norm for which the
bound constant D has a computable certified lower bound (:func:`lsmid.metrics.d_hat`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .assign import DEFAULT_TIE_TOL, canonical_assignment, cost, delta_r
from .estimator import lsm_bruteforce, match_columns, matched_error
from .metrics import DEFAULT_BUDGET, Bracket, d_hat, extreme_rays, genericity_index
from .model import Dataset

__all__ = [
    "ComparabilityVerdict",
    "BoundValue",
    "BoundReport",
    "comparability",
    "lemma5_sufficient",
    "g_of_lambda",
    "col_norm",
    "estimate_D",
    "lemma2_terms",
    "theorem2_bound",
    "corollary1_bound",
    "proposition1_check",
    "lemma7_check",
    "theorem1_check",
    "bound_report",
    "zero_tol",
]


def zero_tol(y) -> float:
    """Threshold below which a residual counts as zero."""
    return 1e-8 * (1.0 + float(np.max(np.abs(y))))


def col_norm(L) -> float:
    return float(np.linalg.norm(np.atleast_2d(L), axis=0).sum())


def _nu(data: Dataset, nu: Optional[int]) -> int:
    return genericity_index(data.X) if nu is None else int(nu)


# ---------------------------------------------------------------------------
# Comparability
# ---------------------------------------------------------------------------


@dataclass
class ComparabilityVerdict:
    comparable: bool
    pi: Optional[np.ndarray]
    overlap: np.ndarray
    threshold: int

    def to_dict(self) -> dict:
        return {
            "comparable": self.comparable,
            "pi": None if self.pi is None else (self.pi + 1).tolist(),
            "overlap_matrix": self.overlap.tolist(),
            "threshold": self.threshold,
        }


def _has_perfect_matching(adj: np.ndarray) -> bool:
    k = adj.shape[0]
    if k == 0:
        return True
    match = maximum_bipartite_matching(csr_matrix(adj.astype(np.int8)), perm_type="column")
    return bool(np.all(match >= 0))


def overlap_matrix(data: Dataset, A, A_prime, tie_tol: float = DEFAULT_TIE_TOL) -> np.ndarray:
    """Entry (i, j) counts samples assigned to mode i by A and mode j by A'."""
    sa = canonical_assignment(data, A, tie_tol).sigma
    sb = canonical_assignment(data, A_prime, tie_tol).sigma
    s = np.atleast_2d(A).shape[1]
    M = np.zeros((s, s), dtype=int)
    np.add.at(M, (sa, sb), 1)
    return M


def comparability(data: Dataset, A, A_prime, nu: Optional[int] = None,
                  tie_tol: float = DEFAULT_TIE_TOL) -> ComparabilityVerdict:
    """Is there a mode permutation pi with every overlap |I_i(A) & I_pi(i)(A')| >= nu?

    Decided by bipartite matching on the thresholded overlap graph.  The witness
    is the lexicographically smallest such permutation.
    """
    thr = _nu(data, nu)
    M = overlap_matrix(data, A, A_prime, tie_tol)
    adj = M >= thr
    s = M.shape[0]
    if not _has_perfect_matching(adj):
        return ComparabilityVerdict(False, None, M, thr)
    pi = np.empty(s, dtype=int)
    free = list(range(s))
    for i in range(s):
        for j in free:
            if not adj[i, j]:
                continue
            rest = [c for c in free if c != j]
            if _has_perfect_matching(adj[i + 1 :][:, rest]):
                pi[i] = j
                free = rest
                break
    return ComparabilityVerdict(True, pi, M, thr)


def lemma5_sufficient(data: Dataset, A, A_prime, nu: Optional[int] = None,
                      tie_tol: float = DEFAULT_TIE_TOL) -> Optional[bool]:
    """Cardinality test that guarantees comparability of A and A'.

    Returns None when A itself does not give every mode at least ``s * nu``
    samples (the test does not apply).
    """
    thr = _nu(data, nu)
    M = overlap_matrix(data, A, A_prime, tie_tol)
    s = M.shape[0]
    sizes = M.sum(axis=1)
    if sizes.min() < s * thr:
        return None
    ok = True
    for i in range(s):
        for j in range(s):
            if i != j and sizes[i] + sizes[j] < (M[i] + M[j]).max() + 2 * (s - 1) * thr:
                ok = False
    if ok:
        verdict = comparability(data, A, A_prime, nu=thr, tie_tol=tie_tol)
        assert verdict.comparable, "sufficient comparability test contradicted by matching"
    return ok


# ---------------------------------------------------------------------------
# g(Lambda) and D
# ---------------------------------------------------------------------------


def g_of_lambda(X, Lambda, nu: int, return_sets: bool = False):
    """Smallest ``sum_i ||X_{J_i}' eta_i||_1`` over disjoint J_1..J_s with |J_i| = nu.

    Transportation problem: every sample can serve at most one mode, mode i needs
    ``nu`` samples, serving costs ``|x_t . eta_i|``.  Solved exactly as a
    rectangular assignment with each mode replicated ``nu`` times.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = np.asarray(Lambda, dtype=float)
    if L.ndim == 1:
        L = L[:, None]
    N = X.shape[1]
    s = L.shape[1]
    if s * nu > N:
        raise ValueError(f"infeasible tuple: s*nu = {s * nu} > N = {N}")
    C = np.abs(X.T @ L)  # N x s
    big = np.repeat(C, nu, axis=1)
    rows, cols = linear_sum_assignment(big)
    val = float(big[rows, cols].sum())
    if not return_sets:
        return val
    owner = cols // nu
    return val, [np.sort(rows[owner == i]) for i in range(s)]


def estimate_D(X, s: int, nu: int, samples: int = 50, seed: int = 0,
               budget: int = DEFAULT_BUDGET, refine: int = 5) -> Bracket:
    """Bracket on ``D = inf g(Lambda)`` over ``||Lambda||_{2,col} = 1``.

    Lower end: :func:`lsmid.metrics.d_hat` with ``m = nu`` (certified).  Upper
    end: smallest ``g`` over random unit matrices, the best ``refine`` of them
    polished by Nelder-Mead, and single-column matrices along extreme rays.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    lower = d_hat(X, nu, budget)
    rng = np.random.default_rng(seed)

    def ratio(flat):
        L = flat.reshape(n, s)
        nrm = col_norm(L)
        return g_of_lambda(X, L, nu) / nrm if nrm > 0 else np.inf

    cands = [rng.standard_normal(n * s) for _ in range(samples)]
    vals = [ratio(c) for c in cands]
    best = min(vals) if vals else np.inf
    for k in np.argsort(vals)[:refine]:
        res = minimize(ratio, cands[k], method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 200 * n * s})
        best = min(best, float(res.fun))
    try:
        rays = extreme_rays(X, budget)
    except Exception:
        rays = np.zeros((0, n))
    for ray in rays:
        L = np.zeros((n, s))
        L[:, 0] = ray
        best = min(best, ratio(L.ravel()))
    return Bracket(lower, max(float(best), lower))


# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------


@dataclass
class BoundValue:
    """A bound value or a typed refusal.

    ``status`` is ``"certified"`` (all inputs certified), ``"optimistic"`` (uses a
    Monte Carlo lower estimate of the concentration ratio, so the true bound may
    be larger) or ``"vacuous"`` (preconditions fail; ``value`` is None).
    """

    value: Optional[float]
    status: str
    reason: str = ""
    r: Optional[int] = None

    @property
    def vacuous(self) -> bool:
        return self.status == "vacuous"

    def to_dict(self) -> dict:
        return {"value": "vacuous" if self.value is None else self.value, "status": self.status,
                "reason": self.reason, "r": self.r}


def _status(side: str) -> str:
    if side not in ("certified_upper", "mc_lower"):
        raise ValueError(f"unknown xi side {side!r}")
    return "certified" if side == "certified_upper" else "optimistic"


def lemma2_terms(data: Dataset, A, A_prime, r: int, xi: float,
                 tie_tol: float = DEFAULT_TIE_TOL) -> tuple[float, float]:
    """(||phi(A') - phi(A)||_1, (J(A') - J(A) + 2 delta_r(A)) / (1 - 2 xi))."""
    pa = canonical_assignment(data, A, tie_tol)
    pb = canonical_assignment(data, A_prime, tie_tol)
    lhs = float(np.abs(pb.phi - pa.phi).sum())
    rhs = (pb.cost - pa.cost + 2.0 * delta_r(pa.phi, r)) / (1.0 - 2.0 * xi)
    return lhs, float(rhs)


def theorem2_bound(data: Dataset, A, A_prime, r: int, xi_value: float, xi_side: str,
                   D_lower: float, nu: Optional[int] = None,
                   tie_tol: float = DEFAULT_TIE_TOL) -> BoundValue:
    """Bound on ``||A'_pi - A||_{2,col}`` for a comparable pair.

    ``(J(A') - J(A) + 2 delta_r(A)) / (D_lower (1 - 2 xi))``.
    """
    status = _status(xi_side)
    if not xi_value < 0.5:
        return BoundValue(None, "vacuous", f"concentration ratio {xi_value:.3g} >= 1/2", r)
    if not D_lower > 0:
        return BoundValue(None, "vacuous", "D lower bound is zero", r)
    verdict = comparability(data, A, A_prime, nu=nu, tie_tol=tie_tol)
    if not verdict.comparable:
        return BoundValue(None, "vacuous", "matrices are not comparable", r)
    pa = canonical_assignment(data, A, tie_tol)
    num = cost(data, A_prime) - pa.cost + 2.0 * delta_r(pa.phi, r)
    return BoundValue(max(0.0, num) / (D_lower * (1.0 - 2.0 * xi_value)), status, "", r)


def _v_norm_1r(v, r: int) -> float:
    return delta_r(v, r)


@dataclass
class CorollaryResult:
    bound: BoundValue
    noise_bound: Optional[BoundValue]
    per_r: list
    delta_le_vnorm: Optional[bool]


def corollary1_bound(data: Dataset, A_true, A_hat, xi_curve, xi_side: str, D_lower: float,
                     r_grid=None, nu: Optional[int] = None,
                     tie_tol: float = DEFAULT_TIE_TOL) -> CorollaryResult:
    """Estimation error bound optimized over r: ``min_r 2 delta_r(A_true) / (D (1 - 2 xi_r))``.

    ``xi_curve[r]`` is the concentration ratio (or its bound) at r.  With a known
    noise sequence also evaluates the relaxation with the sum of the N - r
    smallest noise magnitudes, and checks that it dominates ``delta_r(A_true)``.
    """
    status = _status(xi_side)
    xi_curve = np.asarray(xi_curve, dtype=float)
    N = data.N
    grid = range(N + 1) if r_grid is None else r_grid
    phi = canonical_assignment(data, A_true, tie_tol).phi
    v = data.truth.v if data.truth is not None else None
    per_r = []
    best = None
    best_noise = None
    dominated = None if v is None else True
    for r in grid:
        xi = float(xi_curve[r])
        dr = delta_r(phi, r)
        rec = {"r": int(r), "xi": xi, "delta_r": dr}
        if v is not None:
            vr = _v_norm_1r(v, r)
            rec["v_norm_1r"] = vr
            dominated = dominated and dr <= vr + 1e-9 * (1.0 + vr)
        if xi < 0.5 and D_lower > 0:
            rec["bound"] = 2.0 * dr / (D_lower * (1.0 - 2.0 * xi))
            if best is None or rec["bound"] < best.value:
                best = BoundValue(rec["bound"], status, "", int(r))
            if v is not None:
                rec["noise_bound"] = 2.0 * rec["v_norm_1r"] / (D_lower * (1.0 - 2.0 * xi))
                if best_noise is None or rec["noise_bound"] < best_noise.value:
                    best_noise = BoundValue(rec["noise_bound"], status, "", int(r))
        per_r.append(rec)
    if best is None:
        reason = "no admissible r" if D_lower > 0 else "D lower bound is zero"
        best = BoundValue(None, "vacuous", reason)
        best_noise = None if v is None else BoundValue(None, "vacuous", reason)
    verdict = comparability(data, A_true, A_hat, nu=nu, tie_tol=tie_tol)
    if not verdict.comparable:
        best = BoundValue(None, "vacuous", "estimate not comparable to the true matrix", best.r)
        if best_noise is not None:
            best_noise = BoundValue(None, "vacuous", "estimate not comparable to the true matrix", best_noise.r)
    return CorollaryResult(best, best_noise, per_r, dominated)


# ---------------------------------------------------------------------------
# Condition checkers
# ---------------------------------------------------------------------------


@dataclass
class Prop1Result:
    condition_holds: bool
    sigma_matches: bool
    margin: float
    threshold: np.ndarray
    mismatches: np.ndarray


def proposition1_check(data: Dataset, A_true=None, tie_tol: float = DEFAULT_TIE_TOL) -> Prop1Result:
    """Noise below half the mode separation at every sample, and whether the
    canonical assignment of the true matrix then reproduces the true switching."""
    if data.truth is None:
        raise ValueError("ground truth required")
    A = np.atleast_2d(data.truth.A if A_true is None else A_true)
    s = A.shape[1]
    P = data.X.T @ A
    if s > 1:
        diffs = [np.abs(P[:, i] - P[:, j]) for i in range(s) for j in range(i + 1, s)]
        thr = 0.5 * np.min(diffs, axis=0)
    else:
        thr = np.full(data.N, np.inf)
    v = np.abs(data.truth.v)
    holds = bool(np.all(v < thr))
    sig = canonical_assignment(data, A, tie_tol).sigma
    mism = np.flatnonzero(sig != data.truth.sigma)
    matches = mism.size == 0
    if holds:
        assert matches, "noise below the separation threshold but assignment differs"
    margin = float(np.min(thr - v))
    return Prop1Result(holds, matches, margin, thr, mism)


def lemma7_check(data: Dataset, A_true, r: int, xi_value: float, xi_side: str,
                 gamma_lower: float, m: Optional[int] = None, nu: Optional[int] = None,
                 oracle_optima=None, tie_tol: float = DEFAULT_TIE_TOL) -> Optional[bool]:
    """Mode separation large enough to force comparability of every global minimizer.

    True iff ``min_{i != j} ||a_i - a_j||_2 > 2 delta_r(A_true) / (gamma (1 - 2 xi_r))``.
    Returns None when the preconditions fail (mode sizes below ``s m``, ``m < nu``,
    uncertified ratio, or ratio not below 1/2).  ``oracle_optima`` (global
    minimizers) are cross-checked for comparability when the test passes.
    """
    A = np.atleast_2d(np.asarray(A_true, dtype=float))
    s = A.shape[1]
    thr = _nu(data, nu)
    m = thr if m is None else m
    asg = canonical_assignment(data, A, tie_tol)
    if m < thr or asg.min_cardinality < s * m or xi_side != "certified_upper" or not xi_value < 0.5:
        return None
    if not gamma_lower > 0:
        return False
    sep = min((np.linalg.norm(A[:, i] - A[:, j]) for i in range(s) for j in range(i + 1, s)), default=np.inf)
    rhs = 2.0 * delta_r(asg.phi, r) / (gamma_lower * (1.0 - 2.0 * xi_value))
    ok = bool(sep > rhs)
    if ok and oracle_optima is not None:
        for Ah in oracle_optima:
            assert comparability(data, A, Ah, nu=thr, tie_tol=tie_tol).comparable, \
                "separated modes but a global minimizer is not comparable"
    return ok


@dataclass
class Theorem1Result:
    unique_recovery_predicted: bool
    witnessed: Optional[bool]
    l0: int
    min_cardinality: int
    nu: int


def theorem1_check(data: Dataset, A_tilde, r_star_lower: int, nu: Optional[int] = None,
                   oracle_budget: int = 0, tie_tol: float = DEFAULT_TIE_TOL,
                   match_tol: float = 1e-8) -> Theorem1Result:
    """Predict unique recovery of ``set(A_tilde)``; witness it by brute force when affordable.

    Predicted iff every mode of A_tilde gets at least ``s nu`` samples, its
    residual vector has at most ``r_star_lower`` nonzeros and its columns are
    distinct.
    """
    A = np.atleast_2d(np.asarray(A_tilde, dtype=float))
    s = A.shape[1]
    thr = _nu(data, nu)
    asg = canonical_assignment(data, A, tie_tol)
    l0 = int(np.sum(np.abs(asg.phi) > zero_tol(data.y)))
    distinct = all(np.linalg.norm(A[:, i] - A[:, j]) > match_tol for i in range(s) for j in range(i + 1, s))
    predicted = asg.min_cardinality >= s * thr and l0 <= r_star_lower and distinct
    witnessed = None
    if oracle_budget and s ** data.N <= oracle_budget:
        res = lsm_bruteforce(data, s, oracle_budget, tie_tol)
        scale = 1.0 + np.abs(A).max()
        witnessed = all(matched_error(A, Ah) <= match_tol * scale for Ah in res.optima)
        if predicted:
            assert witnessed, "recovery predicted but a different global minimizer exists"
    return Theorem1Result(bool(predicted), witnessed, l0, asg.min_cardinality, thr)


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    r_used: Optional[int]
    xi_used: Optional[float]
    xi_side: str
    delta_r_value: Optional[float]
    D_lower: float
    bound: BoundValue
    noise_bound: Optional[BoundValue]
    conditions: dict
    matched_error: Optional[float]
    comparability: Optional[ComparabilityVerdict] = None
    per_r: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "r_used": self.r_used,
            "xi_used": self.xi_used,
            "xi_side": self.xi_side,
            "delta_r_value": self.delta_r_value,
            "D_lower": self.D_lower,
            "bound_value": self.bound.to_dict(),
            "noise_bound_value": None if self.noise_bound is None else self.noise_bound.to_dict(),
            "conditions": self.conditions,
            "matched_error": self.matched_error,
            "comparability": None if self.comparability is None else self.comparability.to_dict(),
            "per_r": self.per_r,
        }

    def condition_rows(self) -> list:
        return [(name, c["holds"], c.get("margin")) for name, c in self.conditions.items()]


def bound_report(data: Dataset, A_hat, metrics, tie_tol: float = DEFAULT_TIE_TOL,
                 oracle_budget: int = 0, r_grid=None) -> BoundReport:
    """All condition flags and bound values for an estimate, given a metrics report.

    Without ground truth only the exact-recovery prediction for the estimate
    itself is evaluated.
    """
    A_hat = np.atleast_2d(np.asarray(A_hat, dtype=float))
    s = A_hat.shape[1]
    nu = metrics.nu_n
    xi_up = metrics.xi_upper
    side = "certified_upper" if s == 1 else "mc_lower"
    xi_curve = xi_up if s == 1 else metrics.xi_lower
    D = metrics.D_hat
    cond: dict = {}

    if data.truth is None:
        t1 = theorem1_check(data, A_hat, metrics.r_star_lower, nu=nu, tie_tol=tie_tol)
        cond["exact_recovery_predicted"] = {"holds": t1.unique_recovery_predicted, "margin": None}
        return BoundReport(None, None, side, None, D, BoundValue(None, "vacuous", "no ground truth"),
                           None, cond, None)

    A0 = np.atleast_2d(data.truth.A)
    asg0 = canonical_assignment(data, A0, tie_tol)
    verdict = comparability(data, A0, A_hat, nu=nu, tie_tol=tie_tol)
    cor = corollary1_bound(data, A0, A_hat, xi_curve, side, D, r_grid, nu, tie_tol)
    # certified companion: r = 0 has ratio exactly 0 whatever s is
    cert0 = corollary1_bound(data, A0, A_hat, np.zeros(data.N + 1), "certified_upper", D, [0], nu, tie_tol)
    r_used = cor.bound.r if cor.bound.r is not None else 0
    xi_r = float(xi_curve[r_used])
    t1 = theorem1_check(data, A0, metrics.r_star_lower, nu=nu, oracle_budget=oracle_budget, tie_tol=tie_tol)
    l5 = lemma5_sufficient(data, A0, A_hat, nu=nu, tie_tol=tie_tol)
    p1 = proposition1_check(data, A0, tie_tol)
    gam = metrics.gamma_m.lower_certified
    l7 = lemma7_check(data, A0, 0, 0.0, "certified_upper", gam, nu=nu, tie_tol=tie_tol)
    if verdict.comparable:
        err = matched_error(A0, A_hat, verdict.pi)
    else:
        err = matched_error(A0, A_hat, match_columns(A0, A_hat))
    cond["xi_below_half"] = {"holds": bool(xi_r < 0.5), "margin": 0.5 - xi_r}
    cond["comparability"] = {"holds": verdict.comparable,
                             "margin": int((verdict.overlap.max(axis=1)).min() - nu)}
    cond["cond_eq_cardinality"] = {"holds": bool(asg0.min_cardinality >= s * nu),
                                   "margin": int(asg0.min_cardinality - s * nu)}
    cond["sigma_match"] = {"holds": p1.sigma_matches, "margin": -int(p1.mismatches.size)}
    cond["assignment_margin"] = {"holds": p1.condition_holds, "margin": p1.margin}
    cond["comparability_sufficient"] = {"holds": l5, "margin": None}
    cond["distinguishability"] = {"holds": l7, "margin": None}
    cond["exact_recovery_predicted"] = {"holds": t1.unique_recovery_predicted, "margin": int(metrics.r_star_lower - t1.l0)}
    if t1.witnessed is not None:
        cond["theorem1_witnessed"] = {"holds": t1.witnessed, "margin": None}
    per_r = cor.per_r
    out = BoundReport(r_used, xi_r, side, delta_r(asg0.phi, r_used), D, cor.bound, cor.noise_bound,
                      cond, err, verdict, per_r)
    out.conditions["certified_r0_bound"] = {"holds": not cert0.bound.vacuous, "margin": cert0.bound.value}
    return out
