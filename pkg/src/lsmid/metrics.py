"""Data-informativity quantities.

Most quantities here are infima or suprema of ratios of polyhedral norms of
``X' eta``.  Two facts make several of them exactly computable at desk scale:

* the single-mode unit ball ``{eta : ||X' eta||_1 <= 1}`` is a polytope whose
  vertices lie on the lines ``{eta : x_t . eta = 0 for n-1 independent t}``;
* the ratios involved are convex along the ball (or their reciprocals are), so
  their extreme values are attained at those vertices.

:func:`extreme_rays` enumerates these lines; it is used for the exact columns of
the report next to the certified bounds derived by other means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, islice
from math import comb
from typing import Optional

import numpy as np
from scipy.optimize import linprog, minimize

from .assign import canonical_assignment
from .model import BudgetExceededError, Dataset

__all__ = [
    "BudgetExceededError",
    "NotFullRankError",
    "DEFAULT_BUDGET",
    "genericity_index",
    "extreme_rays",
    "xi_one_cutting_plane",
    "xi_single_mode_upper",
    "xi_single_mode_exact",
    "xi_single_mode_curve",
    "xi_switched_lower",
    "xi_switched_lower_curve",
    "isotonic_clamp",
    "r_star",
    "gamma_m",
    "d_hat",
    "lambda_l1",
    "MetricsReport",
    "compute_metrics",
]

DEFAULT_BUDGET = 2_000_000
_CHUNK = 20000


class NotFullRankError(ValueError):
    pass


def _require_full_rank(X: np.ndarray, rank_tol: float = 1e-10) -> None:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv.size < X.shape[0] or sv[-1] <= rank_tol * sv[0]:
        raise NotFullRankError("X not full row rank")


def _subsets(N: int, m: int):
    it = combinations(range(N), m)
    while True:
        block = list(islice(it, _CHUNK))
        if not block:
            return
        yield np.array(block, dtype=int).reshape(len(block), m)


def _check_budget(count: int, budget: int, what: str) -> None:
    if count > budget:
        raise BudgetExceededError(
            f"{what}: {count} subset evaluations exceeds combinatorial budget {budget}; lower m or N"
        )


# ---------------------------------------------------------------------------
# Genericity index
# ---------------------------------------------------------------------------


def genericity_index(X, rank_tol: float = 1e-10, budget: int = DEFAULT_BUDGET,
                     return_witness: bool = False):
    """Smallest m such that every m-column submatrix of X has rank n.

    Sizes are tried upward from n; each is certified by checking all C(N, m)
    subsets (stopping at the first rank-deficient one).  With
    ``return_witness=True`` also returns a rank-deficient subset of size
    ``nu - 1`` (None when ``nu == n``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    _require_full_rank(X, rank_tol)
    used = 0
    witness = None
    for m in range(n, N + 1):
        deficient = None
        _check_budget(used + comb(N, m), budget, "genericity index")
        for idx in _subsets(N, m):
            sv = np.linalg.svd(X[:, idx].transpose(1, 0, 2), compute_uv=False)
            used += len(idx)
            bad = sv[:, n - 1] <= rank_tol * sv[:, 0]
            if bad.any():
                deficient = idx[int(np.argmax(bad))]
                break
        if deficient is None:
            return (m, witness) if return_witness else m
        witness = deficient
    raise AssertionError("unreachable for a full row rank X")  # pragma: no cover


# ---------------------------------------------------------------------------
# Extreme rays of the l1 ball of X' eta
# ---------------------------------------------------------------------------


def extreme_rays(X, budget: int = DEFAULT_BUDGET, rank_tol: float = 1e-10) -> np.ndarray:
    """Unit-l2 directions orthogonal to n-1 linearly independent columns of X.

    Rows of the result; one sign per line.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    if n == 1:
        return np.ones((1, 1))
    _check_budget(comb(N, n - 1), budget, "extreme ray enumeration")
    rays = []
    for idx in _subsets(N, n - 1):
        M = X[:, idx].transpose(1, 2, 0)  # (C, n-1, n)
        _, sv, Vt = np.linalg.svd(M, full_matrices=True)
        good = sv[:, -1] > rank_tol * np.maximum(sv[:, 0], 1e-300)
        rays.append(Vt[good, -1, :])
    R = np.concatenate(rays) if rays else np.zeros((0, n))
    return R


# ---------------------------------------------------------------------------
# Single-mode concentration ratio
# ---------------------------------------------------------------------------


def _top_r_ratios(V: np.ndarray) -> np.ndarray:
    """For rows of |values| V (k x N): cumulative top-r mass over total, r = 0..N."""
    A = -np.sort(-np.abs(V), axis=1)
    tot = A.sum(axis=1, keepdims=True)
    cum = np.concatenate([np.zeros((A.shape[0], 1)), np.cumsum(A, axis=1)], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(tot > 0, cum / tot, 0.0)
    return np.minimum(out, 1.0)


@dataclass
class CuttingPlaneResult:
    value: float
    per_sample: np.ndarray
    eta: np.ndarray
    cuts: int
    lower_curve: np.ndarray


def xi_one_cutting_plane(X, tol: float = 1e-9, max_rounds: int = 10000) -> CuttingPlaneResult:
    """Certified upper bound on the 1-sparse concentration ratio.

    For every sample t, maximizes ``x_t . eta`` over ``||X' eta||_1 <= 1``.  The
    feasible set is described by the cuts ``s' X' eta <= 1`` for sign vectors s;
    starting from an implied box, the most violated cut ``s = sign(X' eta)`` is
    added until the iterate is feasible to ``tol``.  The value of every
    relaxation bounds the true maximum from above, so the returned value is an
    upper bound whatever the rounding.  The ball is symmetric, so the negated
    objective gives the same value.

    ``lower_curve[r]`` is the best top-r ratio seen at the iterates, a valid lower
    bound on the r-sparse ratio.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    _require_full_rank(X)
    smin = np.linalg.svd(X, compute_uv=False)[-1]
    box = (1.0 / smin) * (1.0 + 1e-6)  # ||eta||_inf <= ||eta||_2 <= ||X' eta||_1 / smin
    bounds = [(-box, box)] * n
    cuts: list[np.ndarray] = []
    per = np.zeros(N)
    etas = np.zeros((N, n))
    lower = np.zeros(N + 1)
    rounds = 0
    for t in range(N):
        while True:
            rounds += 1
            if rounds > max_rounds:  # pragma: no cover
                raise RuntimeError("cutting plane did not terminate")
            A_ub = np.array([X @ c for c in cuts]) if cuts else None
            b_ub = np.ones(len(cuts)) if cuts else None
            res = linprog(-X[:, t], A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
            assert res.status == 0, f"cutting-plane LP failed: {res.message}"
            eta = res.x
            w = X.T @ eta
            if np.abs(w).sum() <= 1.0 + tol:
                break
            cuts.append(np.sign(w))
        per[t] = -res.fun
        etas[t] = eta
        if np.abs(w).sum() > 0:
            lower = np.maximum(lower, _top_r_ratios(w[None, :])[0])
    return CuttingPlaneResult(float(per.max()), per, etas, len(cuts), lower)


def xi_single_mode_upper(X, r: int, xi_one: Optional[float] = None) -> float:
    """``min(1, r * xi_1)`` with xi_1 certified by cutting planes."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not 0 <= r <= X.shape[1]:
        raise ValueError(f"r={r} outside [0, {X.shape[1]}]")
    if r == 0:
        return 0.0
    if xi_one is None:
        xi_one = xi_one_cutting_plane(X).value
    return float(min(1.0, r * xi_one))


def xi_single_mode_exact(X, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """Exact single-mode concentration ratio for r = 0..N.

    The top-r mass of ``|X' eta|`` is convex in eta, so its maximum over the
    polytope ``||X' eta||_1 <= 1`` sits at a vertex, i.e. on an extreme ray.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _require_full_rank(X)
    R = extreme_rays(X, budget)
    return _top_r_ratios(R @ X).max(axis=0)


@dataclass
class XiCurve:
    upper: np.ndarray
    lower: np.ndarray
    exact: Optional[np.ndarray]
    xi_one: float


def isotonic_clamp(values, side: str) -> np.ndarray:
    """Make a curve nondecreasing while keeping it a valid bound.

    Lower bounds are raised by a running maximum, upper bounds are lowered by a
    running minimum from the right.
    """
    v = np.asarray(values, dtype=float)
    if side == "lower":
        return np.maximum.accumulate(v)
    if side == "upper":
        return np.minimum.accumulate(v[::-1])[::-1]
    raise ValueError("side must be 'lower' or 'upper'")


def xi_single_mode_curve(X, exact: Optional[bool] = None, budget: int = DEFAULT_BUDGET) -> XiCurve:
    """Upper, lower and (when affordable) exact single-mode ratios for r = 0..N."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    cp = xi_one_cutting_plane(X)
    r = np.arange(N + 1)
    upper = np.minimum(1.0, r * cp.value)
    lower = cp.lower_curve.copy()
    ex = None
    if exact is None:
        exact = comb(N, max(n - 1, 0)) <= budget
    if exact:
        ex = xi_single_mode_exact(X, budget)
        upper = np.minimum(upper, ex)
        lower = np.maximum(lower, ex)
    upper[0] = lower[0] = 0.0
    upper[N] = lower[N] = 1.0
    upper = isotonic_clamp(upper, "upper")
    lower = np.minimum(isotonic_clamp(lower, "lower"), upper)
    return XiCurve(upper, lower, ex, cp.value)


# ---------------------------------------------------------------------------
# Switched concentration ratio: Monte Carlo lower estimate
# ---------------------------------------------------------------------------


def xi_switched_lower_curve(data: Dataset, s: int, samples: int = 200, seed: int = 0,
                            anchors=None, comparable_only: bool = False,
                            nu: Optional[int] = None, tie_tol: float = 1e-9) -> np.ndarray:
    """Monte Carlo lower estimate of the switched concentration ratio, r = 0..N.

    Pairs (A, A') are random Gaussian matrices scaled to the data, plus pairs
    formed by perturbing each anchor matrix (e.g. estimator outputs).  For each
    pair the best subset of size r is the r largest entries of
    ``|phi(A) - phi(A')|``.  Pairs with equal residual vectors are skipped.
    With ``comparable_only`` only pairs comparable over the data are used.
    """
    from .analysis import comparability  # local import: analysis depends on metrics

    if samples < 1:
        raise ValueError("samples must be positive")
    rng = np.random.default_rng(seed)
    X, y = data.X, data.y
    n, N = X.shape
    xnorm = np.linalg.norm(X, axis=0).mean()
    scale = (np.abs(y).mean() / xnorm) if xnorm > 0 and np.abs(y).mean() > 0 else 1.0
    pairs = []
    for _ in range(samples):
        pairs.append((scale * rng.standard_normal((n, s)), scale * rng.standard_normal((n, s))))
    for A0 in anchors or []:
        A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        for eps in (1e-3, 1e-1, 1.0):
            step = eps * (1.0 + np.abs(A0).max())
            pairs.append((A0, A0 + step * rng.standard_normal(A0.shape)))
    best = np.zeros(N + 1)
    valid = 0
    for A, Ap in pairs:
        da = canonical_assignment(data, A, tie_tol)
        db = canonical_assignment(data, Ap, tie_tol)
        d = da.phi - db.phi
        if np.abs(d).sum() <= 1e-14 * (1.0 + np.abs(da.phi).sum()):
            continue
        if comparable_only and not comparability(data, A, Ap, nu=nu, tie_tol=tie_tol).comparable:
            continue
        valid += 1
        best = np.maximum(best, _top_r_ratios(d[None, :])[0])
    if valid == 0:
        raise ValueError("no valid pairs")
    best[0] = 0.0
    best[N] = 1.0
    return isotonic_clamp(best, "lower")


def xi_switched_lower(data: Dataset, s: int, r: int, samples: int = 200, seed: int = 0, **kw) -> float:
    if not 0 <= r <= data.N:
        raise ValueError(f"r={r} outside [0, {data.N}]")
    return float(xi_switched_lower_curve(data, s, samples, seed, **kw)[r])


def r_star(xi_upper, xi_lower) -> tuple[int, int]:
    """(certified, optimistic) largest r whose ratio stays below 1/2."""
    up = isotonic_clamp(xi_upper, "upper")
    lo = isotonic_clamp(xi_lower, "lower")

    def last_below(c):
        ok = np.flatnonzero(c < 0.5)
        return int(ok.max()) if ok.size else 0

    r_lo, r_hi = last_below(up), last_below(lo)
    return r_lo, max(r_lo, r_hi)


# ---------------------------------------------------------------------------
# gamma_m, D-hat, lambda
# ---------------------------------------------------------------------------


def d_hat(X, m: int, budget: int = DEFAULT_BUDGET) -> float:
    """Smallest ``sqrt(lambda_min(X_I X_I'))`` over all m-column subsets I."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    if not 1 <= m <= N:
        raise ValueError(f"m={m} outside [1, {N}]")
    _check_budget(comb(N, m), budget, "d_hat")
    best = np.inf
    for idx in _subsets(N, m):
        S = X[:, idx].transpose(1, 0, 2)  # (C, n, m)
        G = S @ S.transpose(0, 2, 1)
        best = min(best, float(np.linalg.eigvalsh(G)[:, 0].min()))
    return float(np.sqrt(max(best, 0.0)))


def _sum_m_smallest(V: np.ndarray, m: int) -> np.ndarray:
    return np.sort(np.abs(V), axis=-1)[..., :m].sum(axis=-1)


@dataclass
class Bracket:
    lower_certified: float
    upper_estimate: float
    exact: Optional[float] = None

    def to_dict(self, certified_upper: bool = False) -> dict:
        d = {"lower_certified": self.lower_certified, "upper_estimate": self.upper_estimate,
             "certified": {"lower_certified": True, "upper_estimate": certified_upper}}
        if self.exact is not None:
            d["exact"] = self.exact
        return d


def _local_search(fun, n: int, restarts: int, seed: int, extra=None) -> float:
    rng = np.random.default_rng(seed)
    starts = list(rng.standard_normal((restarts, n)))
    if extra is not None:
        starts.extend(extra)
    best = np.inf
    for e0 in starts:
        if np.linalg.norm(e0) == 0:
            continue
        best = min(best, fun(e0))
        if n > 1:
            res = minimize(fun, e0, method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 400 * n})
            best = min(best, float(res.fun))
    return float(best)


def gamma_m(X, m: int, restarts: int = 20, seed: int = 0, budget: int = DEFAULT_BUDGET,
            exact: Optional[bool] = None) -> Bracket:
    """Bracket on ``inf ||X_I' eta||_1`` over unit-l2 eta and |I| >= m.

    For a fixed eta the best I is the m samples with the smallest ``|x_t . eta|``.
    The certified lower end is :func:`d_hat`; the upper end is the best value
    found by local search from random starts (and from every extreme ray when
    ``exact`` allows, which makes it the exact value).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    if not 1 <= m <= N:
        raise ValueError(f"m={m} outside [1, {N}]")
    lower = d_hat(X, m, budget)

    def f(eta):
        return float(_sum_m_smallest(X.T @ eta, m) / np.linalg.norm(eta))

    rays = None
    if exact is None:
        exact = comb(N, max(n - 1, 0)) <= budget
    ex = None
    if exact:
        rays = extreme_rays(X, budget)
        ex = float(_sum_m_smallest(rays @ X, m).min()) if len(rays) else None
    upper = _local_search(f, n, restarts, seed)
    if ex is not None:
        upper = min(upper, ex)
    return Bracket(lower, max(upper, lower), ex)


def lambda_l1(X, restarts: int = 20, seed: int = 0, budget: int = DEFAULT_BUDGET,
              exact: Optional[bool] = None) -> Bracket:
    """Bracket on ``inf ||X' eta||_1`` over ``||eta||_1 = 1``.

    Lower end ``sigma_min(X) / sqrt(n)``; upper end by local search and, when
    affordable, over the extreme rays (exact).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, N = X.shape
    _require_full_rank(X)
    lower = float(np.linalg.svd(X, compute_uv=False)[-1] / np.sqrt(n))

    def f(eta):
        return float(np.abs(X.T @ eta).sum() / np.abs(eta).sum())

    if exact is None:
        exact = comb(N, max(n - 1, 0)) <= budget
    ex = None
    if exact:
        R = extreme_rays(X, budget)
        ex = float((np.abs(R @ X).sum(axis=1) / np.abs(R).sum(axis=1)).min())
    upper = _local_search(f, n, restarts, seed, extra=list(np.eye(n)))
    if ex is not None:
        upper = min(upper, ex)
    return Bracket(lower, max(upper, lower), ex)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    n: int
    N: int
    s: int
    nu_n: int
    nu_witness: Optional[list]
    xi_single_mode: list
    xi_switched_lower: Optional[list]
    r_star_lower: int
    r_star_upper: int
    gamma_m: Bracket
    D_hat: float
    D_upper_estimate: float
    lambda_l1: Bracket
    notes: dict = field(default_factory=dict)

    @property
    def xi_upper(self) -> np.ndarray:
        if self.s == 1:
            return np.array([rec["upper_bound"] for rec in self.xi_single_mode])
        # only the trivial curve is certified with several modes
        c = np.ones(self.N + 1)
        c[0] = 0.0
        return c

    @property
    def xi_lower(self) -> np.ndarray:
        if self.xi_switched_lower is not None:
            return np.asarray(self.xi_switched_lower)
        return np.array([rec["lower_estimate"] for rec in self.xi_single_mode])

    def xi_for(self, r: int) -> tuple[float, str]:
        """(value, side) to feed a bound: certified upper when s = 1, else Monte Carlo lower."""
        if self.s == 1:
            return float(self.xi_upper[r]), "certified_upper"
        return float(self.xi_lower[r]), "mc_lower"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "s": self.s,
            "nu_n": {"value": self.nu_n, "certified": True,
                     "witness": None if self.nu_witness is None else [int(i) + 1 for i in self.nu_witness]},
            "xi_single_mode": [dict(rec, certified={"upper_bound": True, "lower_estimate": True,
                                                    "exact": rec.get("exact") is not None})
                               for rec in self.xi_single_mode],
            "xi_switched_lower": None if self.xi_switched_lower is None else
            {"values": list(self.xi_switched_lower), "certified": False},
            "r_star_lower": {"value": self.r_star_lower, "certified": True},
            "r_star_upper": {"value": self.r_star_upper, "certified": False},
            "gamma_m": self.gamma_m.to_dict(certified_upper=self.gamma_m.exact is not None),
            "D_hat": {"value": self.D_hat, "certified": True},
            "D_upper_estimate": {"value": self.D_upper_estimate, "certified": False},
            "lambda_l1": self.lambda_l1.to_dict(certified_upper=self.lambda_l1.exact is not None),
            "notes": self.notes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        def br(x):
            return Bracket(x["lower_certified"], x["upper_estimate"], x.get("exact"))

        def num(x):
            return float("nan") if x is None else float(x)

        recs = [{k: v for k, v in rec.items() if k != "certified"} for rec in d["xi_single_mode"]]
        sw = d.get("xi_switched_lower")
        wit = d["nu_n"].get("witness")
        return cls(d["n"], d["N"], d["s"], d["nu_n"]["value"],
                   None if wit is None else [int(i) - 1 for i in wit], recs,
                   None if sw is None else list(sw["values"]), d["r_star_lower"]["value"],
                   d["r_star_upper"]["value"], br(d["gamma_m"]), num(d["D_hat"]["value"]),
                   num(d["D_upper_estimate"]["value"]), br(d["lambda_l1"]), d.get("notes", {}))


def compute_metrics(data: Dataset, s: int, *, budget: int = DEFAULT_BUDGET, xi_samples: int = 200,
                    seed: int = 0, restarts: int = 20, m: Optional[int] = None,
                    exact: Optional[bool] = None, anchors=None) -> MetricsReport:
    """All informativity metrics for a dataset and a mode count."""
    from .analysis import estimate_D

    X = data.X
    n, N = X.shape
    nu, wit = genericity_index(X, budget=budget, return_witness=True)
    curve = xi_single_mode_curve(X, exact=exact, budget=budget)
    recs = []
    for r in range(N + 1):
        rec = {"r": r, "upper_bound": float(curve.upper[r]), "lower_estimate": float(curve.lower[r])}
        if curve.exact is not None:
            rec["exact"] = float(curve.exact[r])
        recs.append(rec)
    sw = None
    if s > 1:
        sw = xi_switched_lower_curve(data, s, xi_samples, seed, anchors=anchors)
        cert_up = np.ones(N + 1)
        cert_up[0] = 0.0
        r_lo, r_hi = r_star(cert_up, sw)
    else:
        r_lo, r_hi = r_star(curve.upper, curve.lower)
    mm = nu if m is None else m
    gam = gamma_m(X, mm, restarts, seed, budget, exact)
    if s * nu <= N:
        Dbr = estimate_D(X, s, nu, samples=restarts, seed=seed, budget=budget)
        D_up = Dbr.upper_estimate
        D_low = Dbr.lower_certified
    else:
        D_low, D_up = d_hat(X, nu, budget), float("nan")
    lam = lambda_l1(X, restarts, seed, budget, exact)
    notes = {
        "nu_n": "exhaustive subset rank enumeration",
        "xi_single_mode": "upper: min(1, r * xi_1) with xi_1 from cutting planes, tightened by the exact "
                          "extreme-ray value when computed; lower: ratios at evaluated directions",
        "xi_switched_lower": "Monte Carlo over random parameter pairs; not certified",
        "r_star_lower": "from the certified upper ratio curve" + ("" if s == 1 else " (trivial curve for s > 1)"),
        "gamma_m": f"m = {mm}",
        "D_hat": "minimum over nu-column subsets of sqrt(lambda_min)",
    }
    return MetricsReport(n, N, s, nu, None if wit is None else wit.tolist(), recs,
                         None if sw is None else sw.tolist(), r_lo, r_hi, gam, float(D_low),
                         float(D_up), lam, notes)
