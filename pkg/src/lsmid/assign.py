"""Canonical switching assignment, residual vector and the cost it induces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow

from .model import Dataset

__all__ = [
    "AssignmentResult",
    "canonical_assignment",
    "residual_matrix",
    "cost",
    "delta_r",
    "top_r_indices",
    "lemma1_gap",
    "DEFAULT_TIE_TOL",
]

DEFAULT_TIE_TOL = 1e-9


@dataclass(frozen=True)
class AssignmentResult:
    sigma: np.ndarray
    partition: tuple
    phi: np.ndarray
    cost: float
    min_cardinality: int

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(p) for p in self.partition])

    def to_dict(self) -> dict:
        return {
            "sigma": (self.sigma + 1).tolist(),
            "phi": self.phi.tolist(),
            "cost": self.cost,
            "min_cardinality": self.min_cardinality,
        }


def _check_dims(data: Dataset, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[0] != data.n:
        raise ValueError(f"dimension mismatch: A has {A.shape[0]} rows, data has n={data.n}")
    if not np.all(np.isfinite(A)):
        raise ValueError("parameter matrix has non-finite entries")
    return A


def residual_matrix(data: Dataset, A) -> np.ndarray:
    """Signed residuals ``y_t - x_t . a_i`` as an N x s array."""
    A = _check_dims(data, A)
    return data.y[:, None] - data.X.T @ A


def cost(data: Dataset, A) -> float:
    """Sum over samples of the smallest absolute residual across modes."""
    return float(np.abs(residual_matrix(data, A)).min(axis=1).sum())


def _feasible(adm: np.ndarray, rows: np.ndarray, demand: np.ndarray) -> bool:
    """Can the free ``rows`` cover ``demand[i]`` samples of every mode?

    Bipartite max-flow: source -> row (cap 1) -> admissible mode (cap 1)
    -> sink (cap demand).
    """
    need = int(demand.sum())
    if need == 0:
        return True
    if need > len(rows):
        return False
    sub = adm[rows]
    if np.any(sub.sum(axis=0) < demand):
        return False
    R, s = sub.shape
    src, sink = 0, 1 + R + s
    ri, mi = np.nonzero(sub)
    tails = np.concatenate([np.zeros(R, dtype=np.int32), 1 + ri, 1 + R + np.arange(s)])
    heads = np.concatenate([1 + np.arange(R), 1 + R + mi, np.full(s, sink)])
    caps = np.concatenate([np.ones(R), np.ones(len(ri)), demand]).astype(np.int32)
    keep = caps > 0
    size = sink + 1
    graph = csr_matrix((caps[keep], (tails[keep].astype(np.int32), heads[keep].astype(np.int32))), shape=(size, size))
    return maximum_flow(graph, src, sink).flow_value == need


def canonical_assignment(data: Dataset, A, tie_tol: float = DEFAULT_TIE_TOL) -> AssignmentResult:
    """Per-sample nearest mode, with ties resolved as evenly as possible.

    Mode ``i`` is admissible at ``t`` when its absolute residual is within
    ``tie_tol * (1 + m_t)`` of the smallest one ``m_t``.  Among admissible
    labelings the one maximizing the smallest mode cardinality is kept; the
    remaining freedom is resolved lexicographically (earliest sample, smallest
    label first).
    """
    if tie_tol < 0:
        raise ValueError("tie_tol must be nonnegative")
    R = residual_matrix(data, A)
    N, s = R.shape
    absR = np.abs(R)
    best = absR.min(axis=1)
    adm = absR <= (best + tie_tol * (1.0 + best))[:, None]
    n_adm = adm.sum(axis=1)
    sigma = np.argmax(adm, axis=1)  # smallest admissible label

    tied = np.flatnonzero(n_adm > 1)
    if tied.size and s > 1:
        forced = np.bincount(sigma[n_adm == 1], minlength=s)
        reach = forced + adm[tied].sum(axis=0)
        k = min(N // s, int(reach.min()))

        def ok(k, fixed_counts, free):
            return _feasible(adm, free, np.maximum(k - fixed_counts, 0))

        while k > 0 and not ok(k, forced, tied):
            k -= 1
        greedy = forced + np.bincount(sigma[tied], minlength=s)
        if greedy.min() < k:
            counts = forced.copy()
            for pos, t in enumerate(tied):
                rest = tied[pos + 1 :]
                for i in np.flatnonzero(adm[t]):
                    counts[i] += 1
                    if ok(k, counts, rest):
                        sigma[t] = i
                        break
                    counts[i] -= 1
                else:  # pragma: no cover - feasibility is preserved by construction
                    raise AssertionError("lost max-min feasibility")

    phi = R[np.arange(N), sigma]
    partition = tuple(np.flatnonzero(sigma == i) for i in range(s))
    return AssignmentResult(
        sigma=sigma,
        partition=partition,
        phi=phi,
        cost=float(np.abs(phi).sum()),
        min_cardinality=int(min(len(p) for p in partition)),
    )


def delta_r(phi, r: int) -> float:
    """l1 distance from ``phi`` to the r-sparse vectors: sum of its N - r smallest magnitudes."""
    a = np.sort(np.abs(np.asarray(phi, dtype=float).ravel()))
    N = a.shape[0]
    if not 0 <= r <= N:
        raise ValueError(f"r={r} outside [0, {N}]")
    return float(a[: N - r].sum())


def top_r_indices(v, r: int) -> np.ndarray:
    """Indices of the r largest ``|v|``; equal magnitudes go to the smaller index."""
    a = np.abs(np.asarray(v, dtype=float).ravel())
    if not 0 <= r <= a.shape[0]:
        raise ValueError(f"r={r} outside [0, {a.shape[0]}]")
    order = np.lexsort((np.arange(a.shape[0]), -a))
    return np.sort(order[:r])


def lemma1_gap(v, v_prime, r: int) -> float:
    """Right side minus left side of the sparse-approximation triangle inequality.

    Returns ``(|v'|_1 - |v|_1 + 2 d_r(v)) - (|v' - v|_1 - 2 |(v' - v)_T|_1)``
    with T the r largest entries of ``v``; nonnegative up to rounding.
    """
    v = np.asarray(v, dtype=float).ravel()
    vp = np.asarray(v_prime, dtype=float).ravel()
    if v.shape != vp.shape:
        raise ValueError("vectors must have equal length")
    T = top_r_indices(v, r)
    d = vp - v
    lhs = np.abs(d).sum() - 2.0 * np.abs(d[T]).sum()
    rhs = np.abs(vp).sum() - np.abs(v).sum() + 2.0 * delta_r(v, r)
    return float(rhs - lhs)
