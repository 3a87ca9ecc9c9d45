"""Switched linear-in-parameter systems: feature maps, data containers and simulation.

Conventions
-----------
Arrays are stored 0-based: sample ``t`` is column ``X[:, t]`` and mode labels are
integers in ``range(s)``.  File formats (CSV/JSON) use 1-based time and mode
labels; the conversion happens in :mod:`lsmid.io` only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Literal, Optional, Sequence

import numpy as np

__all__ = [
    "FeatureMapSpec",
    "NoiseSpec",
    "GroundTruth",
    "Dataset",
    "build_regressors",
    "simulate",
    "switching_generator",
    "random_inputs",
    "noise_sequence",
    "trial_seed",
    "LagUnderflowError",
    "SimulationDivergedError",
    "BudgetExceededError",
]


class LagUnderflowError(ValueError):
    """Not enough history to assemble the lagged regressor."""


class BudgetExceededError(RuntimeError):
    """A combinatorial enumeration would exceed its configured budget."""


class SimulationDivergedError(RuntimeError):
    """Recursion produced a non-finite output."""

    def __init__(self, index: int):
        super().__init__(f"simulation diverged at sample {index}")
        self.index = index


def trial_seed(root_seed: int, index: int) -> int:
    """Per-trial seed derived from a root seed (root XOR trial index)."""
    return int(root_seed) ^ int(index)


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMapSpec:
    """How the regressor ``x_t`` is built from observed signals.

    ``kind="identity"`` uses the raw input vector as regressor.  ``kind="arx"``
    stacks ``[y_{t-1}, ..., y_{t-na}, u_t, u_{t-1}, ..., u_{t-nb}]``.
    ``kind="polynomial"`` lifts the (optionally lagged) vector ``z_t`` to all
    monomials of total degree ``<= degree``, constant term included.
    """

    kind: Literal["identity", "arx", "polynomial"] = "identity"
    n_a: int = 0
    n_b: int = 0
    n_u: int = 1
    degree: int = 1
    lagged: bool = False

    def __post_init__(self):
        if self.kind not in ("identity", "arx", "polynomial"):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.n_a < 0 or self.n_b < 0:
            raise ValueError("n_a and n_b must be nonnegative")
        if self.n_u < 1:
            raise ValueError("n_u must be positive")
        if self.kind == "polynomial" and self.degree < 1:
            raise ValueError("polynomial degree must be positive")

    @property
    def uses_lags(self) -> bool:
        return self.kind == "arx" or (self.kind == "polynomial" and self.lagged)

    @property
    def max_lag(self) -> int:
        return max(self.n_a, self.n_b) if self.uses_lags else 0

    def z_dim(self, input_dim: Optional[int] = None) -> int:
        if self.uses_lags:
            return self.n_a + (self.n_b + 1) * self.n_u
        if input_dim is None:
            raise ValueError("input dimension needed for a non-lagged map")
        return input_dim

    def output_dim(self, input_dim: Optional[int] = None) -> int:
        d = self.z_dim(input_dim)
        if self.kind == "polynomial":
            return len(_monomials(d, self.degree))
        return d

    def lift(self, z: np.ndarray) -> np.ndarray:
        """Apply the static part of the map to columns of ``z`` (d x T)."""
        z = np.asarray(z, dtype=float)
        if self.kind != "polynomial":
            return z
        rows = []
        for mono in _monomials(z.shape[0], self.degree):
            if not mono:
                rows.append(np.ones(z.shape[1]))
            else:
                rows.append(np.prod(z[list(mono), :], axis=0))
        return np.vstack(rows)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.uses_lags:
            d.update(n_a=self.n_a, n_b=self.n_b, n_u=self.n_u)
        if self.kind == "polynomial":
            d.update(degree=self.degree, lagged=self.lagged)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureMapSpec":
        return cls(**d)


def _monomials(d: int, degree: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []
    for deg in range(degree + 1):
        out.extend(combinations_with_replacement(range(d), deg))
    return out


def _assemble_z(u: np.ndarray, y: np.ndarray, t: int, fmap: FeatureMapSpec) -> np.ndarray:
    parts = [y[t - k] for k in range(1, fmap.n_a + 1)]
    z = np.empty(fmap.z_dim())
    z[: fmap.n_a] = parts
    for k in range(fmap.n_b + 1):
        z[fmap.n_a + k * fmap.n_u : fmap.n_a + (k + 1) * fmap.n_u] = u[:, t - k]
    return z


def _as_input_matrix(inputs, n_u: Optional[int] = None) -> np.ndarray:
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    if n_u is not None and u.shape[0] != n_u:
        raise ValueError(f"input has {u.shape[0]} channels, map expects n_u={n_u}")
    return u


def build_regressors(raw_inputs, raw_outputs=None, fmap: FeatureMapSpec = FeatureMapSpec()) -> np.ndarray:
    """Regressor matrix ``X`` (n x N) from raw signals.

    For non-lagged maps ``raw_inputs`` holds ``z_t`` as columns (d x T) and every
    column produces a regressor.  For lagged maps ``raw_inputs`` is the input
    sequence (n_u x T, or length T when n_u = 1) and ``raw_outputs`` the output
    sequence on the same time base; the first ``max(n_a, n_b)`` samples are
    consumed as history and dropped.
    """
    if not fmap.uses_lags:
        z = np.asarray(raw_inputs, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        return fmap.lift(z)

    u = _as_input_matrix(raw_inputs, fmap.n_u)
    T = u.shape[1]
    if fmap.n_a > 0:
        if raw_outputs is None:
            raise LagUnderflowError("lag underflow: autoregressive map needs outputs")
        y = np.asarray(raw_outputs, dtype=float).ravel()
        if y.shape[0] < T - 1:
            raise ValueError(f"dimension mismatch: {y.shape[0]} outputs for {T} inputs")
    else:
        y = np.zeros(T)
    L = fmap.max_lag
    if T <= L:
        raise LagUnderflowError(f"lag underflow: {T} samples, need more than {L}")
    z = np.column_stack([_assemble_z(u, y, t, fmap) for t in range(L, T)])
    return fmap.lift(z)


# ---------------------------------------------------------------------------
# Noise and switching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Dense plus sparse additive noise.

    Outlier positions are drawn without replacement unless ``sparse_positions``
    pins them (0-based).  With ``sparse_sign="fixed"`` all outliers are positive.
    """

    dense: Literal["none", "gaussian", "uniform"] = "none"
    dense_scale: float = 0.0
    sparse_count: int = 0
    sparse_range: tuple[float, float] = (1.0, 1.0)
    sparse_sign: Literal["random", "fixed"] = "random"
    sparse_positions: Optional[tuple[int, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.dense not in ("none", "gaussian", "uniform"):
            raise ValueError(f"unknown dense noise {self.dense!r}")
        if self.dense_scale < 0:
            raise ValueError("dense noise scale must be nonnegative")
        if self.sparse_count < 0:
            raise ValueError("outlier count must be nonnegative")
        lo, hi = self.sparse_range
        if lo > hi:
            raise ValueError("sparse_range must satisfy lo <= hi")
        if self.sparse_sign not in ("random", "fixed"):
            raise ValueError(f"unknown sign mode {self.sparse_sign!r}")
        if self.sparse_positions is not None:
            object.__setattr__(self, "sparse_positions", tuple(int(p) for p in self.sparse_positions))
            if len(set(self.sparse_positions)) != self.sparse_count:
                raise ValueError("sparse_positions must list sparse_count distinct indices")

    def to_dict(self) -> dict:
        return {
            "dense": self.dense,
            "dense_scale": self.dense_scale,
            "sparse_count": self.sparse_count,
            "sparse_range": list(self.sparse_range),
            "sparse_sign": self.sparse_sign,
            "sparse_positions": None if self.sparse_positions is None else list(self.sparse_positions),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        if "sparse_range" in d:
            d["sparse_range"] = tuple(d["sparse_range"])
        if d.get("sparse_positions") is not None:
            d["sparse_positions"] = tuple(d["sparse_positions"])
        return cls(**d)


def noise_sequence(spec: NoiseSpec, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Noise vector of length N and the sorted outlier positions.

    Pure function of ``(spec, N)``.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.dense == "gaussian":
        v = spec.dense_scale * rng.standard_normal(N)
    elif spec.dense == "uniform":
        v = rng.uniform(-spec.dense_scale, spec.dense_scale, N)
    else:
        v = np.zeros(N)
    k = spec.sparse_count
    if k > N:
        raise ValueError(f"{k} outliers requested for {N} samples")
    if spec.sparse_positions is not None:
        pos = np.array(spec.sparse_positions, dtype=int)
        if k and (pos.min() < 0 or pos.max() >= N):
            raise ValueError("outlier position out of range")
    else:
        pos = rng.choice(N, size=k, replace=False)
    lo, hi = spec.sparse_range
    mag = rng.uniform(lo, hi, k) if hi > lo else np.full(k, float(lo))
    if spec.sparse_sign == "random":
        mag = mag * rng.choice([-1.0, 1.0], size=k)
    v[pos] += mag
    return v, np.sort(pos)


def switching_generator(kind: str, N: int, s: int, seed: int = 0, *, min_dwell: int = 1,
                        pattern: Optional[Sequence[int]] = None,
                        weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Switching signal of length N with labels in ``range(s)``.

    kind: ``"iid_uniform"`` (optionally weighted), ``"dwell"`` (every run of
    equal labels lasts at least ``min_dwell`` samples) or ``"periodic"``.
    """
    if s < 1:
        raise ValueError("s must be positive")
    rng = np.random.default_rng(seed)
    if kind == "periodic":
        if pattern is None or len(pattern) == 0:
            raise ValueError("empty switching pattern")
        p = np.asarray(pattern, dtype=int)
        if p.min() < 0 or p.max() >= s:
            raise ValueError("pattern labels must lie in range(s)")
        return np.resize(p, N)
    if kind == "iid_uniform":
        if weights is None:
            return rng.integers(0, s, size=N)
        w = np.asarray(weights, dtype=float)
        if w.shape != (s,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be s nonnegative numbers")
        return rng.choice(s, size=N, p=w / w.sum())
    if kind == "dwell":
        if min_dwell < 1:
            raise ValueError("min_dwell must be positive")
        sigma = np.empty(N, dtype=int)
        label = int(rng.integers(s))
        t = 0
        while t < N:
            run = min_dwell + int(rng.geometric(0.5)) - 1
            if N - (t + run) < min_dwell:
                run = N - t  # a short tail is absorbed into the current run
            sigma[t : t + run] = label
            t += run
            if s > 1:
                label = (label + 1 + int(rng.integers(s - 1))) % s
        return sigma
    raise ValueError(f"unknown switching kind {kind!r}")


def random_inputs(n_u: int, T: int, seed: int) -> np.ndarray:
    """iid standard Gaussian excitation (n_u x T)."""
    return np.random.default_rng(seed).standard_normal((n_u, T))


# ---------------------------------------------------------------------------
# Data containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundTruth:
    A: np.ndarray
    sigma: np.ndarray
    v: np.ndarray
    outliers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


@dataclass(frozen=True)
class Dataset:
    """Regressors ``X`` (n x N) and outputs ``y`` (N), with optional truth.

    ``inputs`` and ``y_warmup`` keep the raw signals of a simulated lagged system
    so the regressors can be rebuilt with :func:`build_regressors`.
    """

    X: np.ndarray
    y: np.ndarray
    truth: Optional[GroundTruth] = None
    fmap: Optional[FeatureMapSpec] = None
    inputs: Optional[np.ndarray] = None
    y_warmup: Optional[np.ndarray] = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[1] != y.shape[0]:
            raise ValueError(f"dimension mismatch: X is {X.shape}, y has {y.shape[0]} entries")
        if y.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite data")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.truth is not None:
            A = np.atleast_2d(np.asarray(self.truth.A, dtype=float))
            if A.shape[0] != X.shape[0]:
                raise ValueError("truth parameter matrix has wrong row count")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[1]

    @property
    def s(self) -> Optional[int]:
        return None if self.truth is None else self.truth.A.shape[1]

    def subset(self, idx) -> "Dataset":
        """Dataset restricted to the samples ``idx`` (truth sliced along)."""
        idx = np.asarray(idx)
        truth = None
        if self.truth is not None:
            keep = np.zeros(self.N, dtype=bool)
            keep[idx] = True
            remap = np.cumsum(keep) - 1
            outl = self.truth.outliers[keep[self.truth.outliers]]
            truth = GroundTruth(self.truth.A, self.truth.sigma[idx], self.truth.v[idx], remap[outl])
        return Dataset(self.X[:, idx], self.y[idx], truth)


def simulate(A_true, sigma_true, inputs, fmap: FeatureMapSpec = FeatureMapSpec(),
             noise: NoiseSpec = NoiseSpec(), y_init=None) -> Dataset:
    """Generate ``y_t = x_t . a_{sigma(t)} + v_t``.

    For non-lagged maps ``inputs`` holds ``z_t`` column-wise and N is its column
    count.  For lagged maps ``inputs`` is the raw input sequence of length
    ``N + max_lag``; the first ``max_lag`` outputs are initial conditions
    (``y_init``, zeros by default) and the recursion runs forward from there.
    """
    A = np.atleast_2d(np.asarray(A_true, dtype=float))
    sigma = np.asarray(sigma_true, dtype=int).ravel()
    s = A.shape[1]
    if sigma.size and (sigma.min() < 0 or sigma.max() >= s):
        raise ValueError("switching labels must lie in range(s)")
    N = sigma.shape[0]
    v, outliers = noise_sequence(noise, N)

    if not fmap.uses_lags:
        X = build_regressors(inputs, fmap=fmap)
        if X.shape[1] != N:
            raise ValueError(f"dimension mismatch: {X.shape[1]} regressors, {N} switching labels")
        if X.shape[0] != A.shape[0]:
            raise ValueError(f"dimension mismatch: regressors have n={X.shape[0]}, A has {A.shape[0]} rows")
        y = np.einsum("ij,ij->j", X, A[:, sigma]) + v
        if not np.all(np.isfinite(y)):
            raise SimulationDivergedError(int(np.argmin(np.isfinite(y))))
        return Dataset(X, y, GroundTruth(A, sigma, v, outliers), fmap)

    u = _as_input_matrix(inputs, fmap.n_u)
    L = fmap.max_lag
    if u.shape[1] != N + L:
        raise ValueError(f"dimension mismatch: need {N + L} input samples, got {u.shape[1]}")
    n = fmap.output_dim()
    if n != A.shape[0]:
        raise ValueError(f"dimension mismatch: map gives n={n}, A has {A.shape[0]} rows")
    yy = np.zeros(N + L)
    if y_init is not None:
        yy[:L] = np.asarray(y_init, dtype=float).ravel()[:L]
    X = np.empty((n, N))
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(N):
            t = L + k
            x = fmap.lift(_assemble_z(u, yy, t, fmap)[:, None])[:, 0]
            yy[t] = x @ A[:, sigma[k]] + v[k]
            if not (np.isfinite(yy[t]) and np.all(np.isfinite(x))):
                raise SimulationDivergedError(k)
            X[:, k] = x
    return Dataset(X, yy[L:], GroundTruth(A, sigma, v, outliers), fmap, inputs=u, y_warmup=yy[:L].copy())
