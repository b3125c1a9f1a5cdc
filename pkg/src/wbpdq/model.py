"""Domain types and elementary operations for weighted dequantizing recovery.

Everything here is real-valued. Weight vectors follow the two-level prior
support construction: coordinates believed to be in the support receive a
reduced weight ``theta``, all other coordinates weight one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np
import scipy.linalg as sla

__all__ = [
    "Signal",
    "WeightVector",
    "SensingMatrix",
    "Quantizer",
    "TubeConstraint",
    "make_weights",
    "quantize",
    "weighted_l1_norm",
    "lp_norm",
    "top_s_support",
    "weighted_s_term_error",
    "snr_db",
]


def _as_finite_vector(values, name="values") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class Signal:
    """Real signal of length N with an optional ground-truth support."""

    values: np.ndarray
    support: Optional[frozenset] = None

    def __post_init__(self):
        values = _as_finite_vector(self.values, "signal")
        if values.size < 1:
            raise ValueError("signal must have at least one entry")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.support is not None:
            support = frozenset(int(i) for i in self.support)
            if any(i < 0 or i >= values.size for i in support):
                raise IndexError("support index out of range")
            off = np.ones(values.size, dtype=bool)
            off[list(support)] = False
            if np.any(values[off] != 0):
                raise ValueError("signal has nonzero entries outside its support")
            object.__setattr__(self, "support", support)

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


@dataclass(frozen=True)
class WeightVector:
    """Two-level weights: ``theta`` on the prior support, one elsewhere."""

    weights: np.ndarray
    theta: float
    prior_support: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        w = _as_finite_vector(self.weights, "weights").copy()
        support = frozenset(int(i) for i in self.prior_support)
        expected = np.ones_like(w)
        if support:
            if min(support) < 0 or max(support) >= w.size:
                raise IndexError("prior support index out of range")
            expected[list(support)] = self.theta
        if not np.array_equal(w, expected):
            raise ValueError("weights do not match (theta, prior_support)")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "prior_support", support)
        object.__setattr__(self, "theta", float(self.theta))

    def __len__(self):
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.weights
        return self.weights.astype(dtype)

    @classmethod
    def uniform(cls, n: int, theta: float = 0.5) -> "WeightVector":
        """All-ones weights (no prior support); ``theta`` is carried for bounds."""
        return make_weights((), theta, n)


def make_weights(prior_support: Iterable[int], theta: float, n: int) -> WeightVector:
    """Build the weight vector for a prior support estimate.

    Parameters
    ----------
    prior_support : iterable of int
        Zero-based indices believed to belong to the signal support.
    theta : float
        Weight applied on the prior support, strictly between 0 and 1.
    n : int
        Signal length.

    Examples
    --------
    >>> make_weights({0, 2}, 0.5, 5).weights
    array([0.5, 1. , 0.5, 1. , 1. ])
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    support = frozenset(int(i) for i in prior_support)
    if support and (min(support) < 0 or max(support) >= n):
        raise IndexError("prior support index out of range")
    w = np.ones(n)
    if support:
        w[sorted(support)] = theta
    return WeightVector(w, float(theta), support)


class SensingMatrix:
    """Dense m x N sensing matrix with cached spectral quantities.

    The row-Gram Cholesky factor and the operator norm are computed once,
    on first use, and never mutated afterwards.
    """

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim != 2:
            raise ValueError(f"sensing matrix must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("sensing matrix contains non-finite entries")
        if a.shape[0] >= a.shape[1]:
            warnings.warn(
                f"sensing matrix is not compressive (m={a.shape[0]} >= N={a.shape[1]})",
                stacklevel=2,
            )
        a.setflags(write=False)
        self.entries = a

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self):
        return self.entries.shape

    def __matmul__(self, x):
        return self.entries @ x

    @property
    def T(self):
        return self.entries.T

    @cached_property
    def gram(self) -> np.ndarray:
        g = self.entries @ self.entries.T
        g.setflags(write=False)
        return g

    @cached_property
    def gram_factor(self):
        """Cholesky factor of the row Gram matrix; raises if rank deficient."""
        try:
            c = sla.cho_factor(self.gram, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise np.linalg.LinAlgError("sensing matrix is row-rank deficient") from exc
        diag = np.abs(np.diag(c[0]))
        if diag.min() <= 1e-10 * diag.max():
            raise np.linalg.LinAlgError("sensing matrix is row-rank deficient")
        return c

    @cached_property
    def gram_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.gram)

    @property
    def op_norm(self) -> float:
        """Spectral norm of the matrix."""
        return float(np.sqrt(max(self.gram_eigenvalues[-1], 0.0)))

    def __repr__(self):
        return f"SensingMatrix(m={self.m}, N={self.n})"


@dataclass(frozen=True)
class Quantizer:
    """Uniform mid-riser quantizer of bin width ``alpha``."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"bin width must be positive and finite, got {self.alpha}")

    def __call__(self, v):
        return quantize(v, self)


@dataclass(frozen=True)
class TubeConstraint:
    """The set ``{x : ||y - Phi x||_p <= epsilon}``; ``p = math.inf`` allowed."""

    matrix: SensingMatrix
    y: np.ndarray
    epsilon: float
    p: float

    def __post_init__(self):
        y = _as_finite_vector(self.y, "y")
        if y.size != self.matrix.m:
            raise ValueError("measurement length does not match matrix rows")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.p >= 2:
            raise ValueError("p must be >= 2")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", float(self.p))

    def residual(self, x) -> np.ndarray:
        return self.y - self.matrix @ x

    def distance_norm(self, x) -> float:
        return lp_norm(self.residual(x), self.p)

    def contains(self, x, rtol: float = 0.0) -> bool:
        return self.distance_norm(x) <= self.epsilon * (1.0 + rtol)


def quantize(v, q) -> np.ndarray:
    """Mid-riser quantization ``alpha * floor(v / alpha) + alpha / 2``.

    ``q`` may be a :class:`Quantizer` or a positive float bin width.
    """
    alpha = q.alpha if isinstance(q, Quantizer) else Quantizer(float(q)).alpha
    arr = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    return alpha * np.floor(arr / alpha) + alpha / 2


def lp_norm(v, p: float) -> float:
    v = np.asarray(v, dtype=float)
    if math.isinf(p):
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.linalg.norm(v, ord=p))


def weighted_l1_norm(x, w) -> float:
    return float(np.sum(np.abs(np.asarray(x, dtype=float)) * np.asarray(w, dtype=float)))


def top_s_support(scores, s: int) -> np.ndarray:
    """Indices of the ``s`` largest scores, ties broken by lowest index."""
    scores = np.asarray(scores, dtype=float)
    # stable sort on the negated scores keeps lower indices first among ties
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:s])


def weighted_s_term_error(x, w, s: int) -> float:
    """Error of the best weighted s-term approximation in the weighted l1 norm.

    The kept support holds the ``s`` indices with largest ``|x_i| * w_i``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise ValueError("signal and weights have different lengths")
    if not 1 <= s <= x.size:
        raise ValueError(f"s must lie in [1, {x.size}], got {s}")
    mass = np.abs(x) * w
    keep = top_s_support(mass, s)
    rest = np.ones(x.size, dtype=bool)
    rest[keep] = False
    return float(np.sum(mass[rest]))


def snr_db(truth, estimate) -> float:
    """Reconstruction SNR in decibels; ``math.inf`` for an exact estimate."""
    x = np.asarray(truth, dtype=float)
    xh = np.asarray(estimate, dtype=float)
    if x.shape != xh.shape:
        raise ValueError("truth and estimate have different lengths")
    ref = np.linalg.norm(x)
    if ref == 0:
        raise ValueError("SNR undefined for a zero reference signal")
    err = np.linalg.norm(x - xh)
    if err == 0:
        return math.inf
    return float(20.0 * np.log10(ref / err))
