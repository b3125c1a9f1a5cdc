"""Restricted isometry / weighted null space analysis and recovery bounds.

Notation used throughout: ``delta`` is an RIP constant and ``mu`` the RIP
scale, so that on s-sparse vectors

    mu (1 - delta)^(1/q) ||x||_q <= ||Phi x||_p <= mu (1 + delta)^(1/q) ||x||_q.

The weighted robust null space property of order s with constants
``(rho, gamma)`` asks that for every v and every ``|S| <= s``

    ||v_S||_q <= rho / s^(1 - 1/q) ||v_{S^c}||_{w,1} + gamma ||Phi v||_p.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .model import SensingMatrix, WeightVector, lp_norm, top_s_support

__all__ = [
    "RipEstimate",
    "RnspParams",
    "ErrorBoundResult",
    "RnspVerdict",
    "UncertifiableError",
    "cross_term_objective",
    "compute_c_pq",
    "fit_rip_constants",
    "estimate_rip",
    "rip_implies_rnsp",
    "rnsp_check",
    "rip_error_bound",
    "rnsp_error_bound",
    "recovery_error_bound",
    "gaussian_sample_size",
    "weighted_block_norm",
    "cone_membership",
]


class UncertifiableError(ValueError):
    """The RIP constants are too weak to certify the null space property."""


@dataclass(frozen=True)
class RipEstimate:
    s: int
    p: float
    q: float
    mu: float
    delta: float
    method: Literal["exact_22", "sampled"]
    num_samples: int = 0
    ratio_min: float = math.nan
    ratio_max: float = math.nan

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if self.method == "exact_22" and not (self.p == 2 and self.q == 2):
            raise ValueError("exact_22 is only defined for p = q = 2")


@dataclass(frozen=True)
class RnspParams:
    rho: float
    gamma_nsp: float
    s: int
    p: float
    q: float

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must lie in [0, 1), got {self.rho}")
        if not self.gamma_nsp > 0:
            raise ValueError("gamma_nsp must be positive")
        if self.s < 1:
            raise ValueError("order must be >= 1")


@dataclass(frozen=True)
class ErrorBoundResult:
    A: float
    B: float
    bound_value: float
    valid: bool
    r: Optional[float] = None
    steps: dict = field(default_factory=dict)


# --- cross-term constant for the duality map ------------------------------

def cross_term_objective(t, delta_s, delta_s2, delta_ss, p, q):
    """``f(t)`` whose minimum over ``t > 0`` is the cross-term constant."""
    a = (1 + delta_s) ** (2 / q)
    b = (p - 1) * (1 + delta_s2) ** (2 / q)
    c = (1 - delta_ss) ** (2 / q)
    t = np.asarray(t, dtype=float)
    return (a + b * t ** 2 - c * (1 + t ** 2)) / (2 * t)


def compute_c_pq(delta_s: float, delta_s2: float, delta_ss: float,
                 p: float, q: float) -> float:
    """Cross-term constant bounding ``|<J(Phi u), Phi v>|`` for disjoint supports.

    Equals ``sqrt((a - c)(b - c))`` with ``a = (1 + delta_s)^(2/q)``,
    ``b = (p - 1)(1 + delta_s')^(2/q)`` and ``c = (1 - delta_{s+s'})^(2/q)``,
    the minimum of :func:`cross_term_objective`.
    """
    for d in (delta_s, delta_s2, delta_ss):
        if not 0.0 <= d < 1.0:
            raise ValueError(f"RIP constants must lie in [0, 1), got {d}")
    if not (p >= 2 and q >= 2) or math.isinf(p) or math.isinf(q):
        raise ValueError("p and q must lie in [2, inf)")
    e = 2 / q
    # (1 + d)^e - 1 without cancellation, so q = 2 brackets are exact sums
    up_s = delta_s if e == 1 else math.expm1(e * math.log1p(delta_s))
    up_s2 = delta_s2 if e == 1 else math.expm1(e * math.log1p(delta_s2))
    down = delta_ss if e == 1 else -math.expm1(e * math.log1p(-delta_ss))
    first = up_s + down
    second = (p - 2) * (1 + up_s2) + up_s2 + down
    if first < 0 or second < 0:
        raise ValueError(
            f"negative bracket in the cross-term constant ({first}, {second})")
    if first == second:
        return first
    return math.sqrt(first * second)


# --- RIP estimation --------------------------------------------------------

def fit_rip_constants(ratio_min: float, ratio_max: float, q: float):
    """Solve ``mu (1 -/+ delta)^(1/q) = ratio_min / ratio_max`` for ``(mu, delta)``."""
    if not 0 <= ratio_min <= ratio_max or ratio_max <= 0:
        raise ValueError("need 0 <= ratio_min <= ratio_max, ratio_max > 0")
    lo, hi = ratio_min ** q, ratio_max ** q
    delta = (hi - lo) / (hi + lo)
    mu = ((hi + lo) / 2) ** (1 / q)
    return mu, delta


def _support_extremes(gram, supports):
    """Extreme eigenvalues of the Gram submatrices for a batch of supports."""
    sub = gram[supports[:, :, None], supports[:, None, :]]
    ev = np.linalg.eigvalsh(sub)
    return ev[:, 0].min(), ev[:, -1].max()


def _combinations_batches(n, s, batch=20000):
    it = itertools.combinations(range(n), s)
    while True:
        chunk = list(itertools.islice(it, batch))
        if not chunk:
            return
        yield np.array(chunk, dtype=np.intp)


def estimate_rip(matrix, s: int, p: float = 2.0, q: float = 2.0,
                 num_samples: int = 10000, seed: int = 0,
                 method: Optional[str] = None, budget: int = 10 ** 6) -> RipEstimate:
    """Estimate the RIP scale and constant of order ``s``.

    ``exact_22`` (only for ``p = q = 2``) enumerates every support of size
    ``s`` and uses extreme singular values. ``sampled`` draws random
    ``(support, unit l_q vector)`` pairs; the observed ratio range lies inside
    the true one, so the sampled constant never exceeds the exact one.
    By default the exact method is used whenever it applies and the number
    of supports is within ``budget``.
    """
    phi = matrix.entries if isinstance(matrix, SensingMatrix) else np.asarray(matrix, float)
    n = phi.shape[1]
    if not 1 <= s <= n:
        raise ValueError(f"order s must lie in [1, {n}], got {s}")
    n_supports = math.comb(n, s)
    if method is None:
        method = "exact_22" if (p == 2 and q == 2 and n_supports <= budget) else "sampled"
    if method == "exact_22":
        if not (p == 2 and q == 2):
            raise ValueError("exact_22 requires p = q = 2")
        if n_supports > budget:
            raise ValueError(f"{n_supports} supports exceed the enumeration budget {budget}")
        gram = phi.T @ phi
        lo, hi = math.inf, 0.0
        for supports in _combinations_batches(n, s):
            a, b = _support_extremes(gram, supports)
            lo, hi = min(lo, a), max(hi, b)
        r_min, r_max = math.sqrt(max(lo, 0.0)), math.sqrt(max(hi, 0.0))
        samples = 0
    elif method == "sampled":
        if num_samples < 1:
            raise ValueError("num_samples must be positive")
        rng = np.random.default_rng(seed)
        r_min, r_max = math.inf, 0.0
        done = 0
        while done < num_samples:
            k = min(4096, num_samples - done)
            idx = np.argsort(rng.random((k, n)), axis=1)[:, :s]
            vals = rng.standard_normal((k, s))
            x = np.zeros((k, n))
            np.put_along_axis(x, idx, vals, axis=1)
            num = _batch_norm(x @ phi.T, p)
            den = _batch_norm(vals, q)
            ratios = num / den
            r_min, r_max = min(r_min, ratios.min()), max(r_max, ratios.max())
            done += k
        samples = num_samples
    else:
        raise ValueError(f"unknown method {method!r}")
    if r_min <= 0:
        raise ValueError(f"matrix annihilates an {s}-sparse vector: no RIP of this order")
    mu, delta = fit_rip_constants(r_min, r_max, q)
    return RipEstimate(s=s, p=p, q=q, mu=mu, delta=delta, method=method,
                       num_samples=samples, ratio_min=r_min, ratio_max=r_max)


def _batch_norm(v, p):
    if math.isinf(p):
        return np.max(np.abs(v), axis=-1)
    return np.sum(np.abs(v) ** p, axis=-1) ** (1.0 / p)


# --- RIP => weighted RNSP --------------------------------------------------

def rip_implies_rnsp(rip2s: RipEstimate, theta: float, p: Optional[float] = None,
                     q: Optional[float] = None) -> RnspParams:
    """Null space constants implied by an RIP estimate of order ``2s``.

    ``rho = C / (theta^2 (1 - delta)^(2/q))`` and
    ``gamma = (1 + delta)^(1/q) / (mu (1 - delta)^(2/q))`` with ``C`` the
    cross-term constant at equal deltas. Raises :class:`UncertifiableError`
    when ``rho >= 1``.
    """
    p = rip2s.p if p is None else p
    q = rip2s.q if q is None else q
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    s = rip2s.s // 2
    if s < 1:
        raise ValueError("need an RIP estimate of order >= 2")
    d = rip2s.delta
    c = compute_c_pq(d, d, d, p, q)
    lower = (1 - d) ** (2 / q)
    rho = c / (theta ** 2 * lower)
    gamma = (1 + d) ** (1 / q) / (rip2s.mu * lower)
    if rho >= 1:
        raise UncertifiableError(f"implied rho = {rho:.4g} >= 1; no certificate")
    return RnspParams(rho=rho, gamma_nsp=gamma, s=s, p=p, q=q)


@dataclass(frozen=True)
class RnspVerdict:
    falsified: bool
    witness_v: Optional[np.ndarray] = None
    witness_support: Optional[tuple] = None
    tightest_rho: float = 0.0
    num_samples: int = 0

    def __bool__(self):
        return self.falsified


def _null_space(phi):
    _, sv, vt = np.linalg.svd(phi)
    rank = int(np.sum(sv > sv.max() * max(phi.shape) * np.finfo(float).eps)) if sv.size else 0
    return vt[rank:].T


def _sample_directions(phi, s, num, rng):
    """Mix of Gaussian, sparse, null-space and near-null-space vectors."""
    m, n = phi.shape
    kinds = rng.integers(0, 4, size=num)
    out = rng.standard_normal((num, n))
    sparse_rows = np.flatnonzero(kinds == 1)
    for i in sparse_rows:
        k = int(rng.integers(1, min(n, 3 * s) + 1))
        keep = rng.permutation(n)[:k]
        mask = np.zeros(n, dtype=bool)
        mask[keep] = True
        out[i, ~mask] = 0.0
    ns = _null_space(phi)
    if ns.shape[1]:
        null_rows = np.flatnonzero(kinds >= 2)
        coef = rng.standard_normal((null_rows.size, ns.shape[1]))
        out[null_rows] = coef @ ns.T
        near = null_rows[kinds[null_rows] == 3]
        out[near] += 1e-3 * rng.standard_normal((near.size, n))
    return out


def _candidate_supports(n, s, exhaustive_limit):
    if math.comb(n, s) <= exhaustive_limit:
        return np.array(list(itertools.combinations(range(n), s)), dtype=np.intp)
    return None


def _worst_rho(v_abs, w, phi_norms, s, q, gamma, supports):
    """Largest rho needed over the candidate supports, per sample."""
    num, n = v_abs.shape
    mass = v_abs * w
    total = mass.sum(axis=1)
    scale = s ** (1 - 1 / q)
    if supports is None:
        cands = np.stack([
            np.sort(np.argsort(-v_abs, axis=1, kind="stable")[:, :s], axis=1),
            np.sort(np.argsort(-mass, axis=1, kind="stable")[:, :s], axis=1),
        ], axis=1)  # (num, 2, s)
        rows = np.arange(num)[:, None, None]
        lhs = _batch_norm(v_abs[rows, cands], q)
        inside = mass[rows, cands].sum(axis=2)
        sup_idx = cands
    else:
        lhs = _batch_norm(v_abs[:, supports], q)  # (num, K)
        inside = mass[:, supports].sum(axis=2)
        sup_idx = None
    outside = np.maximum(total[:, None] - inside, 0.0)
    numer = lhs - gamma * phi_norms[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(outside > 0, numer * scale / outside,
                        np.where(numer > 1e-12, np.inf, -np.inf))
    best = np.argmax(need, axis=1)
    rows = np.arange(num)
    worst = need[rows, best]
    if sup_idx is None:
        chosen = supports[best]
    else:
        chosen = sup_idx[rows, best]
    return worst, chosen, lhs[rows, best], outside[rows, best]


def rnsp_check(matrix, w, params: RnspParams, num_samples: int = 10000, seed: int = 0,
               exhaustive_limit: int = 5000) -> RnspVerdict:
    """Search for a violation of the weighted robust null space property.

    Samples Gaussian, sparse, null-space and near-null-space directions. For
    each sample the supports tried are all size-``s`` supports when there are
    at most ``exhaustive_limit`` of them, otherwise the top-``|v|`` and
    top-``|v| w`` supports. A violation needs the left side to exceed the
    right side by more than ``1e-12``.
    """
    phi = matrix.entries if isinstance(matrix, SensingMatrix) else np.asarray(matrix, float)
    w = np.asarray(w, dtype=float)
    n = phi.shape[1]
    if w.shape != (n,):
        raise ValueError("weights have the wrong length")
    s, q, p = params.s, params.q, params.p
    if s > n:
        raise ValueError("order exceeds the signal length")
    rng = np.random.default_rng(seed)
    supports = _candidate_supports(n, s, exhaustive_limit)
    scale = s ** (1 - 1 / q)
    tightest = -math.inf
    witness = None
    done = 0
    batch = max(1, min(2000, 2_000_000 // max(1, (supports.shape[0] if supports is not None else 2) * s)))
    while done < num_samples:
        k = min(batch, num_samples - done)
        v = _sample_directions(phi, s, k, rng)
        phi_norms = _batch_norm(v @ phi.T, p)
        worst, chosen, lhs, outside = _worst_rho(np.abs(v), w, phi_norms, s, q,
                                                 params.gamma_nsp, supports)
        i = int(np.argmax(worst))
        if worst[i] > tightest:
            tightest = float(worst[i])
        rhs = params.rho / scale * outside + params.gamma_nsp * phi_norms
        viol = lhs - rhs
        j = int(np.argmax(viol))
        if viol[j] > 1e-12 and witness is None:
            witness = (v[j].copy(), tuple(int(t) for t in chosen[j]))
        done += k
    if witness is not None:
        return RnspVerdict(True, witness[0], witness[1], tightest, num_samples)
    return RnspVerdict(False, None, None, tightest, num_samples)


# --- recovery error bounds -------------------------------------------------

def rip_error_bound(delta_2s: float, mu: float, p: float, q: float, theta: float,
                    s: int, epsilon: float, sigma: float) -> ErrorBoundResult:
    """Bound on ``||x_hat - x||_q`` from an RIP of order ``2s``.

    The form is ``A eps / mu + B s^(1/q - 1) sigma``. Validity requires
    ``theta^2 (1 - delta)^(2/q) > C``.
    """
    c = compute_c_pq(delta_2s, delta_2s, delta_2s, p, q)
    lower = (1 - delta_2s) ** (2 / q)
    upper = (1 + delta_2s) ** (1 / q)
    denom = theta ** 2 * lower - c
    steps = {"C": c, "denominator": denom}
    if denom <= 0:
        return ErrorBoundResult(A=math.nan, B=math.nan, bound_value=math.nan,
                                valid=False, steps=steps)
    # ||h_{S01}||_q <= a eps + (C / lower) sum_{l>=2} ||h_{S_l}||_q
    a = 2 * upper / (mu * lower)
    # sum_{l>=2} ||h_{S_l}||_q and ||h_{S01^c}||_q are both
    # <= theta^-2 s^(1/q-1) ||h_{S^c}||_{w,1}
    k = (c / lower + 1) / theta ** 2
    # ||h_S||_q <= a' eps + b' s^(1/q-1) sigma, after solving the implicit bound
    a_s = 2 * theta ** 2 * upper / (mu * denom)
    b_s = 2 * c / denom
    # ||h||_q <= a eps + k s^(1/q-1) (2 sigma + s^(1-1/q) ||h_S||_q)
    A = mu * (a + k * a_s)
    B = k * (2 + b_s)
    steps.update({"a": a, "K": k, "hS_eps": a_s, "hS_sigma": b_s})
    value = A * epsilon / mu + B * s ** (1 / q - 1) * sigma
    return ErrorBoundResult(A=A, B=B, bound_value=value, valid=True, steps=steps)


def rnsp_error_bound(rho: float, gamma: float, theta: float, s: int, r: float,
                     q: float, epsilon: float, sigma: float) -> ErrorBoundResult:
    """Bound on ``||x_hat - x||_r`` (``1 <= r <= q``) from a weighted RNSP.

    The form is ``A s^(1/r - 1/q) eps + B s^(1/r - 1) sigma``; ``r = q = inf``
    reduces to ``A eps + B sigma / s``.
    """
    if not r <= q or r < 1:
        raise ValueError("need 1 <= r <= q")
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    if not rho < 1:
        return ErrorBoundResult(A=math.nan, B=math.nan, bound_value=math.nan,
                                valid=False, r=r)
    inv = 1 / theta ** 2
    B = 2 * (rho ** 2 + 2 * rho + inv) / (1 - rho)
    # the Phi h coefficient is (rho^2+2rho+1/theta^2)/(1-rho) + (rho+2),
    # and ||Phi h||_p <= 2 eps
    A = 2 * gamma * (rho + 2 + inv) / (1 - rho)
    inv_r = 0.0 if math.isinf(r) else 1 / r
    inv_q = 0.0 if math.isinf(q) else 1 / q
    value = A * s ** (inv_r - inv_q) * epsilon + B * s ** (inv_r - 1) * sigma
    return ErrorBoundResult(A=A, B=B, bound_value=value, valid=True, r=r,
                            steps={"h_Sc_coef": 1 / (1 - rho)})


def recovery_error_bound(mode: str, **inputs) -> ErrorBoundResult:
    """Dispatch to :func:`rip_error_bound` (``'rip_thm1'``) or
    :func:`rnsp_error_bound` (``'rnsp_thm2'``)."""
    if mode in ("rip_thm1", "thm1"):
        return rip_error_bound(**inputs)
    if mode in ("rnsp_thm2", "thm2"):
        return rnsp_error_bound(**inputs)
    raise ValueError(f"unknown bound mode {mode!r}")


# --- Gaussian sample size and the block norm -------------------------------

def gaussian_sample_size(s: int, q: float, n: int, eta: float, c: float = 1.0) -> int:
    """Rows sufficient for a Gaussian matrix to have the weighted RNSP w.h.p.

    ``ceil(c (s^(2 - 2/q) ln(e n / s) + ln(1 / eta)))``; the constant ``c`` is
    not known in closed form.
    """
    if not 1 <= s <= n:
        raise ValueError("need 1 <= s <= n")
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if not c > 0:
        raise ValueError("c must be positive")
    if not q >= 1:
        raise ValueError("q must be >= 1")
    expo = 2.0 if math.isinf(q) else 2 - 2 / q
    return int(math.ceil(c * (s ** expo * math.log(math.e * n / s) + math.log(1 / eta))))


def weighted_block_norm(x, w, s: int, q: float) -> float:
    """Sum of l_q norms over consecutive size-``s`` blocks of ``|x|``, ordered
    by ``|x_i| w_i`` nonincreasing (lowest index first among ties)."""
    x = np.abs(np.asarray(x, dtype=float))
    w = np.asarray(w, dtype=float)
    n = x.size
    if not 1 <= s:
        raise ValueError("block size must be >= 1")
    order = np.argsort(-(x * w), kind="stable")
    xs = x[order]
    total = 0.0
    for start in range(0, n, s):
        total += lp_norm(xs[start:start + s], q)
    return float(total)


def cone_membership(x, w, rho: float, s: int, q: float, exhaustive_n: int = 12):
    """Test ``exists |S| = s : ||x_S||_q >= rho / s^(1-1/q) ||x_{S^c}||_{w,1}``.

    Tries the top-``|x|`` and top-``|x| w`` supports; for ``N <= exhaustive_n``
    every support is checked, which makes the verdict exact. Returns
    ``(is_member, witness_support_or_None)``.
    """
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    n = x.size
    if not 1 <= s <= n:
        raise ValueError(f"s must lie in [1, {n}]")
    ax = np.abs(x)
    mass = ax * w
    total = mass.sum()
    scale = rho / s ** (1 - 1 / q)

    def holds(sup):
        sup = np.asarray(sup)
        return lp_norm(ax[sup], q) >= scale * (total - mass[sup].sum())

    for cand in (top_s_support(ax, s), top_s_support(mass, s)):
        if holds(cand):
            return True, tuple(int(i) for i in cand)
    if n <= exhaustive_n:
        for sup in itertools.combinations(range(n), s):
            if holds(sup):
                return True, sup
    return False, None
