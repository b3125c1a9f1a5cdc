"""Douglas-Rachford splitting and the two decoders built on it.

The iteration is written in fixed-point form

    x_{k+1} = x_k - alpha_k G(x_k),
    G(x)    = prox_f2(x) - prox_{gamma f1}(2 prox_f2(x) - x),

with ``f1`` the weighted l1 norm and ``f2`` the indicator of the feasible set
(an lp tube for dequantization, an affine set for noiseless basis pursuit).
The estimate is ``prox_f2`` of the final iterate, so it is always feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .model import (
    SensingMatrix,
    Signal,
    TubeConstraint,
    WeightVector,
    lp_norm,
    weighted_l1_norm,
)
from .prox import (
    TubeProjectionConfig,
    TubeProjector,
    project_affine_set,
    prox_weighted_l1,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "dr_step",
    "douglas_rachford",
    "auto_epsilon",
    "solve_bpdq",
    "solve_bp",
]


def _thread_count() -> Optional[int]:
    try:
        from threadpoolctl import threadpool_info
    except ImportError:  # pragma: no cover
        return None
    counts = [info.get("num_threads") for info in threadpool_info()]
    counts = [c for c in counts if c]
    return max(counts) if counts else None


@dataclass(frozen=True)
class SolverConfig:
    """Settings of the splitting loop.

    ``relaxation`` is either a constant or a callable ``k -> alpha_k``; every
    value must lie in ``(0, 2)``. ``fp_tol=None`` means ``1e-7 * sqrt(N)``;
    ``fp_tol=0`` runs exactly ``max_iters`` iterations.
    """

    p: float = 2.0
    epsilon: Union[float, str] = "auto"
    gamma: float = 1.0
    relaxation: Union[float, Callable[[int], float]] = 1.0
    max_iters: int = 800
    fp_tol: Optional[float] = None
    x0: Union[str, np.ndarray] = "zero"
    epsilon_slack: float = 1.1

    def __post_init__(self):
        if not self.p >= 2:
            raise ValueError("p must be >= 2")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if isinstance(self.epsilon, str):
            if self.epsilon != "auto":
                raise ValueError("epsilon must be positive or 'auto'")
        elif not self.epsilon > 0:
            raise ValueError("epsilon must be positive or 'auto'")
        if not callable(self.relaxation):
            _check_relaxation(self.relaxation)
        if self.fp_tol is not None and self.fp_tol < 0:
            raise ValueError("fp_tol must be nonnegative")

    def alpha(self, k: int) -> float:
        a = self.relaxation(k) if callable(self.relaxation) else self.relaxation
        return _check_relaxation(a)

    def tolerance(self, n: int) -> float:
        return 1e-7 * math.sqrt(n) if self.fp_tol is None else self.fp_tol

    def initial_point(self, n: int) -> np.ndarray:
        if isinstance(self.x0, str):
            if self.x0 != "zero":
                raise ValueError("x0 must be 'zero' or a vector")
            return np.zeros(n)
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (n,):
            raise ValueError("x0 has the wrong length")
        return x0.copy()


def _check_relaxation(a) -> float:
    a = float(a)
    if not 0.0 < a < 2.0:
        raise ValueError(f"relaxation must lie in (0, 2), got {a}")
    return a


@dataclass
class SolveReport:
    estimate: Signal
    iterations: int
    residual_history: np.ndarray
    feasibility_gap: float
    objective: float
    converged: bool
    epsilon: float = math.nan
    fixed_point: Optional[np.ndarray] = field(default=None, repr=False)
    threads: Optional[int] = None

    @property
    def x(self) -> np.ndarray:
        return self.estimate.values


def dr_step(x, prox_f1, prox_f2, alpha: float, gamma: float):
    """One relaxed Douglas-Rachford step.

    Parameters
    ----------
    x : ndarray
        Current iterate.
    prox_f1 : callable
        ``prox_f1(v, gamma)`` returns ``prox_{gamma f1}(v)``.
    prox_f2 : callable
        ``prox_f2(v)`` returns ``prox_{f2}(v)``.
    alpha : float
        Relaxation in ``(0, 2)``.
    gamma : float
        Scale applied to ``f1``.

    Returns
    -------
    x_next : ndarray
    g_norm : float
        Euclidean norm of the fixed-point residual ``G(x)``.
    """
    _check_relaxation(alpha)
    x_next, g_norm, _ = _dr_step(np.asarray(x, dtype=float), prox_f1, prox_f2, alpha, gamma)
    return x_next, g_norm


def _dr_step(x, prox_f1, prox_f2, alpha, gamma):
    y = prox_f2(x)
    v = prox_f1(2.0 * y - x, gamma)
    g = y - v
    return x - alpha * g, float(np.linalg.norm(g)), y


def douglas_rachford(x0, prox_f1, prox_f2, cfg: SolverConfig, callback=None):
    """Run the relaxed iteration from ``x0``.

    Returns ``(x_final, residual_history, converged)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    tol = cfg.tolerance(x.size)
    history = []
    converged = False
    for k in range(cfg.max_iters):
        x, g_norm, _ = _dr_step(x, prox_f1, prox_f2, cfg.alpha(k), cfg.gamma)
        history.append(g_norm)
        if callback is not None:
            callback(k, x, g_norm)
        if g_norm <= tol and tol > 0:
            converged = True
            break
    return x, np.asarray(history), converged


def auto_epsilon(p: float, bin_width: float, m: int, slack: float = 1.1) -> float:
    """Noise radius for quantized measurements of bin width ``bin_width``.

    For finite ``p`` this is ``slack`` times the lp norm of a vector whose
    p-th moment matches ``m`` uniform errors on ``[-bin/2, bin/2]``. For
    ``p = inf`` the quantizer bound ``bin/2`` is exact, and no slack applies.
    """
    if not bin_width > 0:
        raise ValueError("bin width must be positive")
    if math.isinf(p):
        return bin_width / 2.0
    return slack * (bin_width / 2.0) * (m / (p + 1.0)) ** (1.0 / p)


def _weighted_prox(w):
    w = np.asarray(w, dtype=float)
    return lambda v, gamma: prox_weighted_l1(v, w, gamma)


def _report(matrix, y, w, x_final, prox_f2, history, converged, eps, p, cfg):
    estimate = prox_f2(x_final)
    gap = lp_norm(y - matrix @ estimate, p) - eps if eps == eps else \
        float(np.linalg.norm(y - matrix @ estimate))
    return SolveReport(
        estimate=Signal(estimate),
        iterations=int(history.size),
        residual_history=history,
        feasibility_gap=float(gap),
        objective=weighted_l1_norm(estimate, w),
        converged=bool(converged),
        epsilon=eps,
        fixed_point=x_final,
        threads=_thread_count(),
    )


def _check_inputs(y, matrix, w):
    if not isinstance(matrix, SensingMatrix):
        matrix = SensingMatrix(matrix)
    y = np.asarray(y, dtype=float)
    if y.shape != (matrix.m,):
        raise ValueError(f"y must have length {matrix.m}")
    w_arr = np.asarray(w, dtype=float)
    if w_arr.shape != (matrix.n,):
        raise ValueError(f"weights must have length {matrix.n}")
    return y, matrix, w_arr


def solve_bpdq(y, matrix, w, cfg: Optional[SolverConfig] = None,
               tube_cfg: Optional[TubeProjectionConfig] = None,
               bin_width: Optional[float] = None) -> SolveReport:
    """Weighted l1 minimization under an lp data-fidelity constraint.

    Solves ``min ||x||_{w,1}  s.t.  ||y - Phi x||_p <= eps``. With
    ``cfg.epsilon == 'auto'`` the quantizer ``bin_width`` must be given.
    """
    cfg = cfg or SolverConfig()
    y, matrix, w_arr = _check_inputs(y, matrix, w)
    if cfg.epsilon == "auto":
        if bin_width is None:
            raise ValueError("epsilon='auto' requires the quantizer bin width")
        eps = auto_epsilon(cfg.p, bin_width, matrix.m, cfg.epsilon_slack)
    else:
        eps = float(cfg.epsilon)
    tube = TubeConstraint(matrix, y, eps, cfg.p)
    projector = TubeProjector(tube, tube_cfg)
    x_final, history, converged = douglas_rachford(
        cfg.initial_point(matrix.n), _weighted_prox(w_arr), projector, cfg)
    return _report(matrix, y, w_arr, x_final, projector, history, converged, eps, cfg.p, cfg)


def solve_bp(y, matrix, w, cfg: Optional[SolverConfig] = None) -> SolveReport:
    """Noiseless weighted basis pursuit ``min ||x||_{w,1}  s.t.  Phi x = y``.

    The report's ``feasibility_gap`` is the Euclidean residual ``||y - Phi x||_2``.
    """
    cfg = cfg or SolverConfig()
    y, matrix, w_arr = _check_inputs(y, matrix, w)
    matrix.gram_factor  # fail early on rank deficiency

    def prox_f2(v, scale=None):
        return project_affine_set(v, matrix, y)

    x_final, history, converged = douglas_rachford(
        cfg.initial_point(matrix.n), _weighted_prox(w_arr), prox_f2, cfg)
    return _report(matrix, y, w_arr, x_final, prox_f2, history, converged,
                   math.nan, 2.0, cfg)
