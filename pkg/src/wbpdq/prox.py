"""Proximal operators and projections.

All proximal maps here share the calling convention ``prox(v, scale)`` for
``prox_{scale * f}(v)``; projections ignore ``scale``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .model import SensingMatrix, TubeConstraint, lp_norm

__all__ = [
    "NewtonConfig",
    "TubeProjectionConfig",
    "ConvergenceError",
    "soft_threshold",
    "prox_weighted_l1",
    "project_lp_ball",
    "lp_ball_kkt_residual",
    "project_tube",
    "TubeProjector",
    "project_affine_set",
    "prox_composition",
]


class ConvergenceError(RuntimeError):
    """An inner iterative scheme failed to reach its tolerance."""


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 100
    tol: float = 1e-10
    bisection_fallback: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class TubeProjectionConfig:
    method: Literal["iterative_dual", "tight_frame"] = "iterative_dual"
    inner_max_iters: int = 2000
    inner_tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("iterative_dual", "tight_frame"):
            raise ValueError(f"unknown tube projection method {self.method!r}")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if self.inner_max_iters < 1:
            raise ValueError("inner_max_iters must be >= 1")


def soft_threshold(x, threshold):
    """Componentwise ``sign(x) * max(|x| - threshold, 0)``."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def prox_weighted_l1(x, w, gamma: float) -> np.ndarray:
    """Proximal map of ``gamma * ||.||_{w,1}``: soft thresholding at ``gamma * w``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise ValueError("x and w have different lengths")
    return soft_threshold(x, gamma * w)


# --- projection onto the unit lp ball -------------------------------------

def lp_ball_kkt_residual(x, u, lam, p) -> np.ndarray:
    """Residual of the stationarity system for projecting ``|x|`` onto the lp sphere.

    Both ``x`` and ``u`` are taken in the nonnegative orthant. The first
    ``len(x)`` entries are ``u - x + p lam u^(p-1)``, the last one is
    ``sum(u^p) - 1``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.concatenate([u - x + p * lam * u ** (p - 1), [np.sum(u ** p) - 1.0]])


def _coordinate_solve(a, lam, p, iters=200):
    """Solve ``u + p lam u^(p-1) = a`` for each ``a >= 0``."""
    if lam == 0:
        return a.copy()
    c = p * lam
    # the root lies below both a and (a/c)^(1/(p-1)); h is convex increasing
    # on u >= 0, so Newton started right of the root decreases onto it
    u = np.minimum(a, (a / c) ** (1.0 / (p - 1)))
    for _ in range(iters):
        up = u ** (p - 2)
        step = (u + c * up * u - a) / (1.0 + c * (p - 1) * up)
        u_new = np.maximum(u - step, 0.0)
        if np.all(np.abs(u_new - u) <= 4e-16 * np.maximum(u_new, 1e-300)):
            return u_new
        u = u_new
    return u


def _bracket_multiplier(a, p):
    """Bracketed root search for the multiplier with ``||u(lam)||_p = 1``.

    ``||u(lam)||_p`` decreases in ``lam``; the upper end is doubled until it
    brackets, then Brent's method (bisection-safeguarded) refines it.
    """
    def gap(lam):
        return np.sum(_coordinate_solve(a, lam, p) ** p) ** (1.0 / p) - 1.0

    lo, hi = 0.0, 1.0
    while gap(hi) > 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise ConvergenceError("could not bracket the lp-ball multiplier")
    lam = brentq(gap, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return _coordinate_solve(a, lam, p), lam


def _newton_lp_sphere(a, p, cfg: NewtonConfig, u=None, lam=None):
    """Damped Newton iteration on the (m+1)-dimensional stationarity system.

    Steps are cut to stay inside ``u >= 0, lam >= 0`` and to decrease the
    residual norm. Returns ``(u, lam)`` or ``None`` when the iteration stalls.
    """
    if u is None:
        amax = a.max()
        u = a / (amax * np.sum((a / amax) ** p) ** (1.0 / p))
    up2 = u ** (p - 2)
    g = p * up2 * u
    if lam is None:
        # least-squares multiplier: (u - a) + lam * g is linear in lam
        gg = g @ g
        lam = max(-((u - a) @ g) / gg, 0.0) if gg > 0 else 0.0
    f_u = u - a + lam * g
    f_l = (g @ u) / p - 1.0
    res = math.sqrt(f_u @ f_u + f_l * f_l)
    for _ in range(cfg.max_iters):
        if res <= cfg.tol:
            return u, lam
        # arrowhead Jacobian [[diag(d), g], [g^T, 0]] solved by Schur complement
        d = 1.0 + lam * p * (p - 1) * up2
        schur = g @ (g / d)
        if not schur > 0:
            return None
        d_lam = (f_l - g @ (f_u / d)) / schur
        d_u = -(f_u + g * d_lam) / d
        t = 1.0
        neg = d_u < 0
        if np.any(neg):
            t = min(t, 0.99 * np.min(-u[neg] / d_u[neg]))
        if d_lam < 0:
            t = min(t, 0.99 * lam / -d_lam) if lam > 0 else 0.0
        if t <= 0:
            return None
        while True:
            u_new = u + t * d_u
            lam_new = lam + t * d_lam
            up2_new = u_new ** (p - 2)
            g_new = p * up2_new * u_new
            f_u_new = u_new - a + lam_new * g_new
            f_l_new = (g_new @ u_new) / p - 1.0
            res_new = math.sqrt(f_u_new @ f_u_new + f_l_new * f_l_new)
            if res_new < res or t < 1e-12:
                break
            t *= 0.5
        if not res_new < res:
            return None
        u, lam, g, up2, f_u, f_l, res = u_new, lam_new, g_new, up2_new, f_u_new, f_l_new, res_new
    return (u, lam) if res <= cfg.tol else None


def project_lp_ball(x, p: float, cfg: Optional[NewtonConfig] = None,
                    warm: Optional[dict] = None) -> np.ndarray:
    """Euclidean projection of ``x`` onto the unit lp ball, ``p >= 2``.

    Closed forms are used for ``p = 2`` (radial scaling) and ``p = inf``
    (clipping). For ``2 < p < inf`` the stationarity system of the Lagrangian
    is solved by Newton's method in the nonnegative orthant, with signs
    restored afterwards; if Newton leaves the domain or stalls, a bracketed
    search on the multiplier takes over.

    Newton starts from ``(x / ||x||_p, lam0)`` with ``lam0`` the least-squares
    multiplier for that point. Passing a dict as ``warm`` instead starts from
    the multiplier stored there by a previous call (and updates it), which
    pays off when projecting a slowly varying sequence of points.
    """
    if not p >= 2:
        raise ValueError(f"p must be >= 2, got {p}")
    x = np.asarray(x, dtype=float)
    if math.isinf(p):
        return np.clip(x, -1.0, 1.0)
    if p == 2:
        nrm = np.linalg.norm(x)
        return x if nrm <= 1.0 else x / nrm
    if lp_norm(x, p) <= 1.0:
        return x
    cfg = cfg or NewtonConfig()
    a = np.abs(x)
    nz = a > 0
    a_nz = a[nz]
    out = None
    lam_prev = warm.get("lam") if warm is not None else None
    if lam_prev:
        out = _newton_lp_sphere(a_nz, p, cfg, _coordinate_solve(a_nz, lam_prev, p), lam_prev)
    if out is None:
        out = _newton_lp_sphere(a_nz, p, cfg)
    if out is None:
        if not cfg.bisection_fallback:
            raise ConvergenceError("Newton projection onto the lp ball did not converge")
        u_nz, lam = _bracket_multiplier(a_nz, p)
        # polish so the stationarity residual meets the Newton tolerance
        polished = _newton_lp_sphere(a_nz, p, cfg, u_nz, lam)
        if polished is not None:
            u_nz, lam = polished
    else:
        u_nz, lam = out
    if warm is not None:
        warm["lam"] = lam
    u = np.zeros_like(a)
    u[nz] = u_nz
    return np.sign(x) * u


def _dual_norm_exponent(p: float) -> float:
    if math.isinf(p):
        return 1.0
    if p == 1:
        return math.inf
    return p / (p - 1.0)


# --- projection onto the tube {x : ||y - Phi x||_p <= eps} -----------------

class TubeProjector:
    """Reusable projector onto a fixed tube.

    The ``iterative_dual`` method runs accelerated proximal gradient on the
    dual problem

        min_z  1/2 z' G z - z' (Phi x - y) + eps ||z||_{p*}

    with ``G = Phi Phi'``; the primal point is ``x - Phi' z``. The dual
    variable is kept between calls, which makes repeated projections of
    nearby points (as in a splitting loop) cheap.
    """

    def __init__(self, tube: TubeConstraint, cfg: Optional[TubeProjectionConfig] = None,
                 newton: Optional[NewtonConfig] = None):
        self.tube = tube
        self.cfg = cfg or TubeProjectionConfig()
        self.newton = newton or NewtonConfig()
        self._z = None
        self._warm = {}
        self.last_inner_iters = 0
        mat = tube.matrix
        self._lmax = float(mat.gram_eigenvalues[-1])
        if self._lmax <= 0:
            raise ValueError("sensing matrix is zero")

    def reset(self):
        self._z = None

    def __call__(self, x, scale=None):
        return self.project(x)

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        tube = self.tube
        r = tube.matrix @ x - tube.y
        if lp_norm(r, tube.p) <= tube.epsilon:
            self.last_inner_iters = 0
            return x
        if self.cfg.method == "tight_frame":
            return self._tight_frame(x, r)
        return self._iterative_dual(x, r)

    def _tight_frame(self, x, r):
        tube = self.tube
        eps = tube.epsilon
        # prox of (indicator of B_p) o A with A(x) = (Phi x - y)/eps and
        # A A* treated as nu Id, nu = lambda_max(Phi Phi') / eps^2
        shrunk = eps * project_lp_ball(r / eps, tube.p, self.newton)
        self.last_inner_iters = 0
        return x + tube.matrix.T @ (shrunk - r) / self._lmax

    def _ball_prox_dual(self, v, t):
        # prox of t * eps * ||.||_{p*} by Moreau: v - t eps P_{B_p}(v / (t eps))
        c = t * self.tube.epsilon
        return v - c * project_lp_ball(v / c, self.tube.p, self.newton, self._warm)

    def _iterative_dual(self, x, b):
        tube = self.tube
        G = tube.matrix.gram
        eps, p = tube.epsilon, tube.p
        step = 1.0 / self._lmax
        tol = self.cfg.inner_tol
        z = np.zeros_like(b) if self._z is None else self._z.copy()
        w = z.copy()
        t_k = 1.0
        scale_b = max(np.linalg.norm(b), 1e-300)
        converged = False
        it = 0
        for it in range(1, self.cfg.inner_max_iters + 1):
            grad = G @ w - b
            z_new = self._ball_prox_dual(w - step * grad, step)
            dz = z_new - z
            # gradient-based adaptive restart
            if (w - z_new) @ dz > 0:
                t_k = 1.0
                w = z_new
            else:
                t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
                w = z_new + ((t_k - 1.0) / t_next) * dz
                t_k = t_next
            z = z_new
            # G dz is the change of the primal residual Phi (x - Phi' z)
            move = np.linalg.norm(G @ dz)
            if move <= tol * scale_b:
                r = b - G @ z
                if lp_norm(r, p) <= eps * (1.0 + tol):
                    converged = True
                    break
        self.last_inner_iters = it
        self._z = z
        if not converged:
            r = b - G @ z
            if lp_norm(r, p) > eps * (1.0 + 10 * tol) and \
                    lp_norm(r, p) > eps * (1.0 + 1e-6):
                raise ConvergenceError(
                    f"tube projection did not converge in {self.cfg.inner_max_iters} iterations")
        return x - tube.matrix.T @ z


def project_tube(x, tube: TubeConstraint, cfg: Optional[TubeProjectionConfig] = None,
                 newton: Optional[NewtonConfig] = None) -> np.ndarray:
    """Project ``x`` onto ``{u : ||y - Phi u||_p <= eps}``."""
    return TubeProjector(tube, cfg, newton).project(x)


def project_affine_set(x, matrix: SensingMatrix, y) -> np.ndarray:
    """Project ``x`` onto ``{u : Phi u = y}`` via the cached row-Gram factor."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = y - matrix @ x
    if not np.any(r):
        return x
    return x + matrix.T @ sla.cho_solve(matrix.gram_factor, r, check_finite=False)


def prox_composition(prox_f: Callable, L, nu: float, x, check: bool = True,
                     atol: float = 1e-8) -> np.ndarray:
    """Proximal map of ``f o L`` for a linear ``L`` with ``L L' = nu Id``.

    ``prox_f(v, scale)`` must return ``prox_{scale f}(v)``.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    L = np.asarray(L.entries if isinstance(L, SensingMatrix) else L, dtype=float)
    x = np.asarray(x, dtype=float)
    if check:
        gap = np.max(np.abs(L @ L.T - nu * np.eye(L.shape[0])))
        if gap > atol * max(1.0, nu):
            raise ValueError(f"L L* != nu Id (max deviation {gap:.3g})")
    Lx = L @ x
    return x + L.T @ (prox_f(Lx, nu) - Lx) / nu
