"""First-order primal-dual solvers for the discretized sparse recovery problems.

Both problems are solved with the same saddle-point scheme (alternating a
proximal ascent in the dual and a proximal descent in the primal, with
over-relaxation):

* equality-constrained l1:   min |x|_1  s.t.  A x = b,
  whose dual is               max <b, p>  s.t.  |A^T p|_inf <= 1;
* unconstrained LASSO:        min 0.5*|A x - b|^2 + lam*|x|_1,
  whose dual vector is read off as  p = (b - A x) / lam.

Outcomes carry the primal iterate, the dual vector in the convention above,
and certified KKT residuals including a duality gap evaluated at a
feasibility-rescaled dual point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SolverConfig",
    "KktResiduals",
    "SolveOutcome",
    "solve_l1_equality",
    "solve_lasso",
    "operator_norm_estimate",
]

_STEP_SAFETY = 1.02  # inflate the operator-norm estimate before setting step sizes
_SUPPORT_EPS = 1e-6  # relative threshold defining the support for sign alignment


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 100_000
    tol_primal: float = 1e-9
    tol_dual: float = 1e-9
    step_ratio: float = 1.0
    operator_norm_power_iters: int = 200
    check_every: int = 50

    def __post_init__(self) -> None:
        if self.tol_primal <= 0 or self.tol_dual <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_ratio <= 0:
            raise ValueError("step_ratio must be positive")


@dataclass(frozen=True)
class KktResiduals:
    feasibility: float
    certificate_bound: float
    support_alignment: float
    duality_gap: float


@dataclass(frozen=True)
class SolveOutcome:
    primal: np.ndarray
    dual: np.ndarray
    kkt: KktResiduals
    iterations: int
    converged: bool
    objective: float
    dual_objective: float


def _entries(A) -> np.ndarray:
    return np.asarray(getattr(A, "entries", A), dtype=float)


def operator_norm_estimate(A, n_iters: int | None = None) -> float:
    """Largest singular value of A, via power iteration on A^T A.

    The starting vector is a fixed pseudo-random direction, so the estimate
    is deterministic for a given matrix.
    """
    mat = _entries(A)
    if not np.any(mat):
        raise ValueError("operator norm of a zero matrix is not useful")
    iters = 200 if n_iters is None else max(1, n_iters)
    gen = np.random.Generator(np.random.Philox(key=np.uint64(0x9E3779B9)))
    v = gen.standard_normal(mat.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = mat.T @ (mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
        est = math.sqrt(nw)
    return float(est)


def _soft_threshold(z: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)


def _support_alignment(x: np.ndarray, atp: np.ndarray) -> float:
    xmax = np.max(np.abs(x)) if x.size else 0.0
    if xmax == 0.0:
        return 0.0
    supp = np.abs(x) > _SUPPORT_EPS * xmax
    if not np.any(supp):
        return 0.0
    return float(np.max(np.abs(np.sign(x[supp]) - atp[supp])))


def _steps(mat: np.ndarray, cfg: SolverConfig) -> tuple[float, float]:
    L = _STEP_SAFETY * operator_norm_estimate(mat, cfg.operator_norm_power_iters)
    if L == 0.0:
        L = 1.0
    return cfg.step_ratio / L, 1.0 / (cfg.step_ratio * L)  # sigma, tau


def solve_l1_equality(A, b, cfg: SolverConfig | None = None, x0=None, dual0=None) -> SolveOutcome:
    """Minimum-l1 solution of A x = b together with a dual certificate vector.

    Parameters
    ----------
    A : DictionaryMatrix or (d, P) array
    b : (d,) array
    cfg : SolverConfig
    x0, dual0 : optional warm starts (primal coefficients / dual vector in the
        max <b,p> convention).

    Returns
    -------
    SolveOutcome with ``dual`` maximizing <b, p> subject to |A^T p|_inf <= 1.
    Convergence requires small feasibility, dual-feasibility and duality-gap
    residuals; sign alignment on the support is reported alongside.
    """
    cfg = cfg or SolverConfig()
    mat = _entries(A)
    b = np.asarray(b, dtype=float)
    d, P = mat.shape
    sigma, tau = _steps(mat, cfg)

    x = np.zeros(P) if x0 is None else np.asarray(x0, dtype=float).copy()
    q = np.zeros(d) if dual0 is None else -np.asarray(dual0, dtype=float)
    xbar = x.copy()

    bscale = max(1.0, float(np.linalg.norm(b)))
    tol = max(cfg.tol_primal, cfg.tol_dual)
    best = None

    it = 0
    while it < cfg.max_iters:
        n_burst = min(cfg.check_every, cfg.max_iters - it)
        for _ in range(n_burst):
            q += sigma * (mat @ xbar - b)
            x_new = _soft_threshold(x - tau * (mat.T @ q), tau)
            xbar = 2.0 * x_new - x
            x = x_new
        it += n_burst

        p = -q
        atp = mat.T @ p
        feas = float(np.linalg.norm(mat @ x - b))
        inf_norm = float(np.max(np.abs(atp))) if P else 0.0
        cert = max(0.0, inf_norm - 1.0)
        p_feas = p / max(1.0, inf_norm)
        obj = float(np.sum(np.abs(x)))
        dual_obj = float(b @ p_feas)
        gap = abs(obj - dual_obj)
        align = _support_alignment(x, atp)
        best = (x.copy(), p.copy(), feas, cert, align, gap, obj, dual_obj, it)
        if (
            feas <= cfg.tol_primal * bscale
            and cert <= cfg.tol_dual
            and gap <= tol * max(1.0, obj)
        ):
            return _outcome(best, converged=True)
    return _outcome(best, converged=False)


def solve_lasso(A, b, lam: float, cfg: SolverConfig | None = None, x0=None, dual0=None) -> SolveOutcome:
    """LASSO solve min 0.5*|A x - b|^2 + lam*|x|_1 with dual p = (b - A x)/lam.

    The reported dual vector approximately solves
    min |b/lam - p|  s.t.  |A^T p|_inf <= 1, and the duality gap is certified
    at a feasibility-rescaled copy of it.
    """
    if lam <= 0:
        raise ValueError(f"lasso penalty must be positive, got {lam}")
    cfg = cfg or SolverConfig()
    mat = _entries(A)
    b = np.asarray(b, dtype=float)
    d, P = mat.shape
    sigma, tau = _steps(mat, cfg)

    x = np.zeros(P) if x0 is None else np.asarray(x0, dtype=float).copy()
    q = np.zeros(d) if dual0 is None else -lam * np.asarray(dual0, dtype=float)
    xbar = x.copy()

    tol = max(cfg.tol_primal, cfg.tol_dual)
    best = None

    it = 0
    while it < cfg.max_iters:
        n_burst = min(cfg.check_every, cfg.max_iters - it)
        for _ in range(n_burst):
            q = (q + sigma * (mat @ xbar - b)) / (1.0 + sigma)
            x_new = _soft_threshold(x - tau * (mat.T @ q), tau * lam)
            xbar = 2.0 * x_new - x
            x = x_new
        it += n_burst

        r = b - mat @ x
        p = r / lam
        atp = mat.T @ p
        feas = float(np.linalg.norm(b - mat @ x - lam * p))  # definitional residual
        inf_norm = float(np.max(np.abs(atp))) if P else 0.0
        cert = max(0.0, inf_norm - 1.0)
        p_feas = p / max(1.0, inf_norm)
        obj = 0.5 * float(r @ r) + lam * float(np.sum(np.abs(x)))
        dual_obj = lam * float(b @ p_feas) - 0.5 * lam * lam * float(p_feas @ p_feas)
        gap = abs(obj - dual_obj)
        align = _support_alignment(x, atp)
        best = (x.copy(), p.copy(), feas, cert, align, gap, obj, dual_obj, it)
        if cert <= cfg.tol_dual and gap <= tol * max(1.0, obj):
            return _outcome(best, converged=True)
    return _outcome(best, converged=False)


def _outcome(state, converged: bool) -> SolveOutcome:
    x, p, feas, cert, align, gap, obj, dual_obj, it = state
    return SolveOutcome(
        primal=x,
        dual=p,
        kkt=KktResiduals(feas, cert, align, gap),
        iterations=it,
        converged=converged,
        objective=obj,
        dual_objective=dual_obj,
    )
