"""Independent reference solvers used only by the test suite."""

import numpy as np
from scipy.optimize import linprog


def min_l1_equality_lp(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """min |x|_1 s.t. A x = b via the split-variable linear program."""
    d, P = A.shape
    res = linprog(
        np.ones(2 * P),
        A_eq=np.hstack([A, -A]),
        b_eq=b,
        bounds=[(0, None)] * (2 * P),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"LP oracle failed: {res.message}")
    return res.x[:P] - res.x[P:]


def lasso_coordinate_descent(
    A: np.ndarray, b: np.ndarray, lam: float, max_sweeps: int = 100_000, tol: float = 1e-13
) -> np.ndarray:
    """Cyclic coordinate descent on the LASSO, run to a tight fixed point."""
    n = A.shape[1]
    x = np.zeros(n)
    col2 = np.einsum("ij,ij->j", A, A)
    r = b.copy()
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(n):
            old = x[j]
            if old != 0.0:
                r += old * A[:, j]
            rho_j = A[:, j] @ r
            new = np.sign(rho_j) * max(abs(rho_j) - lam, 0.0) / col2[j]
            x[j] = new
            if new != 0.0:
                r -= new * A[:, j]
            delta = max(delta, abs(new - old))
        if delta < tol:
            break
    return x


def lasso_objective(A, b, lam, x) -> float:
    r = A @ x - b
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(x)))
