"""Vertex-weighted transductive objective, its closed-form minimizer and a descent oracle.

With ``U = diag(u)`` the objective is

    tr(F' (U - U Theta U) F) + lambda_r * tr((F - Y)' U'U (F - Y))

and its minimizer solves ``(U - U Theta U + lambda_r U'U) F = lambda_r U'U Y``.
"""

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from uvhl.errors import ConvergenceError, ShapeError, SingularityError

MAX_CONDITION = 1e12


def _diag(u, n=None):
    u = np.asarray(u, dtype=float)
    if u.ndim == 2:
        if u.shape[0] != u.shape[1] or np.any(u - np.diag(np.diag(u))):
            raise ShapeError("U must be diagonal")
        u = np.diag(u).copy()
    if u.ndim != 1 or (n is not None and u.size != n):
        raise ShapeError(f"U must have {n} diagonal entries")
    return u


def _check(theta, u, Y, F=None):
    theta = np.asarray(theta, dtype=float)
    Y = np.asarray(Y, dtype=float)
    n = theta.shape[0]
    if theta.shape != (n, n) or Y.ndim != 2 or Y.shape[0] != n:
        raise ShapeError(f"theta must be square and Y must have {n} rows")
    if F is not None:
        F = np.asarray(F, dtype=float)
        if F.shape != Y.shape:
            raise ShapeError(f"F shape {F.shape} differs from Y shape {Y.shape}")
    return theta, _diag(u, n), Y, F


def system_matrix(theta, u, lambda_r):
    """``U - U Theta U + lambda_r U^2`` for diagonal ``U``."""
    return np.diag(u) - u[:, None] * theta * u[None, :] + lambda_r * np.diag(u * u)


def objective(F, theta, U, Y, lambda_r):
    theta, u, Y, F = _check(theta, U, Y, F)
    smooth = np.sum(F * (u[:, None] * F)) - np.sum((u[:, None] * F) * (theta @ (u[:, None] * F)))
    u2 = (u * u)[:, None]
    empirical = np.sum(F * u2 * F) + np.sum(Y * u2 * Y) - 2.0 * np.sum(F * u2 * Y)
    return float(smooth + lambda_r * empirical)


def objective_gradient(F, theta, U, Y, lambda_r):
    """Gradient of :func:`objective` with respect to ``F``, term by term."""
    theta, u, Y, F = _check(theta, U, Y, F)
    UF = u[:, None] * F
    return 2.0 * UF - 2.0 * u[:, None] * (theta @ UF) + 2.0 * lambda_r * (u * u)[:, None] * (F - Y)


def solve_closed_form(theta, U, Y, lambda_r=1.0):
    """Label matrix minimizing the objective, via a dense factorization.

    Cholesky is tried first (the system is symmetric and, for a proper
    hypergraph operator, positive definite); LU is the fallback. Raises
    ``SingularityError`` when the reciprocal condition estimate puts the
    condition number above 1e12.
    """
    if lambda_r <= 0:
        raise ValueError("lambda_r must be positive")
    theta, u, Y, _ = _check(theta, U, Y)
    M = system_matrix(theta, u, lambda_r)
    rhs = lambda_r * (u * u)[:, None] * Y
    anorm = np.linalg.norm(M, 1)

    c, info = lapack.dpotrf(M, lower=True)
    if info == 0:
        rcond, _ = lapack.dpocon(c, anorm, uplo="L")
        _guard(rcond)
        return linalg.cho_solve((c, True), rhs)

    lu, piv, info = lapack.dgetrf(M)
    if info != 0:
        raise SingularityError("system matrix is exactly singular", condition=np.inf)
    rcond, _ = lapack.dgecon(lu, anorm)
    _guard(rcond)
    return linalg.lu_solve((lu, piv), rhs)


def _guard(rcond):
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > MAX_CONDITION:
        raise SingularityError(
            f"system matrix condition estimate {cond:.3e} exceeds {MAX_CONDITION:.0e}; "
            "try a larger lambda_r", condition=cond)


def solve_iterative(theta, U, Y, lambda_r=1.0, tol=1e-10, max_iter=100_000, history=None):
    """Minimize the objective by preconditioned gradient descent.

    Each step starts from a Barzilai-Borwein length and backtracks until the
    Armijo condition holds, so the objective never increases. The decrease
    along a direction is evaluated from its exact quadratic expansion, which
    stays accurate once it drops below the rounding level of the objective
    value. Stops when the Jacobi-scaled gradient has infinity norm at most
    ``tol``. ``history``, if a list, receives the objective after every step.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if lambda_r <= 0:
        raise ValueError("lambda_r must be positive")
    theta, u, Y, _ = _check(theta, U, Y)
    precond = (1.0 / (2.0 * (u + lambda_r * u * u)))[:, None]
    zeros = np.zeros_like(Y)

    F = Y.copy()
    g = objective_gradient(F, theta, u, Y, lambda_r)
    if history is not None:
        history.append(objective(F, theta, u, Y, lambda_r))
    step = 1.0
    prev = None
    gap = np.inf
    for _ in range(max_iter):
        d = precond * g
        gap = float(np.max(np.abs(d))) if d.size else 0.0
        if gap <= tol:
            return F
        slope = float(np.sum(g * d))
        # objective(F - t d) - objective(F) = -t slope + t^2 curv
        curv = 0.5 * float(np.sum(d * objective_gradient(d, theta, u, zeros, lambda_r)))
        if prev is not None:
            s, r = prev
            sr = float(np.sum(s * r))
            if sr > 0:
                step = sr / float(np.sum(r * precond * r))
        t = step
        while -t * slope + t * t * curv > -1e-4 * t * slope:
            t *= 0.5
            if t < 1e-30:
                raise ConvergenceError(
                    f"line search failed; scaled gradient {gap:.3e}", gap=gap)
        F_new = F - t * d
        g_new = objective_gradient(F_new, theta, u, Y, lambda_r)
        prev = (F_new - F, g_new - g)
        F, g = F_new, g_new
        if history is not None:
            history.append(objective(F, theta, u, Y, lambda_r))
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations; scaled gradient {gap:.3e}", gap=gap)


def predict_labels(F, rows=None, tie_class=0):
    """Row-wise argmax of ``F``; exact ties go to ``tie_class``."""
    F = np.asarray(F, dtype=float)
    if rows is not None:
        F = F[np.asarray(rows, dtype=int)]
    pred = np.argmax(F, axis=1)
    ties = F[:, 0] == F[:, 1]
    pred[ties] = tie_class
    return pred
