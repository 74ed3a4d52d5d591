"""Independent numerical oracles used by the unit and acceptance tests.

Everything here is deliberately dumb and slow: bisection, dense grids,
textbook Newton steps, and a null-space grid search with SLSQP polishing.
The point is that none of it shares code paths with the solvers under test.
"""
import numpy as np
from scipy.linalg import null_space
from scipy.optimize import LinearConstraint, NonlinearConstraint, minimize
from scipy.special import expit

from coursegame.model import TYPE_RACE
from coursegame.reassign import entropy_of_shares


def bisect_fixed_point(c0, alpha, lam, phi, tol=1e-14):
    """Root of s = (1-phi) expit(c0 + lam s) + phi expit(c0 + alpha + lam s).

    The residual is positive at 0 and negative at 1, and the root is unique
    whenever |lam| stays below the contraction bound, so plain bisection is
    a valid oracle there.
    """
    def resid(s):
        mix = (1.0 - phi) * expit(c0 + lam * s) + phi * expit(c0 + alpha + lam * s)
        return mix - s

    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def grid_newton_2d(best_response, tol=1e-13, grid_n=41):
    """Dense grid then Newton refinement of a 2-d fixed point.

    best_response maps s (2,) to the best-response pair. The grid locates
    the basin, Newton on F(s) = best_response(s) - s finishes it off.
    """
    grid = np.linspace(0.0, 1.0, grid_n)
    best, best_r = None, np.inf
    for a in grid:
        for b in grid:
            s = np.array([a, b])
            r = float(np.max(np.abs(best_response(s) - s)))
            if r < best_r:
                best, best_r = s, r
    s = best
    h = 1e-7
    for _ in range(100):
        F = best_response(s) - s
        if np.max(np.abs(F)) < tol:
            break
        J = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            J[:, j] = (best_response(s + e) - best_response(s - e)) / (2.0 * h)
        s = np.clip(s + np.linalg.solve(np.eye(2) - J, F), 0.0, 1.0)
    return s


def _equality_system(prob, rows):
    """Stacked linear equalities over z = P[rows].flatten(), row-major."""
    T, G = len(rows), prob.G
    svec = prob.sizes / prob.sizes.sum()
    tot = prob.type_totals()[rows] / prob.sizes.sum()
    colsum = np.kron(np.ones(T), np.eye(G))
    pop = np.kron(np.eye(T), svec)
    # the last population row is implied by the column sums plus the rest
    A = np.vstack([colsum, pop[:-1]])
    b = np.concatenate([np.ones(G), tot[:-1]])
    return A, b, svec, tot


def _batch_entropy(prob, rows, Z):
    """Segregation index for a batch of flattened candidates (M, T*G)."""
    T, G = len(rows), prob.G
    P = Z.reshape(-1, T, G)
    q = np.zeros((P.shape[0], 3, G))
    for r in range(3):
        sel = TYPE_RACE[rows] == r
        if sel.any():
            q[:, r, :] = P[:, sel, :].sum(axis=1)
    qs = np.where(q > 0.0, q, 1.0)
    hg = -np.sum(q * np.log(qs), axis=1)
    w = prob.sizes / prob.sizes.sum()
    return np.sum(w[None, :] * (prob.h_bar - hg), axis=1) / prob.h_bar


def reassignment_oracle(prob, grid_points=13, n_polish=28, band=0.03, seed=0):
    """Grid search over the feasible polytope, SLSQP-polished.

    The linear equalities are eliminated by a null-space parametrization of
    the transportation polytope; candidates near the entropy level set seed
    local solves that pin the entropy equality exactly. Returns the best
    objective found, or None when every polish fails.
    """
    rows = np.flatnonzero(prob.type_totals() > 0)
    T, G = len(rows), prob.G
    p_hat = prob.p_hat[rows]
    z_hat = p_hat.flatten()
    A, b, svec, tot = _equality_system(prob, rows)
    B = null_space(A)
    k = B.shape[1]

    # grid in null-space coordinates centered on the observed point
    radius = float(np.sqrt(T * G))
    axes = [np.linspace(-radius, radius, grid_points)] * k
    C = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
    Z = z_hat[None, :] + C @ B.T
    ok = (Z.min(axis=1) >= -1e-9) & (Z.max(axis=1) <= 1.0 + 1e-9)
    Z = np.clip(Z[ok], 0.0, 1.0)
    hvals = _batch_entropy(prob, rows, Z)
    obj = np.sum((Z - z_hat[None, :]) ** 2, axis=1) / G

    near = np.abs(hvals - prob.target_h) <= band
    cand = Z[near][np.argsort(obj[near])][:n_polish]
    # keep a few closest-in-entropy candidates even if the band is thin
    extra = Z[np.argsort(np.abs(hvals - prob.target_h))[:8]]
    starts = list(cand) + list(extra) + [z_hat]

    def f(z):
        d = z - z_hat
        return float(d @ d) / G

    def h(z):
        full = np.zeros((24, G))
        full[rows] = z.reshape(T, G)
        return entropy_of_shares(prob, full)

    cons = [
        NonlinearConstraint(h, prob.target_h, prob.target_h),
        LinearConstraint(A, b, b),
    ]
    best = None
    for z0 in starts:
        res = minimize(f, z0, method="SLSQP", bounds=[(0.0, 1.0)] * (T * G),
                       constraints=cons, options={"maxiter": 300, "ftol": 1e-14})
        if not res.success:
            continue
        if abs(h(res.x) - prob.target_h) > 1e-7:
            continue
        if best is None or res.fun < best:
            best = float(res.fun)
    return best
