"""Entropy-constrained student reassignment.

Finds per-class type shares that stay as close as possible (mean squared
deviation) to the observed shares while hitting a target segregation index
exactly, holding class sizes and per-type populations fixed. The solver is
an augmented Lagrangian outer loop on the entropy equality around a spectral
projected-gradient inner loop; the linear constraints (per-class simplex and
population conservation) are handled by Dykstra projection. Fractional
solutions are converted to integer headcounts by an unbiased randomized
rounding along cycles of the transportation graph, which preserves class
sizes and type totals exactly and leaves expected counts at their fractional
targets.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import N_TYPES, RACE_ONE_HOT, TYPE_RACE, Classroom, SchoolSystem
from .segregation import state_entropy

_INT_SNAP = 1e-9


class InfeasibleTargetError(ValueError):
    """Target index outside the attainable range for this population."""

    def __init__(self, message, attainable):
        super().__init__(message)
        self.attainable = attainable


class ReassignmentError(RuntimeError):
    """The solver failed to satisfy the constraints to tolerance."""


@dataclass
class ReassignmentProblem:
    """Data of one reassignment instance.

    p_hat has one column per unit (class) and one row per student type;
    columns are the observed within-unit type shares. mode "type" conserves
    every type's population; mode "race" conserves race totals only.
    """

    p_hat: np.ndarray          # (24, G)
    sizes: np.ndarray          # (G,)
    target_h: float
    h_bar: float
    class_keys: tuple
    unit: str = "classroom"
    mode: str = "type"

    @classmethod
    def from_system(cls, system: SchoolSystem, target_h: float,
                    unit: str = "classroom", mode: str = "type"):
        if unit == "classroom":
            counts = system.counts_matrix().T  # (24, G)
            keys = tuple((c.school_id, c.cohort_id) for c in system.classrooms)
            sizes = np.array([c.N for c in system.classrooms], dtype=float)
        elif unit == "school":
            agg = {}
            for c in system.classrooms:
                agg.setdefault(c.school_id, np.zeros(N_TYPES))
                agg[c.school_id] += c.counts_array()
            keys = tuple((s, None) for s in system.school_ids)
            counts = np.stack([agg[s] for s in system.school_ids]).T
            sizes = counts.sum(axis=0)
        else:
            raise ValueError(f'unit must be "classroom" or "school", got {unit!r}')
        if mode not in ("type", "race"):
            raise ValueError(f'mode must be "type" or "race", got {mode!r}')
        shares = counts / sizes[None, :]
        race_tot = RACE_ONE_HOT.T @ counts.sum(axis=1)
        h_bar = state_entropy(race_tot / race_tot.sum())
        if h_bar == 0.0:
            raise ValueError("entropy index undefined: the state is monoracial")
        return cls(p_hat=shares, sizes=sizes, target_h=float(target_h),
                   h_bar=h_bar, class_keys=keys, unit=unit, mode=mode)

    @property
    def G(self) -> int:
        return self.p_hat.shape[1]

    def type_totals(self) -> np.ndarray:
        return self.p_hat @ self.sizes


@dataclass
class ReassignmentSolution:
    shares: np.ndarray         # (24, G)
    objective: float
    achieved_h: float
    residual_entropy: float
    residual_simplex: float
    residual_population: float
    status: str
    start_used: int
    outer_iterations: int

    def to_json(self) -> dict:
        return {
            "objective": self.objective,
            "achieved_h": self.achieved_h,
            "residual_entropy": self.residual_entropy,
            "residual_simplex": self.residual_simplex,
            "residual_population": self.residual_population,
            "status": self.status,
            "shares": [[float(v) for v in row] for row in self.shares],
        }


def objective_value(prob: ReassignmentProblem, shares: np.ndarray) -> float:
    """Mean squared deviation from the observed shares, averaged over units."""
    return float(np.sum((shares - prob.p_hat) ** 2) / prob.G)


def entropy_of_shares(prob: ReassignmentProblem, shares: np.ndarray) -> float:
    """Segregation index of a candidate share matrix under fixed class sizes."""
    q = _race_aggregate(shares)  # (3, G)
    qs = np.where(q > 0.0, q, 1.0)
    hg = -np.sum(q * np.log(qs), axis=0)
    w = prob.sizes / prob.sizes.sum()
    return float(np.sum(w * (prob.h_bar - hg)) / prob.h_bar)


def _race_aggregate(shares: np.ndarray) -> np.ndarray:
    return RACE_ONE_HOT.T @ shares


def _entropy_grad(prob: ReassignmentProblem, shares: np.ndarray) -> np.ndarray:
    # log gradient is unbounded at empty cells; a moderate floor keeps the
    # effective curvature small enough for projected-gradient steps while
    # leaving values at interior points untouched
    q = np.clip(_race_aggregate(shares), 1e-7, None)
    w = prob.sizes / prob.sizes.sum()
    per_race = (np.log(q) + 1.0) * w[None, :] / prob.h_bar  # (3, G)
    return per_race[TYPE_RACE, :]


def _project_columns_simplex(P: np.ndarray) -> np.ndarray:
    """Euclidean projection of every column onto the probability simplex."""
    T = P.shape[0]
    u = -np.sort(-P, axis=0)
    css = np.cumsum(u, axis=0)
    j = np.arange(1, T + 1)[:, None]
    cond = u - (css - 1.0) / j > 0.0
    rho = np.maximum(cond.sum(axis=0), 1)
    tau = (css[rho - 1, np.arange(P.shape[1])] - 1.0) / rho
    return np.maximum(P - tau[None, :], 0.0)


class _Polytope:
    """Per-class simplex intersected with population conservation.

    With race_shares set, each class's within-race share totals are pinned
    too (the fully integrated H = 0 manifold), making the set the exact
    feasible region of the boundary target.
    """

    def __init__(self, prob: ReassignmentProblem, rows: np.ndarray,
                 race_shares: np.ndarray | None = None):
        self.nv = prob.sizes
        self.nn = float(self.nv @ self.nv)
        self.mode = prob.mode
        self.rows = rows
        self.race_groups = [np.flatnonzero(TYPE_RACE[rows] == r) for r in range(3)]
        self.race_shares = race_shares
        full_targets = prob.type_totals()
        if prob.mode == "type":
            self.targets = full_targets[rows]
            self.groups = None
        else:
            self.groups = self.race_groups
            self.targets = np.array([full_targets[rows][g].sum() for g in self.groups])

    def project_population(self, P: np.ndarray) -> np.ndarray:
        if self.mode == "type":
            gap = (self.targets - P @ self.nv) / self.nn
            return P + gap[:, None] * self.nv[None, :]
        out = P.copy()
        for g, c in zip(self.groups, self.targets):
            if len(g) == 0:
                continue
            gap = (c - float((out[g] @ self.nv).sum())) / (len(g) * self.nn)
            out[g] += gap * self.nv[None, :]
        return out

    def project_race_shares(self, P: np.ndarray) -> np.ndarray:
        out = P.copy()
        for g, s in zip(self.race_groups, self.race_shares):
            if len(g):
                out[g] += (s - out[g].sum(axis=0)) / len(g)
        return out

    def project(self, P: np.ndarray, tol: float = 1e-13, max_cycles: int = 500) -> np.ndarray:
        """Dykstra alternating projection onto the intersection."""
        x = P
        incs = [np.zeros_like(P) for _ in range(3)]
        steps = [_project_columns_simplex, self.project_population]
        if self.race_shares is not None:
            steps.append(self.project_race_shares)
        for _ in range(max_cycles):
            x_prev = x
            for i, step in enumerate(steps):
                y = step(x + incs[i])
                incs[i] = x + incs[i] - y
                x = y
            if np.max(np.abs(x - x_prev)) < tol and self.residuals(x)[0] < 10 * tol:
                return x
        return x

    def residuals(self, P: np.ndarray):
        simplex = max(float(np.max(np.abs(P.sum(axis=0) - 1.0))),
                      float(max(0.0, -P.min()))) if P.size else 0.0
        if self.mode == "type":
            pop = float(np.max(np.abs(P @ self.nv - self.targets))) / self.nv.sum()
        else:
            pop = max(
                abs(float((P[g] @ self.nv).sum()) - c) for g, c in
                zip(self.groups, self.targets)) / self.nv.sum()
        return max(simplex, pop), simplex, pop


def _packing_point(prob: ReassignmentProblem, order: np.ndarray) -> np.ndarray:
    """Fill schools one race at a time: a maximally segregated feasible point."""
    totals = prob.type_totals()
    race_mass = np.array([totals[TYPE_RACE == r].sum() for r in range(3)])
    G = prob.G
    q = np.zeros((3, G))
    r = 0
    remaining = race_mass.copy()
    for g in order:
        cap = prob.sizes[g]
        while cap > 1e-12 and r < 3:
            take = min(cap, remaining[r])
            q[r, g] += take
            cap -= take
            remaining[r] -= take
            if remaining[r] <= 1e-12:
                r += 1
    shares = np.zeros_like(prob.p_hat)
    for rr in range(3):
        rows = np.flatnonzero((TYPE_RACE == rr) & (totals > 0))
        if rows.size == 0:
            continue
        mix = totals[rows] / totals[rows].sum()
        shares[rows, :] = mix[:, None] * q[rr][None, :] / prob.sizes[None, :]
    return shares


def _replication_point(prob: ReassignmentProblem) -> np.ndarray:
    state = prob.type_totals() / prob.sizes.sum()
    return np.tile(state[:, None], (1, prob.G))


def attainable_entropy_range(prob: ReassignmentProblem):
    """(H_min, H_max) over the constraint polytope.

    H_min = 0 is always attainable by replicating the state mix everywhere.
    H_max comes from greedy packing of whole schools by race and is attained
    by an exhibited feasible point; exotic capacity profiles may admit
    slightly higher values.
    """
    G = prob.G
    if G == 1:
        return (0.0, 0.0)
    best = 0.0
    orders = [np.arange(G), np.argsort(-prob.sizes, kind="stable"),
              np.argsort(prob.sizes, kind="stable")]
    for order in orders:
        h = entropy_of_shares(prob, _packing_point(prob, order))
        best = max(best, h)
    return (0.0, best)


def _interpolation_start(prob: ReassignmentProblem, target: float) -> np.ndarray:
    """Point on the segment between full integration and greedy packing whose
    index is close to the target; the segment stays inside the polytope."""
    lo_p = _replication_point(prob)
    hi_p = _packing_point(prob, np.argsort(-prob.sizes, kind="stable"))
    if entropy_of_shares(prob, hi_p) <= target:
        return hi_p
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        p = (1.0 - mid) * lo_p + mid * hi_p
        if entropy_of_shares(prob, p) < target:
            lo = mid
        else:
            hi = mid
    return (1.0 - 0.5 * (lo + hi)) * lo_p + 0.5 * (lo + hi) * hi_p


def _spg(p, project, value_grad, max_iter=800, step_tol=1e-12):
    """Spectral projected gradient with nonmonotone Armijo line search."""
    f, g = value_grad(p)
    hist = [f]
    s = 1.0 / max(1.0, float(np.max(np.abs(g))))
    for _ in range(max_iter):
        d = project(p - s * g) - p
        dnorm = float(np.max(np.abs(d)))
        if dnorm <= step_tol:
            break
        gd = float(np.sum(g * d))
        t = 1.0
        fref = max(hist[-8:])
        while True:
            f_new, g_new = value_grad(p + t * d)
            if f_new <= fref + 1e-4 * t * gd or t < 1e-12:
                break
            t *= 0.5
        p_new = p + t * d
        dp = p_new - p
        dg = g_new - g
        denom = float(np.sum(dp * dg))
        s = float(np.sum(dp * dp)) / denom if denom > 1e-18 else s * 2.0
        s = float(np.clip(s, 1e-8, 1e6))
        p, f, g = p_new, f_new, g_new
        hist.append(f)
        if len(hist) > 8:
            hist.pop(0)
    return p


def solve_reassignment(prob: ReassignmentProblem, tol_entropy: float = 1e-6,
                       tol_linear: float = 1e-8, max_outer: int = 40,
                       inner_max_iter: int = 800, n_starts: int = 5,
                       seed: int = 0, start=None,
                       polish_to: float = 1e-11) -> ReassignmentSolution:
    """Minimize distance to the observed shares subject to the target index.

    `start` warm-starts the first candidate from a full (T, G) shares matrix
    (typically the solution at a nearby target); the observed point is always
    kept as a second candidate. `polish_to` is the entropy residual the
    penalty boost drives toward once inside tolerance; loosen it when many
    targets are solved and only feasibility at `tol_entropy` matters.
    """
    totals = prob.type_totals()
    rows = np.flatnonzero(totals > 0)
    h_range = attainable_entropy_range(prob)
    if prob.target_h < -1e-9 or prob.target_h > h_range[1] + 1e-9:
        raise InfeasibleTargetError(
            f"target index {prob.target_h} outside attainable range "
            f"[{h_range[0]:.6f}, {h_range[1]:.6f}]", attainable=h_range)

    def lift(P):
        full = np.zeros_like(prob.p_hat)
        full[rows] = P
        return full

    def h_of(P):
        return entropy_of_shares(prob, lift(P))

    def h_grad(P):
        return _entropy_grad(prob, lift(P))[rows]

    poly = _Polytope(prob, rows)
    p_hat = prob.p_hat[rows]
    G = prob.G

    if prob.target_h <= 1e-12:
        # the fully integrated target is a linear constraint set (every class
        # carries the state race mix), so the optimum is a plain projection
        state = (prob.p_hat @ prob.sizes) / prob.sizes.sum()
        race_state = np.array([state[TYPE_RACE == r].sum() for r in range(3)])
        poly0 = _Polytope(prob, rows, race_shares=race_state)
        p = poly0.project(p_hat, max_cycles=5000)
        shares = np.maximum(lift(p), 0.0)
        _, simplex_r, pop_r = poly0.residuals(p)
        ent_r = abs(entropy_of_shares(prob, shares))
        if ent_r > tol_entropy or max(simplex_r, pop_r) > tol_linear:
            raise ReassignmentError(
                f"projection onto the integrated manifold failed: entropy "
                f"residual {ent_r:.2e}, linear residuals {max(simplex_r, pop_r):.2e}")
        return ReassignmentSolution(
            shares=shares, objective=float(np.sum((p - p_hat) ** 2)) / G,
            achieved_h=entropy_of_shares(prob, shares), residual_entropy=ent_r,
            residual_simplex=simplex_r, residual_population=pop_r,
            status="optimal", start_used=0, outer_iterations=0,
        )

    rng = np.random.default_rng(seed)
    interp = _interpolation_start(prob, prob.target_h)[rows]
    if start is not None:
        # warm chain: track the solution branch, p_hat only as a late backup
        starts = [np.asarray(start, dtype=float)[rows], interp, p_hat.copy()]
    else:
        starts = [p_hat.copy(), interp]
    while len(starts) < n_starts:
        starts.append(poly.project(p_hat + 0.25 * rng.standard_normal(p_hat.shape)))
    starts = starts[:max(1, n_starts)]

    # population conservation joins the entropy constraint in the augmented
    # Lagrangian, so the inner projection is a single exact simplex pass per
    # step (Dykstra cycles at degenerate vertices made the projected-gradient
    # route painfully slow on large instances)
    n_tot = float(prob.sizes.sum())
    svec = prob.sizes / n_tot
    if prob.mode == "type":
        amat = np.eye(len(rows))
        pop_targets = totals[rows] / n_tot
    else:
        amat = np.zeros((3, len(rows)))
        for r in range(3):
            amat[r, TYPE_RACE[rows] == r] = 1.0
        pop_targets = amat @ totals[rows] / n_tot

    best = None
    for k, p0 in enumerate(starts):
        p = _project_columns_simplex(p0)
        nu_e, mu_e = 0.0, 4.0
        nu_p, mu_p = np.zeros(amat.shape[0]), 32.0
        ce_prev, cp_prev = np.inf, np.inf
        outer_used = 0
        # loose inner work while far from the constraints, tight at the end
        step_tol, cap = 1e-9, min(inner_max_iter, 300)
        for outer in range(max_outer):
            outer_used = outer + 1

            def value_grad(P, nu_e=nu_e, mu_e=mu_e, nu_p=nu_p, mu_p=mu_p):
                diff = P - p_hat
                ce = h_of(P) - prob.target_h
                cp = amat @ (P @ svec) - pop_targets
                f = (float(np.sum(diff * diff)) / G
                     + nu_e * ce + 0.5 * mu_e * ce * ce
                     + float(nu_p @ cp) + 0.5 * mu_p * float(cp @ cp))
                g = (2.0 * diff / G + (nu_e + mu_e * ce) * h_grad(P)
                     + np.outer(amat.T @ (nu_p + mu_p * cp), svec))
                return f, g

            p = _spg(p, _project_columns_simplex, value_grad,
                     max_iter=cap, step_tol=step_tol)
            ce = h_of(p) - prob.target_h
            cp = float(np.max(np.abs(amat @ (p @ svec) - pop_targets)))
            nu_e += mu_e * ce
            nu_p += mu_p * (amat @ (p @ svec) - pop_targets)
            if abs(ce) <= 3.0 * tol_entropy and cp <= 10.0 * tol_linear:
                step_tol, cap = 1e-12, inner_max_iter
            if abs(ce) <= 0.3 * tol_entropy and cp <= 0.5 * tol_linear:
                # polish: larger penalties squeeze the residuals well under
                # tolerance so the objective is comparable to an oracle
                mu_e = min(max(mu_e * 100.0, 1e7), 1e12)
                mu_p = min(max(mu_p * 100.0, 1e7), 1e12)
                if abs(ce) > polish_to or cp > 0.02 * tol_linear:
                    continue
                break
            if abs(ce) > 0.25 * ce_prev:
                mu_e = min(mu_e * 6.0, 1e10)
            if cp > 0.25 * cp_prev:
                mu_p = min(mu_p * 6.0, 1e10)
            ce_prev, cp_prev = abs(ce), cp
        lin, simplex_r, pop_r = poly.residuals(p)
        if max(simplex_r, pop_r) > 0.5 * tol_linear:
            p = poly.project(p, tol=1e-13, max_cycles=20000)
            lin, simplex_r, pop_r = poly.residuals(p)
        ent_r = abs(h_of(p) - prob.target_h)
        feasible = ent_r <= tol_entropy and simplex_r <= tol_linear and pop_r <= tol_linear
        obj = float(np.sum((p - p_hat) ** 2)) / G
        cand = (not feasible, obj, k, p, ent_r, simplex_r, pop_r, outer_used)
        if best is None or cand[:3] < best[:3]:
            best = cand
    infeasible, obj, k, p, ent_r, simplex_r, pop_r, outer_used = best
    if infeasible:
        raise ReassignmentError(
            f"reassignment solver failed: entropy residual {ent_r:.2e}, "
            f"linear residuals {max(simplex_r, pop_r):.2e} "
            f"(attainable range [{h_range[0]:.6f}, {h_range[1]:.6f}])")
    shares = np.maximum(lift(p), 0.0)
    return ReassignmentSolution(
        shares=shares, objective=obj, achieved_h=entropy_of_shares(prob, shares),
        residual_entropy=ent_r, residual_simplex=simplex_r,
        residual_population=pop_r, status="optimal", start_used=k,
        outer_iterations=outer_used,
    )


def _ipf_fix(F: np.ndarray, row_targets: np.ndarray, col_targets: np.ndarray,
             iters: int = 200, tol: float = 1e-13) -> np.ndarray:
    """Small proportional-fitting correction to exact integer marginals."""
    F = np.maximum(F, 0.0)
    for _ in range(iters):
        rs = F.sum(axis=1)
        scale = np.where(rs > 0, row_targets / np.where(rs > 0, rs, 1.0), 1.0)
        F = F * scale[:, None]
        cs = F.sum(axis=0)
        scale = np.where(cs > 0, col_targets / np.where(cs > 0, cs, 1.0), 1.0)
        F = F * scale[None, :]
        if (np.max(np.abs(F.sum(axis=1) - row_targets)) < tol
                and np.max(np.abs(F.sum(axis=0) - col_targets)) < tol):
            break
    return F


def _find_cycle(frac: np.ndarray):
    """One alternating row/column cycle through fractional cells.

    Cells are edges between row and column nodes; walking until a node
    repeats closes a cycle, and bipartiteness makes its length even, so
    alternating +/- perturbations preserve every row and column sum.
    """
    t0, g0 = map(int, np.argwhere(frac)[0])
    path = [(t0, g0)]
    on_row = True  # next move stays in the same row
    seen = {}
    while True:
        t, g = path[-1]
        node = ("r", t) if on_row else ("c", g)
        if node in seen:
            return path[seen[node] + 1:]
        seen[node] = len(path) - 1
        if on_row:
            cols = np.flatnonzero(frac[t])
            nxt = cols[cols != g][0]
            path.append((t, int(nxt)))
        else:
            rws = np.flatnonzero(frac[:, g])
            nxt = rws[rws != t][0]
            path.append((int(nxt), g))
        on_row = not on_row


@dataclass
class RoundedAssignment:
    counts: np.ndarray            # (24, G) integer headcounts
    system: SchoolSystem
    moves: list | None = None     # (student_id, old_school, new_school)
    records: list | None = None


def round_assignment(shares: np.ndarray, system: SchoolSystem, seed: int,
                     records=None) -> RoundedAssignment:
    """Integer headcounts from fractional shares, unbiased under the seed.

    Class sizes and per-type totals are preserved exactly; expected counts
    equal shares * class size. With records supplied, students to move are
    drawn uniformly within each (type, class) cell and the per-student
    mapping is returned.
    """
    sizes = np.array([c.N for c in system.classrooms], dtype=float)
    if shares.shape != (N_TYPES, len(sizes)):
        raise ValueError(f"shares must have shape ({N_TYPES}, {len(sizes)})")
    old_counts = system.counts_matrix().T  # (24, G)
    row_targets = old_counts.sum(axis=1)
    F = _ipf_fix(shares * sizes[None, :], row_targets, sizes)
    rng = np.random.default_rng(seed)
    X = F.copy()
    while True:
        frac = np.abs(X - np.round(X)) > _INT_SNAP
        if not frac.any():
            break
        cells = _find_cycle(frac)
        signs = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(len(cells))])
        vals = np.array([X[c] for c in cells])
        up = np.min(np.where(signs > 0, np.ceil(vals) - vals, vals - np.floor(vals)))
        down = np.min(np.where(signs > 0, vals - np.floor(vals), np.ceil(vals) - vals))
        delta = up if rng.random() < down / (up + down) else -down
        for c, s in zip(cells, signs):
            X[c] += s * delta
        near = np.abs(X - np.round(X)) <= _INT_SNAP
        X[near] = np.round(X[near])
    X = np.round(X).astype(int)
    if np.any(X.sum(axis=0) != sizes.astype(int)) or \
            np.any(X.sum(axis=1) != row_targets.astype(int)):
        raise ReassignmentError("rounding failed to preserve marginals")
    rooms = [replace(c, counts=tuple(int(v) for v in X[:, i]))
             for i, c in enumerate(system.classrooms)]
    new_system = SchoolSystem.from_classrooms(rooms)
    if records is None:
        return RoundedAssignment(counts=X, system=new_system)
    moves, new_records = _student_moves(X, system, records, rng)
    return RoundedAssignment(counts=X, system=new_system, moves=moves,
                             records=new_records)


def _student_moves(X: np.ndarray, system: SchoolSystem, records, rng):
    key_pos = {(c.school_id, c.cohort_id): i for i, c in enumerate(system.classrooms)}
    old_counts = system.counts_matrix().T.astype(int)
    by_cell = {}
    for r in sorted(records, key=lambda r: r.student_id):
        by_cell.setdefault((key_pos[(r.school_id, r.cohort_id)], r.type.index),
                           []).append(r)
    moves = []
    new_records = []
    for t in range(N_TYPES):
        pool = []
        deficits = []
        for g in range(X.shape[1]):
            cell = by_cell.get((g, t), [])
            surplus = old_counts[t, g] - X[t, g]
            if surplus > 0:
                idx = rng.choice(len(cell), size=surplus, replace=False)
                chosen = {int(i) for i in idx}
                pool.extend(cell[i] for i in sorted(chosen))
                keep = [cell[i] for i in range(len(cell)) if i not in chosen]
                new_records.extend(keep)
            else:
                new_records.extend(cell)
                if surplus < 0:
                    deficits.append((g, -surplus))
        if pool:
            pool = [pool[int(i)] for i in rng.permutation(len(pool))]
        k = 0
        for g, need in deficits:
            room = system.classrooms[g]
            for _ in range(need):
                r = pool[k]
                k += 1
                moves.append((r.student_id, r.school_id, room.school_id))
                new_records.append(replace(r, school_id=room.school_id,
                                           cohort_id=room.cohort_id))
    new_records.sort(key=lambda r: r.student_id)
    return moves, new_records
