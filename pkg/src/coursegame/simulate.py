"""Synthetic populations, simulated play, and reassignment counterfactuals.

Populations are drawn school by school with class-level race-share jitter so
that classroom composition varies within schools, which is what identifies
the race-interaction coefficients. Simulated actions use counter-based
random streams keyed by student id, so a student's draws do not depend on
the order in which classes are processed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, logit

from .game import (
    EquilibriumError,
    _lam_by_type,
    classroom_arrays,
    solve_equilibrium_batch,
)
from .model import (
    N_TYPES,
    RACE_LABELS,
    RACE_ONE_HOT,
    TYPE_COVARIATES,
    TYPE_RACE,
    Classroom,
    SchoolSystem,
    StudentRecord,
    StudentType,
    TeacherParams,
    StudentParams,
    fold_average_effects,
)
from .reassign import (
    ReassignmentProblem,
    attainable_entropy_range,
    round_assignment,
    solve_reassignment,
)
from .segregation import entropy_index_from_counts


@dataclass(frozen=True)
class SimConfig:
    """Design of a synthetic population.

    class_size is either an int or an inclusive (low, high) range. With
    school_race_shares set (one row per school) the global race_shares are
    ignored for composition; class_share_concentration controls how far
    individual classes drift from their school's mix (larger = tighter).
    """

    n_schools: int = 20
    cohorts_per_school: int = 2
    class_size: int | tuple = 100
    race_shares: tuple = (0.54, 0.22, 0.24)
    school_race_shares: np.ndarray | None = None
    class_share_concentration: float | None = 25.0
    trait_shares: tuple = (0.5, 0.35, 0.4)
    # per-class uniform ranges overriding trait_shares entry-wise, e.g.
    # ((0.4, 0.6), None, (0.15, 0.65)); class-to-class trait variation moves
    # equilibrium choice rates independently of racial composition
    trait_ranges: tuple | None = None
    # draw trait shares separately for each race within a class, so each
    # race's choice rate shifts on its own and the race-interaction block
    # is pinned by more than the racial mix
    race_specific_traits: bool = False


def canonical_params(n_schools: int, n_cohorts: int):
    """Benchmark parameter point used for simulation studies (no fixed effects)."""
    teacher = TeacherParams(
        delta=np.array([-2.763, -0.052, -0.247, 0.168, 0.415, 0.551]),
        xi=np.zeros(n_cohorts),
        zeta=np.zeros(n_schools),
        rho=np.array([
            [0.0, 0.810, 0.361],
            [0.0, 0.647, 1.008],
            [0.0, 0.386, 1.158],
        ]),
    )
    student = StudentParams(
        beta=np.array([-0.842, 1.237, 0.411, 0.095, 0.725, 0.643]),
        alpha=0.535,
        kappa=np.zeros(n_cohorts),
        gamma=np.zeros(n_schools),
        lam=np.array([
            [3.561, 2.770, -1.123],
            [1.479, 0.755, -2.858],
            [2.367, 1.804, -1.002],
        ]),
    )
    return teacher, student


def _trait_cell_probs(trait_shares) -> np.ndarray:
    pf, pa, pm = trait_shares
    cells = np.empty(8)
    for f in (0, 1):
        for a in (0, 1):
            for m in (0, 1):
                cells[f * 4 + a * 2 + m] = (
                    (pf if f else 1 - pf)
                    * (pa if a else 1 - pa)
                    * (pm if m else 1 - pm))
    return cells


def gen_population(config: SimConfig, seed: int):
    """Draw classes and students; returns (records, system)."""
    rng = np.random.default_rng(seed)
    S, G = config.n_schools, config.cohorts_per_school
    if config.school_race_shares is not None:
        school_shares = np.asarray(config.school_race_shares, dtype=float)
        if school_shares.shape != (S, 3):
            raise ValueError(f"school_race_shares must have shape ({S}, 3)")
    else:
        school_shares = np.tile(np.asarray(config.race_shares, dtype=float), (S, 1))
    school_shares = school_shares / school_shares.sum(axis=1, keepdims=True)
    cells = _trait_cell_probs(config.trait_shares)
    classrooms = []
    records = []
    sid = 0
    for s in range(S):
        for g in range(G):
            if isinstance(config.class_size, int):
                n = config.class_size
            else:
                lo, hi = config.class_size
                n = int(rng.integers(lo, hi + 1))
            if config.class_share_concentration is not None:
                alpha = config.class_share_concentration * np.clip(
                    school_shares[s], 1e-3, None)
                shares = rng.dirichlet(alpha)
            else:
                shares = school_shares[s]
            if config.trait_ranges is not None:
                def draw_cells():
                    traits = tuple(
                        p if rr is None else float(rng.uniform(*rr))
                        for p, rr in zip(config.trait_shares,
                                         config.trait_ranges))
                    return _trait_cell_probs(traits)

                if config.race_specific_traits:
                    probs = shares[TYPE_RACE] * np.concatenate(
                        [draw_cells() for _ in range(3)])
                else:
                    probs = shares[TYPE_RACE] * np.tile(draw_cells(), 3)
            else:
                probs = shares[TYPE_RACE] * np.tile(cells, 3)
            counts = rng.multinomial(n, probs)
            classrooms.append(Classroom(school_id=s, cohort_id=g,
                                        counts=tuple(int(v) for v in counts)))
            for t in range(N_TYPES):
                for _ in range(counts[t]):
                    records.append(StudentRecord(
                        student_id=sid, school_id=s, cohort_id=g,
                        type=StudentType.from_index(t)))
                    sid += 1
    return records, SchoolSystem.from_classrooms(classrooms)


def _student_stream(student_id: int, seed: int) -> np.random.Generator:
    key = np.array([student_id, seed], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _gumbel(u: np.ndarray) -> np.ndarray:
    return -np.log(-np.log(u))


def _system_equilibrium(system: SchoolSystem, teacher: TeacherParams,
                        student: StudentParams, tol=1e-10):
    C = len(system.classrooms)
    base = np.empty((C, N_TYPES))
    phi = np.empty((C, N_TYPES))
    wlam = np.empty((C, N_TYPES, N_TYPES))
    present = np.empty((C, N_TYPES), dtype=bool)
    for i, room in enumerate(system.classrooms):
        base[i], phi[i], wlam[i], present[i] = classroom_arrays(
            teacher, student, room)
    sigma, s0, s1, iters, ok, res = solve_equilibrium_batch(
        base, base + student.alpha, phi, wlam, present, tol=tol)
    if not ok:
        raise EquilibriumError(
            f"equilibrium failed to converge across {C} classrooms: "
            f"residual {res:.3e}", residual=res)
    return phi, sigma, s0, s1


def simulate_play(records, system: SchoolSystem, teacher: TeacherParams,
                  student: StudentParams, seed: int):
    """Fill in encouragement and coursework actions for every student.

    Each student draws four independent Gumbel shocks from a private stream;
    the teacher's action compares shocks around the encouragement index, the
    student's around the coursework index given the realized encouragement.
    """
    phi, sigma, s0, s1 = _system_equilibrium(system, teacher, student)
    key_pos = {(c.school_id, c.cohort_id): i for i, c in enumerate(system.classrooms)}
    with np.errstate(divide="ignore"):
        t_idx = np.where(phi > 0, logit(np.clip(phi, 1e-15, 1 - 1e-15)), -np.inf)
        q0 = logit(np.clip(s0, 1e-15, 1 - 1e-15))
        q1 = logit(np.clip(s1, 1e-15, 1 - 1e-15))
    out = []
    for r in records:
        c = key_pos[(r.school_id, r.cohort_id)]
        t = r.type.index
        g = _gumbel(_student_stream(r.student_id, seed).random(4))
        b = int(t_idx[c, t] + g[1] > g[0])
        q = q1[c, t] if b else q0[c, t]
        a = int(q + g[3] > g[2])
        out.append(replace(r, encouraged=b, took_prep=a))
    return out


def composition_equilibrium(counts: np.ndarray, teacher: TeacherParams,
                            student: StudentParams, tol=1e-10):
    """Equilibrium on raw class-by-type counts, fractional counts allowed.

    Fixed effects are taken at their first (index 0) entries, so pass
    parameters through fold_average_effects for counterfactual compositions.
    Returns (phi, sigma) as (C, 24) arrays with zeros at absent types.
    """
    counts = np.asarray(counts, dtype=float)
    C = counts.shape[0]
    N = counts.sum(axis=1)
    present = counts > 0.0
    denom = np.where(N > 1.0, N - 1.0, 1.0)
    W = (counts[:, None, :] - np.eye(N_TYPES)[None, :, :]) / denom[:, None, None]
    W = np.where((N > 1.0)[:, None, None] & present[:, :, None], W, 0.0)
    W = np.clip(W, 0.0, None)
    race_shares = counts @ RACE_ONE_HOT / np.where(N > 0, N, 1.0)[:, None]
    t_index = (TYPE_COVARIATES @ teacher.delta + teacher.xi[0] + teacher.zeta[0])
    t_index = t_index[None, :] + (race_shares @ teacher.rho.T)[:, TYPE_RACE]
    phi = np.where(present, expit(t_index), 0.0)
    base = (TYPE_COVARIATES @ student.beta + student.kappa[0] + student.gamma[0])
    base = np.broadcast_to(base, (C, N_TYPES)).copy()
    wlam = _lam_by_type(student.lam)[None, :, :] * W
    sigma, s0, s1, iters, ok, res = solve_equilibrium_batch(
        base, base + student.alpha, phi, wlam, present, tol=tol)
    if not ok:
        raise EquilibriumError(
            f"equilibrium failed to converge on counterfactual composition: "
            f"residual {res:.3e}", residual=res)
    return phi, sigma


@dataclass
class CurvePoint:
    target_h: float
    achieved_h: float
    objective: float | None
    phi_by_race: np.ndarray
    sigma_by_race: np.ndarray
    weight_by_race: np.ndarray
    n_classes_used: np.ndarray


@dataclass
class CounterfactualCurve:
    points: list
    baseline_h: float
    attainable: tuple
    unit: str
    fractional: bool
    figure_filter: bool

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("level,race,phi,sigma,weight\n")
            for pt in self.points:
                for r, label in enumerate(RACE_LABELS):
                    fh.write(f"{pt.achieved_h!r},{label},{pt.phi_by_race[r]!r},"
                             f"{pt.sigma_by_race[r]!r},{pt.weight_by_race[r]!r}\n")

    def race_series(self, race: int):
        """(levels, phi, sigma, weight) arrays for one race across the curve.

        Points whose filtered class set is empty carry weight 0; drop them
        before computing trends.
        """
        x = np.array([pt.achieved_h for pt in self.points])
        return (x, np.array([pt.phi_by_race[race] for pt in self.points]),
                np.array([pt.sigma_by_race[race] for pt in self.points]),
                np.array([pt.weight_by_race[race] for pt in self.points]))


def _aggregate_by_race(counts, phi, sigma, keep):
    # keep is (3, C): each race curve has its own admissible class set
    phi_r, sig_r = np.zeros(3), np.zeros(3)
    weight, used = np.zeros(3), np.zeros(3, dtype=int)
    for r in range(3):
        rows = keep[r]
        col = RACE_ONE_HOT[:, r]
        heads = counts[rows] @ col
        used[r] = int(rows.sum())
        weight[r] = heads.sum()
        if weight[r] > 0:
            phi_r[r] = ((counts[rows] * phi[rows]) @ col).sum() / weight[r]
            sig_r[r] = ((counts[rows] * sigma[rows]) @ col).sum() / weight[r]
    return phi_r, sig_r, weight, used


def counterfactual_run(system: SchoolSystem, teacher: TeacherParams,
                       student: StudentParams, targets=None, n_targets: int = 9,
                       fractional: bool = False, seed: int = 0,
                       figure_filter: bool = True, third_share_cut: float = 0.10,
                       solver_seed: int = 0) -> CounterfactualCurve:
    """Re-solve the game along a grid of segregation levels.

    Students are reassigned across classes holding class sizes and type
    populations fixed, cohort and school effects are folded to their
    enrollment-weighted means, and outcomes are averaged within race. With
    fractional=True the fractional optimum is evaluated directly (no
    rounding step, invariant to seed); otherwise headcounts are rounded.
    With figure_filter, classes where a third race exceeds the cut are
    dropped from the aggregation (the constraint solve still uses them).
    """
    tp = fold_average_effects(teacher, system)
    sp = fold_average_effects(student, system)
    prob = ReassignmentProblem.from_system(system, 0.0)
    h_range = attainable_entropy_range(prob)
    base_counts = system.counts_matrix().astype(float)  # (C, 24)
    sizes = base_counts.sum(axis=1)
    h0 = entropy_index_from_counts(base_counts @ RACE_ONE_HOT).index
    if targets is None:
        targets = np.linspace(0.0, 0.95 * h_range[1], n_targets)
        targets = np.unique(np.append(targets, h0))
    points = []
    warm = None
    for i, h_star in enumerate(np.sort(np.asarray(targets, dtype=float))):
        if abs(h_star - h0) <= 1e-9:
            counts, objective = base_counts, 0.0
        else:
            sol = solve_reassignment(replace(prob, target_h=float(h_star)),
                                     seed=solver_seed, start=warm,
                                     n_starts=2 if warm is not None else 3,
                                     polish_to=1e-7)
            warm = sol.shares
            objective = sol.objective
            if fractional:
                counts = (sol.shares * sizes[None, :]).T
            else:
                counts = round_assignment(sol.shares, system,
                                          seed=seed + 17 * i).counts.T.astype(float)
        phi, sigma = composition_equilibrium(counts, tp, sp)
        race_counts = counts @ RACE_ONE_HOT
        achieved = entropy_index_from_counts(race_counts).index
        keep = np.ones((3, len(sizes)), dtype=bool)
        if figure_filter:
            shares = race_counts / np.where(sizes > 0, sizes, 1.0)[:, None]
            # two-race comparison sets: each minority curve drops classes
            # where the other minority exceeds the cut
            keep[1] = shares[:, 2] < third_share_cut
            keep[2] = shares[:, 1] < third_share_cut
        phi_r, sig_r, w_r, used = _aggregate_by_race(counts, phi, sigma, keep)
        points.append(CurvePoint(
            target_h=float(h_star), achieved_h=achieved, objective=objective,
            phi_by_race=phi_r, sigma_by_race=sig_r, weight_by_race=w_r,
            n_classes_used=used))
    return CounterfactualCurve(points=points, baseline_h=h0, attainable=h_range,
                               unit="classroom", fractional=fractional,
                               figure_filter=figure_filter)


def smooth_curve(x, y, bandwidth: float = 0.05, weights=None, eval_x=None):
    """Locally weighted mean with a parabolic kernel on a fixed bandwidth.

    Evaluation points with no observations inside the bandwidth are omitted
    with a warning. Returns (kept evaluation points, fitted values).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    pts = np.unique(x) if eval_x is None else np.asarray(eval_x, dtype=float)
    kept, fitted = [], []
    for x0 in pts:
        u = (x - x0) / bandwidth
        k = np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0) * w
        total = k.sum()
        if total <= 0.0:
            warnings.warn(f"no observations within bandwidth of {x0}; point omitted")
            continue
        kept.append(x0)
        # centered form: constant input passes through bit-exactly
        ref = y[int(np.argmax(k))]
        fitted.append(float(ref + (k * (y - ref)).sum() / total))
    return np.array(kept), np.array(fitted)
