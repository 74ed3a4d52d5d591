"""Two-step maximum likelihood estimation.

Step one fits the teacher encouragement logit, whose social regressors are
the classmate-race shares seen by each student. Step two fits the student
coursework equation by a nested fixed point: every candidate parameter
vector re-solves each classroom's equilibrium, and the likelihood evaluates
the resulting marginal choice probabilities. Both likelihoods aggregate
students into (classroom, type) cells, so their cost does not grow with
class size.

The student objective is maximized with an analytic gradient obtained by
differentiating through the fixed point (implicit function theorem);
a central finite-difference gradient over the nested solve is kept for
cross-checks and as a fallback.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .game import (
    PROB_FLOOR, EquilibriumError, solve_equilibrium, solve_equilibrium_batch,
)
from .model import (
    DEFAULT_ACHIEVER_LABEL, N_COVARIATES, N_TYPES, RACE_LABELS, RACE_ONE_HOT,
    TYPE_COVARIATES, TYPE_RACE, Classroom, SchoolSystem, StudentParams,
    StudentType, TeacherParams, covariate_names, weight_matrix,
)

SEPARATION_BOUND = 15.0  # |coefficient| beyond this with a flat likelihood means separation
FD_STEP = 1e-5

_RACE_PAIRS_FREE = [(r1, r2) for r2 in (1, 2) for r1 in (0, 1, 2)]  # classmate B then H
_RACE_PAIRS_ALL = [(r1, r2) for r2 in (0, 1, 2) for r1 in (0, 1, 2)]


class SeparationError(RuntimeError):
    """Perfect separation: some coefficient direction improves the likelihood
    without bound."""


@dataclass
class PreparedData:
    """Cell-level arrays for estimation; one row block per classroom."""

    system: SchoolSystem
    counts: np.ndarray        # (C, 24) students per cell
    present: np.ndarray       # (C, 24) bool
    kb: np.ndarray            # (C, 24) encouraged counts
    ka: np.ndarray            # (C, 24) took-prep counts
    kab: np.ndarray           # (C, 24) encouraged and took prep
    W: np.ndarray             # (C, 24, 24) observer weights
    wrace: np.ndarray         # (C, 24, 3) classmate-race shares per observer
    school_idx: np.ndarray    # (C,)
    cohort_idx: np.ndarray    # (C,)
    n_students: int

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def S(self) -> int:
        return self.system.S

    @property
    def G(self) -> int:
        return self.system.G


def prepare_dataset(records, system: SchoolSystem | None = None,
                    require_actions: bool = True) -> PreparedData:
    """Aggregate student records into estimation cells.

    Verifies that record counts match the system's stored classroom counts.
    """
    if not records:
        raise ValueError("empty dataset")
    if system is None:
        system = SchoolSystem.from_records(records)
    pos = {(c.school_id, c.cohort_id): i for i, c in enumerate(system.classrooms)}
    C = len(system.classrooms)
    counts = np.zeros((C, N_TYPES))
    kb = np.zeros((C, N_TYPES))
    ka = np.zeros((C, N_TYPES))
    kab = np.zeros((C, N_TYPES))
    for r in records:
        key = (r.school_id, r.cohort_id)
        if key not in pos:
            raise ValueError(f"record {r.student_id} references unknown classroom {key}")
        if require_actions and (r.encouraged is None or r.took_prep is None):
            raise ValueError(
                f"record {r.student_id} has missing encouraged/took_prep; "
                f"estimation needs observed actions"
            )
        i = pos[key]
        j = r.type.index
        counts[i, j] += 1
        if r.encouraged:
            kb[i, j] += 1
        if r.took_prep:
            ka[i, j] += 1
        if r.encouraged and r.took_prep:
            kab[i, j] += 1
    stored = system.counts_matrix()
    if not np.array_equal(counts, stored):
        raise ValueError("record counts disagree with classroom counts")
    W = np.stack([weight_matrix(c) for c in system.classrooms])
    return PreparedData(
        system=system, counts=counts, present=counts > 0,
        kb=kb, ka=ka, kab=kab, W=W, wrace=W @ RACE_ONE_HOT,
        school_idx=np.array([c.school_idx for c in system.classrooms]),
        cohort_idx=np.array([c.cohort_idx for c in system.classrooms]),
        n_students=int(counts.sum()),
    )


@dataclass
class FitResult:
    """One fitted model: parameters, fit diagnostics, and name registry."""

    model: str
    params: object
    free: np.ndarray
    coef_names: tuple
    loglik: float
    gradient_norm: float
    iterations: int
    converged: bool
    n_clamped: int
    n_students: int
    school_ids: tuple
    cohort_ids: tuple
    se: np.ndarray | None = None
    conditional: bool = False
    achiever_label: str = DEFAULT_ACHIEVER_LABEL


def _fe_names(prefix: str, ids) -> list:
    return [f"{prefix}:{i}" for i in ids[1:]]


def teacher_coef_names(school_ids, cohort_ids,
                       achiever_label: str = DEFAULT_ACHIEVER_LABEL) -> tuple:
    social = [f"rho_{RACE_LABELS[a]}{RACE_LABELS[b]}" for a, b in _RACE_PAIRS_FREE]
    return tuple(list(covariate_names(achiever_label))
                 + _fe_names("cohort", cohort_ids) + _fe_names("school", school_ids)
                 + social)


def student_coef_names(school_ids, cohort_ids,
                       achiever_label: str = DEFAULT_ACHIEVER_LABEL) -> tuple:
    social = [f"lambda_{RACE_LABELS[a]}{RACE_LABELS[b]}" for a, b in _RACE_PAIRS_ALL]
    return tuple(list(covariate_names(achiever_label))
                 + ["Teacher encouraged for college"]
                 + _fe_names("cohort", cohort_ids) + _fe_names("school", school_ids)
                 + social)


def pack_teacher(params: TeacherParams) -> np.ndarray:
    return np.concatenate([params.delta, params.xi[1:], params.zeta[1:],
                           params.rho[:, 1:].T.ravel()])


def unpack_teacher(vec: np.ndarray, S: int, G: int) -> TeacherParams:
    k = N_COVARIATES
    delta = vec[:k]
    xi = np.concatenate([[0.0], vec[k:k + G - 1]])
    k += G - 1
    zeta = np.concatenate([[0.0], vec[k:k + S - 1]])
    k += S - 1
    rho = np.zeros((3, 3))
    rho[:, 1:] = vec[k:k + 6].reshape(2, 3).T
    return TeacherParams(delta, xi, zeta, rho)


def pack_student(params: StudentParams) -> np.ndarray:
    return np.concatenate([params.beta, [params.alpha], params.kappa[1:],
                           params.gamma[1:], params.lam.T.ravel()])


def unpack_student(vec: np.ndarray, S: int, G: int) -> StudentParams:
    k = N_COVARIATES
    beta = vec[:k]
    alpha = vec[k]
    k += 1
    kappa = np.concatenate([[0.0], vec[k:k + G - 1]])
    k += G - 1
    gamma = np.concatenate([[0.0], vec[k:k + S - 1]])
    k += S - 1
    lam = vec[k:k + 9].reshape(3, 3).T
    return StudentParams(beta, alpha, kappa, gamma, lam)


def teacher_features(data: PreparedData) -> np.ndarray:
    """Dense (C * 24, P) design matrix of the encouragement logit."""
    C = data.n_classes
    G, S = data.G, data.S
    P = N_COVARIATES + (G - 1) + (S - 1) + 6
    F = np.zeros((C, N_TYPES, P))
    F[:, :, :N_COVARIATES] = TYPE_COVARIATES[None, :, :]
    k = N_COVARIATES
    for g in range(1, G):
        F[data.cohort_idx == g, :, k] = 1.0
        k += 1
    for s in range(1, S):
        F[data.school_idx == s, :, k] = 1.0
        k += 1
    for r1, r2 in _RACE_PAIRS_FREE:
        F[:, :, k] = RACE_ONE_HOT[:, r1][None, :] * data.wrace[:, :, r2]
        k += 1
    return F.reshape(C * N_TYPES, P)


def _binomial_loglik(prob, trials, successes):
    p = np.clip(prob, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return float(np.sum(successes * np.log(p) + (trials - successes) * np.log1p(-p)))


def _count_clamped(prob, trials) -> int:
    hot = (prob < PROB_FLOOR) | (prob > 1.0 - PROB_FLOOR)
    return int(np.sum(hot & (trials > 0)))


def teacher_loglik(params: TeacherParams, data: PreparedData) -> float:
    """Log likelihood of the observed encouragements under params."""
    phi = expit(teacher_index_batch(params, data))
    return _binomial_loglik(phi, data.counts, data.kb)


def teacher_index_batch(params: TeacherParams, data: PreparedData) -> np.ndarray:
    """Encouragement logit index per (class, type) cell."""
    social = np.einsum("ctr,tr->ct", data.wrace, params.rho[TYPE_RACE])
    return (TYPE_COVARIATES @ params.delta)[None, :] \
        + (params.xi[data.cohort_idx] + params.zeta[data.school_idx])[:, None] \
        + social


def _teacher_nll_grad(x, F, trials, successes, n):
    z = F @ x
    p = expit(z)
    pc = np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)
    ll = np.sum(successes * np.log(pc) + (trials - successes) * np.log1p(-pc))
    grad = F.T @ (successes - trials * p)
    return -ll / n, -grad / n


def _separation_scan(x, names, gradient_norm, tol):
    if gradient_norm > tol and np.max(np.abs(x)) > SEPARATION_BOUND:
        worst = int(np.argmax(np.abs(x)))
        raise SeparationError(
            f"perfect separation suspected: coefficient {names[worst]!r} ran to "
            f"{x[worst]:.1f} with gradient norm {gradient_norm:.2e} still above tolerance"
        )


def estimate_teacher(data: PreparedData, tol: float = 1e-6, max_iter: int = 2000,
                     start: np.ndarray | None = None,
                     achiever_label: str = DEFAULT_ACHIEVER_LABEL) -> FitResult:
    """Fit the encouragement logit by quasi-Newton ascent."""
    if data.n_students == 0:
        raise ValueError("empty dataset")
    total_b = data.kb.sum()
    if total_b == 0 or total_b == data.counts.sum():
        raise SeparationError(
            "perfect separation: encouragement is constant across the sample"
        )
    F = teacher_features(data)
    trials = data.counts.ravel()
    successes = data.kb.ravel()
    n = data.n_students
    names = teacher_coef_names(data.system.school_ids, data.system.cohort_ids,
                               achiever_label)
    x0 = np.zeros(F.shape[1]) if start is None else np.asarray(start, dtype=float)
    res = minimize(_teacher_nll_grad, x0, args=(F, trials, successes, n),
                   jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-14, "gtol": tol,
                            "maxcor": 30})
    x = res.x
    _, g = _teacher_nll_grad(x, F, trials, successes, n)
    gnorm = float(np.max(np.abs(g)))
    _separation_scan(x, names, gnorm, tol)
    params = unpack_teacher(x, data.S, data.G)
    phi = expit(F @ x)
    return FitResult(
        model="teacher", params=params, free=x, coef_names=names,
        loglik=_binomial_loglik(phi, trials, successes),
        gradient_norm=gnorm, iterations=int(res.nit), converged=gnorm <= tol,
        n_clamped=_count_clamped(phi, trials), n_students=n,
        school_ids=data.system.school_ids, cohort_ids=data.system.cohort_ids,
        achiever_label=achiever_label,
    )


class _StudentObjective:
    """Mean negative log likelihood of the coursework step, with analytic
    gradient through the nested equilibrium. Keeps a warm-start cache of the
    last solved sigma field."""

    def __init__(self, data: PreparedData, tparams: TeacherParams,
                 conditional: bool = False, eq_tol: float = 1e-12,
                 eq_max_iter: int = 5000, penalize_failure: bool = True):
        self.data = data
        self.conditional = conditional
        self.eq_tol = eq_tol
        self.eq_max_iter = eq_max_iter
        self.penalize_failure = penalize_failure
        self.phi = expit(teacher_index_batch(tparams, data))
        self.phi = np.where(data.present, self.phi, 0.0)
        self.cache = None
        self.n_clamped = 0
        self.failed = False

    def solve(self, params: StudentParams, warm: bool = True):
        d = self.data
        base = (TYPE_COVARIATES @ params.beta)[None, :] \
            + (params.kappa[d.cohort_idx] + params.gamma[d.school_idx])[:, None]
        wlam = d.W * params.lam[TYPE_RACE[:, None], TYPE_RACE[None, :]][None, :, :]
        sigma0 = self.cache if warm else None
        sigma, s0, s1, iters, ok, res = solve_equilibrium_batch(
            base, base + params.alpha, self.phi, wlam, d.present,
            tol=self.eq_tol, max_iter=self.eq_max_iter, sigma0=sigma0,
        )
        if ok and warm:
            self.cache = sigma
        return sigma, s0, s1, wlam, ok, res

    def value_and_grad(self, x: np.ndarray):
        d = self.data
        params = unpack_student(x, d.S, d.G)
        sigma, s0, s1, wlam, ok, res = self.solve(params)
        if not ok:
            self.failed = True
            if not self.penalize_failure:
                raise EquilibriumError(
                    f"equilibrium failed to converge during likelihood evaluation "
                    f"(residual {res:.3e})", residual=res)
            return 1e10 * (1.0 + res), np.zeros_like(x)
        n = d.n_students
        pres = d.present
        v = (1.0 - self.phi) * s0 * (1.0 - s0) + self.phi * s1 * (1.0 - s1)
        a1 = self.phi * s1 * (1.0 - s1)
        if self.conditional:
            s0c = np.clip(s0, PROB_FLOOR, 1.0 - PROB_FLOOR)
            s1c = np.clip(s1, PROB_FLOOR, 1.0 - PROB_FLOOR)
            n11, n10 = d.kab, d.kb - d.kab
            n01, n00 = d.ka - d.kab, d.counts - d.kb - (d.ka - d.kab)
            ll = np.sum(np.where(pres, n11 * np.log(s1c) + n10 * np.log1p(-s1c)
                                 + n01 * np.log(s0c) + n00 * np.log1p(-s0c), 0.0))
            g1 = np.where(pres, n11 / s1c - n10 / (1.0 - s1c), 0.0)
            g0 = np.where(pres, n01 / s0c - n00 / (1.0 - s0c), 0.0)
            h = g1 * s1 * (1.0 - s1) + g0 * s0 * (1.0 - s0)
            halpha = g1 * s1 * (1.0 - s1)
            rhs = np.einsum("ctu,ct->cu", wlam, h)
            z = self._adjoint(v, wlam, rhs)
            u_common = h + z * v
            u_alpha = halpha + z * a1
            self.n_clamped = _count_clamped(s0, d.counts) + _count_clamped(s1, d.counts)
        else:
            sc = np.clip(sigma, PROB_FLOOR, 1.0 - PROB_FLOOR)
            ll = np.sum(np.where(pres, d.ka * np.log(sc)
                                 + (d.counts - d.ka) * np.log1p(-sc), 0.0))
            gsig = np.where(pres, d.ka / sc - (d.counts - d.ka) / (1.0 - sc), 0.0)
            y = self._adjoint(v, wlam, gsig)
            u_common = y * v
            u_alpha = y * a1
            self.n_clamped = _count_clamped(sigma, d.counts)
        grad = self._assemble(u_common, u_alpha, sigma)
        return -ll / n, -grad / n

    def value(self, x: np.ndarray) -> float:
        d = self.data
        params = unpack_student(x, d.S, d.G)
        sigma, s0, s1, _, ok, res = self.solve(params, warm=False)
        if not ok:
            if not self.penalize_failure:
                raise EquilibriumError(
                    f"equilibrium failed to converge during likelihood evaluation "
                    f"(residual {res:.3e})", residual=res)
            return 1e10 * (1.0 + res)
        if self.conditional:
            return -(_binomial_loglik(s1, d.kb, d.kab)
                     + _binomial_loglik(s0, d.counts - d.kb, d.ka - d.kab)) / d.n_students
        return -_binomial_loglik(sigma, d.counts, d.ka) / d.n_students

    def _adjoint(self, v, wlam, rhs):
        # solve (I - V wlam)^T y = rhs classroom by classroom, batched
        A = np.eye(N_TYPES)[None, :, :] - v[:, :, None] * wlam
        return np.linalg.solve(np.transpose(A, (0, 2, 1)), rhs[:, :, None])[:, :, 0]

    def _assemble(self, u_common, u_alpha, sigma):
        d = self.data
        gbeta = np.einsum("ct,tj->j", u_common, TYPE_COVARIATES)
        galpha = float(u_alpha.sum())
        rows = u_common.sum(axis=1)
        gkappa = np.zeros(d.G)
        np.add.at(gkappa, d.cohort_idx, rows)
        ggamma = np.zeros(d.S)
        np.add.at(ggamma, d.school_idx, rows)
        ss = np.einsum("ctu,cu,ur->ctr", d.W, sigma, RACE_ONE_HOT)
        glam = np.einsum("ct,tr,ctq->rq", u_common, RACE_ONE_HOT, ss)
        return np.concatenate([gbeta, [galpha], gkappa[1:], ggamma[1:],
                               glam.T.ravel()])


def student_loglik(params: StudentParams, tparams: TeacherParams,
                   data: PreparedData, conditional: bool = False) -> float:
    """Log likelihood of observed coursework choices at the solved equilibria.

    By default the marginal choice probability is used: the teacher signal
    is integrated out rather than conditioned on. Set conditional=True to
    evaluate the signal-conditional variant instead.
    """
    obj = _StudentObjective(data, tparams, conditional=conditional,
                            penalize_failure=False)
    return -obj.value(pack_student(params)) * data.n_students


def student_loglik_fd_grad(params: StudentParams, tparams: TeacherParams,
                           data: PreparedData, conditional: bool = False,
                           step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of the total log likelihood."""
    obj = _StudentObjective(data, tparams, conditional=conditional,
                            penalize_failure=False)
    x = pack_student(params)
    grad = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (obj.value(x + e) - obj.value(x - e)) / (2.0 * step)
    return -grad * data.n_students


def estimate_student(data: PreparedData, teacher, tol: float = 1e-6,
                     max_iter: int = 3000, start: np.ndarray | None = None,
                     conditional: bool = False, grad: str = "analytic",
                     achiever_label: str = DEFAULT_ACHIEVER_LABEL) -> FitResult:
    """Fit the coursework equation by quasi-Newton ascent over the nested
    fixed point. teacher is the step-one FitResult or a TeacherParams."""
    tparams = teacher.params if isinstance(teacher, FitResult) else teacher
    obj = _StudentObjective(data, tparams, conditional=conditional)
    P = N_COVARIATES + 1 + (data.G - 1) + (data.S - 1) + 9
    x0 = np.zeros(P) if start is None else np.asarray(start, dtype=float)
    names = student_coef_names(data.system.school_ids, data.system.cohort_ids,
                               achiever_label)
    if grad == "analytic":
        fun = obj.value_and_grad
        jac = True
    elif grad == "fd":
        fun = obj.value
        jac = None
    else:
        raise ValueError(f'grad must be "analytic" or "fd", got {grad!r}')
    res = minimize(fun, x0, jac=jac, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": 1e-13, "gtol": tol,
                            "maxcor": 40})
    x = res.x
    nll, g = obj.value_and_grad(x)
    gnorm = float(np.max(np.abs(g)))
    _separation_scan(x, names, gnorm, tol)
    params = unpack_student(x, data.S, data.G)
    return FitResult(
        model="student", params=params, free=x, coef_names=names,
        loglik=-nll * data.n_students, gradient_norm=gnorm,
        iterations=int(res.nit), converged=gnorm <= tol,
        n_clamped=obj.n_clamped, n_students=data.n_students,
        school_ids=data.system.school_ids, cohort_ids=data.system.cohort_ids,
        conditional=conditional, achiever_label=achiever_label,
    )


@dataclass
class SEResult:
    se: np.ndarray | None
    condition_number: float
    ok: bool
    message: str = ""
    cov: np.ndarray | None = None


def standard_errors(fit: FitResult, data: PreparedData,
                    teacher=None, step: float = FD_STEP) -> SEResult:
    """Inverse negative Hessian standard errors.

    The Hessian comes from central finite differences of the analytic score.
    A singular or ill-conditioned Hessian yields se=None plus the condition
    number instead of fabricated values.
    """
    if fit.model == "teacher":
        F = teacher_features(data)
        trials, successes = data.counts.ravel(), data.kb.ravel()

        def grad(x):
            return -_teacher_nll_grad(x, F, trials, successes, 1.0)[1]
    elif fit.model == "student":
        if teacher is None:
            raise ValueError("student standard errors need the step-one fit or params")
        tparams = teacher.params if isinstance(teacher, FitResult) else teacher
        obj = _StudentObjective(data, tparams, conditional=fit.conditional)
        n = data.n_students

        def grad(x):
            return -obj.value_and_grad(x)[1] * n
    else:
        raise ValueError(f"unknown fit model {fit.model!r}")
    x = fit.free
    P = x.size
    H = np.zeros((P, P))
    for i in range(P):
        e = np.zeros(P)
        e[i] = step
        H[i] = (grad(x + e) - grad(x - e)) / (2.0 * step)
    H = 0.5 * (H + H.T)
    neg = -H
    cond = float(np.linalg.cond(neg))
    if not np.isfinite(cond) or cond > 1e12:
        return SEResult(se=None, condition_number=cond, ok=False,
                        message="singular or ill-conditioned Hessian")
    cov = np.linalg.inv(neg)
    diag = np.diag(cov)
    if np.any(diag <= 0):
        return SEResult(se=None, condition_number=cond, ok=False,
                        message="negative variance estimate; not at a maximum")
    return SEResult(se=np.sqrt(diag), condition_number=cond, ok=True, cov=cov)


@dataclass
class RepresentativeConfig:
    """A pooled classroom standing in for the whole cohort, plus the
    enrollment weights used to average estimated school effects."""

    classroom: Classroom
    cohort_id: int
    school_weights: np.ndarray
    base_type: StudentType
    teacher_params: TeacherParams | None = None


def representative_config(system: SchoolSystem, cohort_id: int | None = None,
                          base_type: StudentType | None = None,
                          teacher=None) -> RepresentativeConfig:
    """Pool every classroom of one cohort into a single representative class."""
    if cohort_id is None:
        cohort_id = system.cohort_ids[-1]
    rooms = [c for c in system.classrooms if c.cohort_id == cohort_id]
    if not rooms:
        raise ValueError(f"no classrooms in cohort {cohort_id}")
    counts = np.sum([c.counts_array() for c in rooms], axis=0)
    weights = np.zeros(system.S)
    for c in rooms:
        weights[c.school_idx] += c.N
    weights /= weights.sum()
    if base_type is None:
        base_type = StudentType.from_index(0)
    tparams = teacher.params if isinstance(teacher, FitResult) else teacher
    pooled = Classroom(school_id=-1, cohort_id=cohort_id,
                       counts=tuple(int(v) for v in counts))
    return RepresentativeConfig(pooled, cohort_id, weights, base_type, tparams)


def _variant_types(base: StudentType):
    from .model import Race
    white = StudentType(Race.WHITE, base.female, base.achiever, base.mother_college)
    out = [
        ("Black", white, StudentType(Race.BLACK, base.female, base.achiever,
                                     base.mother_college)),
        ("Hispanic", white, StudentType(Race.HISPANIC, base.female, base.achiever,
                                        base.mother_college)),
        ("Female", StudentType(base.race, 0, base.achiever, base.mother_college),
         StudentType(base.race, 1, base.achiever, base.mother_college)),
        ("achiever", StudentType(base.race, base.female, 0, base.mother_college),
         StudentType(base.race, base.female, 1, base.mother_college)),
        ("Mother attended college",
         StudentType(base.race, base.female, base.achiever, 0),
         StudentType(base.race, base.female, base.achiever, 1)),
    ]
    return out


def marginal_effects_covariate(fit: FitResult, config: RepresentativeConfig,
                               achiever_label: str | None = None) -> dict:
    """Probability differences from switching one covariate at the pooled class.

    The hypothetical student observes the pooled class from outside, so the
    social term uses plain composition shares. School effects enter at their
    enrollment-weighted estimated mean. Values are probability differences
    (0.04 means four percentage points).
    """
    label = achiever_label or fit.achiever_label
    room = config.classroom
    shares = room.counts_array() / room.N
    race_shares = RACE_ONE_HOT.T @ shares
    gidx = fit.cohort_ids.index(config.cohort_id)

    if fit.model == "teacher":
        p: TeacherParams = fit.params
        fx = p.xi[gidx] + float(config.school_weights @ p.zeta)

        def prob(t: StudentType) -> float:
            social = float(p.rho[int(t.race)] @ race_shares)
            return float(expit(t.covariates() @ p.delta + fx + social))

        effects = {}
        for name, lo, hi in _variant_types(config.base_type):
            key = label if name == "achiever" else name
            effects[key] = prob(hi) - prob(lo)
        return effects

    if fit.model != "student":
        raise ValueError(f"unknown fit model {fit.model!r}")
    if config.teacher_params is None:
        raise ValueError("student marginal effects need teacher_params in the config")
    sp: StudentParams = fit.params
    tp = config.teacher_params
    if tp.zeta.size != config.school_weights.size or gidx >= tp.xi.size:
        raise ValueError("teacher_params effects do not match this school system")
    fx_s = sp.kappa[gidx] + float(config.school_weights @ sp.gamma)
    fx_t = tp.xi[gidx] + float(config.school_weights @ tp.zeta)
    # solve the pooled class with both fixed effects folded into the intercepts
    tfold = TeacherParams(
        np.concatenate([[tp.delta[0] + fx_t], tp.delta[1:]]),
        np.zeros(1), np.zeros(1), tp.rho)
    sfold = StudentParams(
        np.concatenate([[sp.beta[0] + fx_s], sp.beta[1:]]),
        sp.alpha, np.zeros(1), np.zeros(1), sp.lam)
    eq = solve_equilibrium(tfold, sfold, room, tol=1e-12)
    sigma = np.where(room.present(), eq.sigma, 0.0)

    def phi_of(t: StudentType) -> float:
        social = float(tfold.rho[int(t.race)] @ race_shares)
        return float(expit(t.covariates() @ tfold.delta + social))

    def prob(t: StudentType) -> float:
        soc = float(np.dot(sfold.lam[int(t.race)][TYPE_RACE] * shares, sigma))
        q = float(t.covariates() @ sfold.beta) + soc
        ph = phi_of(t)
        return (1.0 - ph) * float(expit(q)) + ph * float(expit(q + sp.alpha))

    effects = {}
    for name, lo, hi in _variant_types(config.base_type):
        key = label if name == "achiever" else name
        effects[key] = prob(hi) - prob(lo)
    t = config.base_type
    soc = float(np.dot(sfold.lam[int(t.race)][TYPE_RACE] * shares, sigma))
    q = float(t.covariates() @ sfold.beta) + soc
    effects["Teacher encouraged for college"] = float(expit(q + sp.alpha)) - float(expit(q))
    return effects


def marginal_effects_composition(fit: FitResult, level: float) -> np.ndarray:
    """Slope of the choice probability in classmate-race shares.

    Returns the 3x3 matrix level * (1 - level) * coef, rows indexed by own
    race and columns by classmate race; for teacher fits the White-classmate
    column is identically zero by normalization.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError("level must be a probability")
    coef = fit.params.rho if fit.model == "teacher" else fit.params.lam
    return level * (1.0 - level) * coef


def fit_to_json(fit: FitResult) -> dict:
    out = {
        "model": fit.model,
        "coefficients": {n: float(v) for n, v in zip(fit.coef_names, fit.free)},
        "free": [float(v) for v in fit.free],
        "loglik": fit.loglik,
        "gradient_norm": fit.gradient_norm,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "n_clamped": fit.n_clamped,
        "n_students": fit.n_students,
        "school_ids": list(fit.school_ids),
        "cohort_ids": list(fit.cohort_ids),
        "conditional": fit.conditional,
        "achiever_label": fit.achiever_label,
    }
    if fit.se is not None:
        out["se"] = {n: float(v) for n, v in zip(fit.coef_names, fit.se)}
    return out


def fit_from_json(obj: dict) -> FitResult:
    school_ids = tuple(obj["school_ids"])
    cohort_ids = tuple(obj["cohort_ids"])
    free = np.array(obj["free"], dtype=float)
    S, G = len(school_ids), len(cohort_ids)
    if obj["model"] == "teacher":
        params = unpack_teacher(free, S, G)
        names = teacher_coef_names(school_ids, cohort_ids, obj["achiever_label"])
    else:
        params = unpack_student(free, S, G)
        names = student_coef_names(school_ids, cohort_ids, obj["achiever_label"])
    se = None
    if "se" in obj:
        se = np.array([obj["se"][n] for n in names], dtype=float)
    return FitResult(
        model=obj["model"], params=params, free=free, coef_names=names,
        loglik=float(obj["loglik"]), gradient_norm=float(obj["gradient_norm"]),
        iterations=int(obj["iterations"]), converged=bool(obj["converged"]),
        n_clamped=int(obj["n_clamped"]), n_students=int(obj["n_students"]),
        school_ids=school_ids, cohort_ids=cohort_ids, se=se,
        conditional=bool(obj.get("conditional", False)),
        achiever_label=obj.get("achiever_label", DEFAULT_ACHIEVER_LABEL),
    )
