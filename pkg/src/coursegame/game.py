"""Classroom equilibrium engine.

Teachers encourage with a probability that depends on the student's type and
the racial composition of the class. Students then choose college-prep
coursework in a simultaneous-move game: each type's choice probability is a
mixture, over the teacher signal b, of logit best responses that include a
race-weighted average of the other types' choice probabilities. The solver
iterates the best-response map with optional damping; a row-sum condition on
the interaction coefficients certifies contraction and hence uniqueness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .model import (
    N_TYPES, TYPE_COVARIATES, TYPE_RACE, Classroom, StudentParams,
    StudentType, TeacherParams, weight_matrix,
)

CONTRACTION_BOUND = 4.0  # logistic slope is at most 1/4, so row sums below 4 contract
PROB_FLOOR = 1e-12  # probabilities are clamped only inside log-likelihoods


class EquilibriumError(RuntimeError):
    """Raised when the best-response iteration fails to converge."""

    def __init__(self, message, last_sigma=None, residual=None):
        super().__init__(message)
        self.last_sigma = last_sigma
        self.residual = residual


def logistic(u):
    """Standard logistic function; rejects non-finite input."""
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("logistic requires finite input")
    out = expit(arr)
    return float(out) if np.isscalar(u) or arr.ndim == 0 else out


def _lam_by_type(lam: np.ndarray) -> np.ndarray:
    """Expand a 3x3 race matrix to the 24x24 type grid."""
    return lam[TYPE_RACE[:, None], TYPE_RACE[None, :]]


def _teacher_index(params: TeacherParams, classroom: Classroom, W: np.ndarray) -> np.ndarray:
    """Linear index of the encouragement logit for every present type."""
    race_shares = W @ np.eye(3)[TYPE_RACE]  # (24, 3): classmate-race shares per observer
    social = np.einsum("tr,tr->t", params.rho[TYPE_RACE], race_shares)
    return (TYPE_COVARIATES @ params.delta
            + params.xi[classroom.cohort_idx] + params.zeta[classroom.school_idx]
            + social)


def teacher_prob(params: TeacherParams, classroom: Classroom, t: StudentType) -> float:
    """Probability the teacher encourages a student of type t in this class."""
    if classroom.counts[t.index] < 1:
        raise ValueError(f"no observer of this type in the class (type index {t.index})")
    W = weight_matrix(classroom)
    return float(expit(_teacher_index(params, classroom, W)[t.index]))


def teacher_probs(params: TeacherParams, classroom: Classroom) -> np.ndarray:
    """Encouragement probabilities for all 24 types; NaN where absent."""
    W = weight_matrix(classroom)
    phi = expit(_teacher_index(params, classroom, W))
    phi[~classroom.present()] = np.nan
    return phi


def student_br(params: StudentParams, classroom: Classroom, t: StudentType,
               b: int, sigma: np.ndarray) -> float:
    """Best-response choice probability of type t given signal b and beliefs sigma."""
    if b not in (0, 1):
        raise ValueError(f"b must be 0 or 1, got {b!r}")
    w = weight_matrix(classroom)[t.index]
    social = float(np.dot(_lam_by_type(params.lam)[t.index] * w, sigma))
    idx = (float(TYPE_COVARIATES[t.index] @ params.beta) + b * params.alpha
           + params.kappa[classroom.cohort_idx] + params.gamma[classroom.school_idx]
           + social)
    return float(expit(idx))


@dataclass
class ContractionReport:
    """holds: row-sum condition met (metric <= 4); strict: metric < 4, which
    is what certifies a unique equilibrium. metric == 4 sits on the boundary."""

    holds: bool
    metric: float

    @property
    def strict(self) -> bool:
        return self.metric < CONTRACTION_BOUND


def contraction_check(params: StudentParams, classroom: Classroom) -> ContractionReport:
    """Worst-case weighted row sum of |lambda| over present observer types."""
    W = weight_matrix(classroom)
    rows = np.abs(_lam_by_type(params.lam)) * W
    metric = float(rows.sum(axis=1)[classroom.present()].max()) if classroom.N > 1 else 0.0
    return ContractionReport(holds=metric <= CONTRACTION_BOUND, metric=metric)


def jacobian_sigma(params: StudentParams, classroom: Classroom,
                   sigma: np.ndarray) -> np.ndarray:
    """Best-response Jacobian bound at beliefs sigma.

    Entry (t, u) is lambda_{tu} w_{tu} sigma_t (1 - sigma_t); rows and columns
    of absent types are zero. Its infinity norm is below 1 whenever the
    contraction metric is below 4.
    """
    sigma = np.asarray(sigma, dtype=float)
    W = weight_matrix(classroom)
    slope = sigma * (1.0 - sigma)
    J = _lam_by_type(params.lam) * W * slope[:, None]
    J[~classroom.present()] = 0.0
    return J


@dataclass
class EquilibriumResult:
    """Fixed point of the mixture best-response map for one classroom.

    sigma is the marginal choice probability per type; sigma_b0/sigma_b1
    condition on the teacher signal, and sigma = (1-phi) sigma_b0 + phi
    sigma_b1 holds exactly. Absent types carry NaN.
    """

    sigma: np.ndarray
    sigma_b0: np.ndarray
    sigma_b1: np.ndarray
    phi: np.ndarray
    iterations: int
    converged: bool
    sup_step: float
    contraction_metric: float
    present: np.ndarray

    @property
    def uniqueness_guaranteed(self) -> bool:
        return self.contraction_metric < CONTRACTION_BOUND


def solve_equilibrium_batch(idx0, idx1, phi, wlam, present, tol=1e-10,
                            max_iter=10000, damping=1.0, sigma0=None):
    """Vectorized fixed-point solve across a batch of classrooms.

    idx0/idx1: non-social logit indices without/with encouragement, (C, T).
    phi: encouragement probabilities, (C, T). wlam: weight-scaled lambda,
    (C, T, T). present: bool mask, (C, T). Entries of absent types are held
    at zero. Returns (sigma, sigma_b0, sigma_b1, iterations, converged,
    sup_step) where sup_step is the sup norm of the final best-response
    residual over present entries.
    """
    C, T = idx0.shape
    if sigma0 is None:
        # closed form of the no-interaction game as the starting point
        sigma = (1.0 - phi) * expit(idx0) + phi * expit(idx1)
    else:
        sigma = np.array(sigma0, dtype=float)
    sigma = np.where(present, sigma, 0.0)
    d = float(damping)
    prev_res = np.inf
    grow = 0
    for it in range(1, int(max_iter) + 1):
        social = np.einsum("ctu,cu->ct", wlam, sigma)
        s0 = expit(idx0 + social)
        s1 = expit(idx1 + social)
        new = (1.0 - phi) * s0 + phi * s1
        new = np.where(present, new, 0.0)
        res = float(np.max(np.abs(new - sigma))) if sigma.size else 0.0
        if res <= tol:
            s0 = np.where(present, s0, 0.0)
            s1 = np.where(present, s1, 0.0)
            return new, s0, s1, it, True, res
        if res > prev_res * (1.0 + 1e-12):
            grow += 1
            if grow >= 2:
                d = max(d / 2.0, 1.0 / 64.0)
                grow = 0
        else:
            grow = 0
        prev_res = res
        sigma = sigma + d * (new - sigma)
    return sigma, None, None, int(max_iter), False, prev_res


def classroom_arrays(tparams: TeacherParams, sparams: StudentParams,
                     classroom: Classroom):
    """Per-class ingredients for the batch solver."""
    W = weight_matrix(classroom)
    phi = expit(_teacher_index(tparams, classroom, W))
    base = (TYPE_COVARIATES @ sparams.beta
            + sparams.kappa[classroom.cohort_idx]
            + sparams.gamma[classroom.school_idx])
    wlam = _lam_by_type(sparams.lam) * W
    present = classroom.present()
    phi = np.where(present, phi, 0.0)
    return base, phi, wlam, present


def solve_equilibrium(tparams: TeacherParams, sparams: StudentParams,
                      classroom: Classroom, tol=1e-10, max_iter=10000,
                      damping=1.0, initial=None) -> EquilibriumResult:
    """Solve one classroom's equilibrium by damped successive substitution."""
    base, phi, wlam, present = classroom_arrays(tparams, sparams, classroom)
    idx0 = base[None, :]
    idx1 = (base + sparams.alpha)[None, :]
    sigma0 = None if initial is None else np.asarray(initial, dtype=float)[None, :]
    sigma, s0, s1, iters, ok, res = solve_equilibrium_batch(
        idx0, idx1, phi[None, :], wlam[None, :, :], present[None, :],
        tol=tol, max_iter=max_iter, damping=damping, sigma0=sigma0,
    )
    metric = contraction_check(sparams, classroom).metric
    if not ok:
        raise EquilibriumError(
            f"equilibrium failed to converge in classroom school={classroom.school_id} "
            f"cohort={classroom.cohort_id}: residual {res:.3e} after {iters} iterations "
            f"(contraction metric {metric:.3f})",
            last_sigma=sigma[0], residual=res,
        )
    nan_mask = ~present

    def mask(a):
        out = a[0].copy()
        out[nan_mask] = np.nan
        return out

    return EquilibriumResult(
        sigma=mask(sigma), sigma_b0=mask(s0), sigma_b1=mask(s1),
        phi=mask(np.where(present, phi, np.nan)[None, :]),
        iterations=iters, converged=ok, sup_step=res,
        contraction_metric=metric, present=present,
    )


def equilibrium_to_json(classroom: Classroom, result: EquilibriumResult) -> dict:
    """JSON-ready summary of one classroom's solved equilibrium."""
    idx = np.flatnonzero(result.present)
    return {
        "school_id": classroom.school_id,
        "cohort_id": classroom.cohort_id,
        "iterations": result.iterations,
        "contraction_metric": result.contraction_metric,
        "sigma": {str(i): float(result.sigma[i]) for i in idx},
        "phi": {str(i): float(result.phi[i]) for i in idx},
    }
