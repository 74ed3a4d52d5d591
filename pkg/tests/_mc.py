"""Monte Carlo harness shared by the recovery and falsification tests.

The design: 100 schools x 4 cohorts, school race mixes drawn from a loose
Dirichlet around a balanced state (so classroom composition spans the
simplex, which is what pins the race-interaction blocks), classroom mixes
jittered around their school, and per-class trait shares drawn from wide
uniform ranges so choice rates move independently of composition.
"""
from dataclasses import replace

import numpy as np
from scipy.stats import chi2

from coursegame.estimation import (
    estimate_student, estimate_teacher, prepare_dataset, standard_errors,
)
from coursegame.simulate import (
    SimConfig, canonical_params, gen_population, simulate_play,
)

N_SCHOOLS = 100
N_COHORTS = 4
STATE_MIX = np.array([0.34, 0.33, 0.33])


def _school_mix(seed):
    rng = np.random.default_rng(1000 + seed)
    return rng.dirichlet(5.0 * STATE_MIX, size=N_SCHOOLS)


def mc_config(seed, students_per_class):
    return SimConfig(
        n_schools=N_SCHOOLS, cohorts_per_school=N_COHORTS,
        class_size=students_per_class, race_shares=tuple(STATE_MIX),
        school_race_shares=_school_mix(seed), class_share_concentration=12.0,
        trait_shares=(0.5, 0.35, 0.4),
        trait_ranges=((0.4, 0.6), (0.05, 0.70), (0.10, 0.70)),
    )


def _simulate(seed, students_per_class, lam_zero=False):
    teacher, student = canonical_params(N_SCHOOLS, N_COHORTS)
    if lam_zero:
        student = replace(student, lam=np.zeros((3, 3)))
    records, system = gen_population(mc_config(seed, students_per_class), seed)
    records = simulate_play(records, system, teacher, student, seed=seed)
    return prepare_dataset(records, system), teacher, student


def run_recovery_seed(seed, students_per_class):
    """Two-step fit on one synthetic draw; absolute errors per block."""
    data, teacher, student = _simulate(seed, students_per_class)
    tfit = estimate_teacher(data, tol=1e-5)
    sfit = estimate_student(data, tfit.params, tol=1e-5, conditional=True)
    return {
        "delta": np.abs(tfit.params.delta - teacher.delta),
        "rho": np.abs((tfit.params.rho - teacher.rho)[:, 1:]).ravel(),
        "beta_alpha": np.abs(np.concatenate(
            [sfit.params.beta - student.beta,
             [sfit.params.alpha - student.alpha]])),
        "lam": np.abs(sfit.params.lam - student.lam),
        "converged": tfit.converged and sfit.converged,
    }


def run_lamzero_seed(seed, students_per_class=150):
    """Fit on data generated without social interactions; significance of
    the interaction block at the two-standard-error bar, plus a joint Wald
    statistic for context."""
    data, _, _ = _simulate(seed, students_per_class, lam_zero=True)
    tfit = estimate_teacher(data, tol=1e-5)
    sfit = estimate_student(data, tfit.params, tol=1e-5, conditional=True)
    se = standard_errors(sfit, data, teacher=tfit.params)
    lam_hat = sfit.params.lam.T.ravel()
    out = {"seed": seed, "se_ok": se.ok, "insig": False, "n_exceed": 9,
           "wald": np.nan, "wald_p": np.nan}
    if se.ok:
        se_lam = se.se[-9:]
        exceed = np.abs(lam_hat) > 2.0 * se_lam
        cov_lam = se.cov[-9:, -9:]
        wald = float(lam_hat @ np.linalg.solve(cov_lam, lam_hat))
        out.update(insig=bool(~exceed.any()), n_exceed=int(exceed.sum()),
                   wald=wald, wald_p=float(chi2.sf(wald, 9)))
    return out
