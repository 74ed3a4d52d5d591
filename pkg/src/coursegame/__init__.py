"""Classroom coursework-choice games: equilibrium, estimation, segregation,
reassignment counterfactuals, and simulation."""

from .model import (
    ALL_TYPES, N_TYPES, Classroom, Race, SchoolSystem, StudentParams,
    StudentRecord, StudentType, TeacherParams, class_weights, covariate_names,
    load_records_csv, type_index, type_of_index, validate_dataset,
    weight_matrix, write_records_csv,
)
from .game import (
    ContractionReport, EquilibriumError, EquilibriumResult, contraction_check,
    jacobian_sigma, logistic, solve_equilibrium, student_br, teacher_prob,
)
from .segregation import EntropyReport, entropy_index, school_entropy, state_entropy
from .estimation import (
    FitResult, SeparationError, estimate_student, estimate_teacher,
    marginal_effects_composition, marginal_effects_covariate, prepare_dataset,
    standard_errors, student_loglik, teacher_loglik,
)
from .reassign import (
    ReassignmentProblem, ReassignmentSolution, attainable_entropy_range,
    round_assignment, solve_reassignment,
)
from .simulate import (
    SimConfig, canonical_params, counterfactual_run, gen_population,
    simulate_play, smooth_curve,
)

__version__ = "0.1.0"
