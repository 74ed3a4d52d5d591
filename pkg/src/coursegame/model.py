"""Core domain objects: student types, classrooms, parameters, and dataset I/O.

The student state space is race {White, Black, Hispanic} crossed with three
binary traits (female, high achiever, mother attended college), 24 feasible
types in all. Classrooms store per-type headcounts. The social weight a
student places on classmates of a given type is the leave-self-out share of
that type among the other N-1 students in the class.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from enum import IntEnum

import numpy as np

N_TYPES = 24
RACE_LABELS = ("W", "B", "H")
DEFAULT_ACHIEVER_LABEL = "Course grade: A"
MIN_SCHOOL_SIZE = 100  # smaller schools trigger a validation warning

CSV_HEADER = (
    "student_id", "school_id", "cohort_id", "race",
    "female", "achiever", "mother_college", "encouraged", "took_prep",
)


class Race(IntEnum):
    WHITE = 0
    BLACK = 1
    HISPANIC = 2

    @classmethod
    def from_label(cls, label: str) -> "Race":
        try:
            return cls(RACE_LABELS.index(label))
        except ValueError:
            raise ValueError(
                f"unknown race label {label!r}, expected one of {RACE_LABELS}"
            ) from None

    @property
    def label(self) -> str:
        return RACE_LABELS[int(self)]


@dataclass(frozen=True)
class StudentType:
    """One point of the 24-element type space."""

    race: Race
    female: int = 0
    achiever: int = 0
    mother_college: int = 0

    def __post_init__(self):
        object.__setattr__(self, "race", Race(self.race))
        for name in ("female", "achiever", "mother_college"):
            v = getattr(self, name)
            if v not in (0, 1, False, True):
                raise ValueError(f"{name} must be 0 or 1, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def index(self) -> int:
        return int(self.race) * 8 + self.female * 4 + self.achiever * 2 + self.mother_college

    @classmethod
    def from_index(cls, idx: int) -> "StudentType":
        if not 0 <= int(idx) < N_TYPES:
            raise ValueError(f"type index must be in [0, {N_TYPES - 1}], got {idx}")
        race, rest = divmod(int(idx), 8)
        return cls(Race(race), (rest >> 2) & 1, (rest >> 1) & 1, rest & 1)

    def covariates(self) -> np.ndarray:
        """Row (constant, Black, Hispanic, female, achiever, mother_college)."""
        return np.array([
            1.0,
            float(self.race == Race.BLACK),
            float(self.race == Race.HISPANIC),
            float(self.female),
            float(self.achiever),
            float(self.mother_college),
        ])


def type_index(t: StudentType) -> int:
    """Position of type t in the fixed 0..23 enumeration."""
    return t.index


def type_of_index(idx: int) -> StudentType:
    return StudentType.from_index(idx)


ALL_TYPES = tuple(StudentType.from_index(i) for i in range(N_TYPES))
TYPE_RACE = np.array([int(t.race) for t in ALL_TYPES])
TYPE_COVARIATES = np.stack([t.covariates() for t in ALL_TYPES])
RACE_ONE_HOT = np.eye(3)[TYPE_RACE]  # (24, 3)
N_COVARIATES = TYPE_COVARIATES.shape[1]


def covariate_names(achiever_label: str = DEFAULT_ACHIEVER_LABEL) -> tuple:
    """Labels for the covariate layout, in column order.

    The achiever trait's display label is configurable; the underlying bit
    is the same either way.
    """
    return ("Constant", "Black", "Hispanic", "Female", achiever_label,
            "Mother attended college")


@dataclass(frozen=True)
class Classroom:
    """A (school, cohort) cell with per-type headcounts.

    school_idx and cohort_idx locate the class in a SchoolSystem's sorted
    id lists; standalone classrooms default to position 0, which carries
    the normalized (zero) fixed effect.
    """

    school_id: int
    cohort_id: int
    counts: tuple
    school_idx: int = 0
    cohort_idx: int = 0

    def __post_init__(self):
        cnt = tuple(int(c) for c in self.counts)
        if len(cnt) != N_TYPES:
            raise ValueError(f"counts must have length {N_TYPES}, got {len(cnt)}")
        if any(c < 0 for c in cnt):
            raise ValueError("counts must be nonnegative")
        if sum(cnt) < 1:
            raise ValueError("classroom must contain at least one student")
        object.__setattr__(self, "counts", cnt)

    @property
    def N(self) -> int:
        return sum(self.counts)

    def counts_array(self) -> np.ndarray:
        return np.array(self.counts, dtype=float)

    def race_counts(self) -> np.ndarray:
        return RACE_ONE_HOT.T @ self.counts_array()

    def race_shares(self) -> np.ndarray:
        return self.race_counts() / self.N

    def present(self) -> np.ndarray:
        return self.counts_array() > 0


def class_weights(classroom: Classroom, t: StudentType) -> np.ndarray:
    """Leave-self-out classmate shares seen by a student of type t.

    Entry t' is (N_{t'} - 1{t'=t}) / (N - 1). A single-student class has no
    classmates and returns the all-zero vector.
    """
    counts = classroom.counts_array()
    if counts[t.index] < 1:
        raise ValueError(f"no observer of this type in the class (type index {t.index})")
    n = classroom.N
    if n == 1:
        return np.zeros(N_TYPES)
    w = counts.copy()
    w[t.index] -= 1.0
    return w / (n - 1)


def weight_matrix(classroom: Classroom) -> np.ndarray:
    """Stacked class_weights rows for every present type; absent rows are zero."""
    counts = classroom.counts_array()
    n = classroom.N
    out = np.zeros((N_TYPES, N_TYPES))
    if n == 1:
        return out
    present = counts > 0
    w = np.tile(counts, (N_TYPES, 1))
    np.fill_diagonal(w, counts - 1.0)
    out[present] = w[present] / (n - 1)
    return out


@dataclass(frozen=True)
class StudentRecord:
    """One student row; encouraged/took_prep are None until actions exist."""

    student_id: int
    school_id: int
    cohort_id: int
    type: StudentType
    encouraged: int | None = None
    took_prep: int | None = None

    def __post_init__(self):
        for name in ("encouraged", "took_prep"):
            v = getattr(self, name)
            if v is not None and v not in (0, 1):
                raise ValueError(f"{name} must be 0, 1 or None, got {v!r}")


@dataclass(frozen=True)
class SchoolSystem:
    """All classrooms of a state, with sorted school and cohort id registries."""

    classrooms: tuple
    school_ids: tuple
    cohort_ids: tuple

    @classmethod
    def from_classrooms(cls, classrooms) -> "SchoolSystem":
        rooms = sorted(classrooms, key=lambda c: (c.school_id, c.cohort_id))
        if not rooms:
            raise ValueError("school system needs at least one classroom")
        keys = [(c.school_id, c.cohort_id) for c in rooms]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (school_id, cohort_id) classroom")
        school_ids = tuple(sorted({c.school_id for c in rooms}))
        cohort_ids = tuple(sorted({c.cohort_id for c in rooms}))
        sidx = {s: i for i, s in enumerate(school_ids)}
        gidx = {g: i for i, g in enumerate(cohort_ids)}
        rooms = tuple(
            replace(c, school_idx=sidx[c.school_id], cohort_idx=gidx[c.cohort_id])
            for c in rooms
        )
        return cls(rooms, school_ids, cohort_ids)

    @classmethod
    def from_records(cls, records) -> "SchoolSystem":
        cells = {}
        for r in records:
            key = (r.school_id, r.cohort_id)
            if key not in cells:
                cells[key] = [0] * N_TYPES
            cells[key][r.type.index] += 1
        rooms = [Classroom(s, g, tuple(cnt)) for (s, g), cnt in cells.items()]
        return cls.from_classrooms(rooms)

    @property
    def S(self) -> int:
        return len(self.school_ids)

    @property
    def G(self) -> int:
        return len(self.cohort_ids)

    @property
    def n_students(self) -> int:
        return sum(c.N for c in self.classrooms)

    def school_index(self, school_id: int) -> int:
        return self.school_ids.index(school_id)

    def cohort_index(self, cohort_id: int) -> int:
        return self.cohort_ids.index(cohort_id)

    def counts_matrix(self) -> np.ndarray:
        return np.stack([c.counts_array() for c in self.classrooms])


def _check_effects(name: str, arr: np.ndarray):
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a nonempty 1-d array")
    if arr[0] != 0.0:
        raise ValueError(f"{name}[0] is the normalized effect and must be exactly 0")


def _check_race_matrix(name: str, arr: np.ndarray, zero_first_column: bool):
    if arr.shape != (3, 3):
        raise ValueError(f"{name} must be a 3x3 matrix (own race x classmate race)")
    if zero_first_column and np.any(arr[:, 0] != 0.0):
        raise ValueError(f"{name}[:, 0] is normalized against White classmates and must be 0")


@dataclass(frozen=True)
class TeacherParams:
    """Encouragement-equation parameters.

    delta: covariate coefficients (6,); xi: per-cohort effects with xi[0] = 0;
    zeta: per-school effects with zeta[0] = 0; rho: own-race x classmate-race
    social coefficients with the White-classmate column fixed at 0.
    """

    delta: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        for name in ("delta", "xi", "zeta", "rho"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.delta.shape != (N_COVARIATES,):
            raise ValueError(f"delta must have shape ({N_COVARIATES},)")
        _check_effects("xi", self.xi)
        _check_effects("zeta", self.zeta)
        _check_race_matrix("rho", self.rho, zero_first_column=True)


@dataclass(frozen=True)
class StudentParams:
    """Coursework-equation parameters.

    beta: covariate coefficients (6,); alpha: encouragement effect; kappa and
    gamma: cohort and school effects with index 0 normalized to 0; lam:
    own-race x classmate-race interaction coefficients (all nine free).
    """

    beta: np.ndarray
    alpha: float
    kappa: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("beta", "kappa", "gamma", "lam"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "alpha", float(self.alpha))
        if self.beta.shape != (N_COVARIATES,):
            raise ValueError(f"beta must have shape ({N_COVARIATES},)")
        _check_effects("kappa", self.kappa)
        _check_effects("gamma", self.gamma)
        _check_race_matrix("lam", self.lam, zero_first_column=False)


def fold_average_effects(params, system: SchoolSystem):
    """Replace cohort/school effects by their enrollment-weighted mean.

    The mean effect is folded into the intercept and the effect arrays are
    zeroed, so the result is a valid parameter object describing a state
    where every class carries the average unobserved heterogeneity.
    """
    sizes = np.array([c.N for c in system.classrooms], dtype=float)
    gi = np.array([c.cohort_idx for c in system.classrooms])
    si = np.array([c.school_idx for c in system.classrooms])
    if isinstance(params, TeacherParams):
        mean_fx = np.sum(sizes * (params.xi[gi] + params.zeta[si])) / sizes.sum()
        delta = params.delta.copy()
        delta[0] += mean_fx
        return TeacherParams(delta, np.zeros(1), np.zeros(1), params.rho)
    if isinstance(params, StudentParams):
        mean_fx = np.sum(sizes * (params.kappa[gi] + params.gamma[si])) / sizes.sum()
        beta = params.beta.copy()
        beta[0] += mean_fx
        return StudentParams(beta, params.alpha, np.zeros(1), np.zeros(1), params.lam)
    raise TypeError(f"unsupported parameter object {type(params)!r}")


@dataclass
class ValidationReport:
    errors: list
    warnings: list

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_dataset(records, system: SchoolSystem) -> ValidationReport:
    """Cross-check student records against classroom aggregates."""
    errors, warnings = [], []
    seen = set()
    cells = {(c.school_id, c.cohort_id): np.zeros(N_TYPES, dtype=int)
             for c in system.classrooms}
    for r in records:
        if r.student_id in seen:
            errors.append(f"duplicate student id {r.student_id}")
        seen.add(r.student_id)
        key = (r.school_id, r.cohort_id)
        if key not in cells:
            errors.append(
                f"student {r.student_id} references unknown classroom "
                f"school={r.school_id} cohort={r.cohort_id}"
            )
            continue
        cells[key][r.type.index] += 1
    for c in system.classrooms:
        got = cells[(c.school_id, c.cohort_id)]
        if not np.array_equal(got, np.array(c.counts)):
            errors.append(
                f"classroom school={c.school_id} cohort={c.cohort_id}: "
                f"record counts disagree with stored counts"
            )
        if c.N == 1:
            warnings.append(
                f"classroom school={c.school_id} cohort={c.cohort_id} has a "
                f"single student; social terms are zero"
            )
    school_sizes = {}
    for c in system.classrooms:
        school_sizes[c.school_id] = school_sizes.get(c.school_id, 0) + c.N
    for sid, n in sorted(school_sizes.items()):
        if n < MIN_SCHOOL_SIZE:
            warnings.append(f"school {sid} has {n} students (< {MIN_SCHOOL_SIZE})")
    return ValidationReport(errors, warnings)


def _parse_bit(field: str, name: str, line_no: int, optional: bool = False):
    if optional and field == "":
        return None
    if field not in ("0", "1"):
        raise ValueError(f"line {line_no}: {name} must be 0 or 1, got {field!r}")
    return int(field)


def load_records_csv(path) -> list:
    """Read student records; malformed rows are reported with line numbers."""
    problems = []
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise ValueError(
                f"{path}: bad header {header!r}, expected {','.join(CSV_HEADER)}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(f.strip() == "" for f in row):
                continue
            try:
                if len(row) != len(CSV_HEADER):
                    raise ValueError(
                        f"line {line_no}: expected {len(CSV_HEADER)} fields, got {len(row)}"
                    )
                sid, school, cohort = (int(row[0]), int(row[1]), int(row[2]))
                t = StudentType(
                    Race.from_label(row[3].strip()),
                    _parse_bit(row[4].strip(), "female", line_no),
                    _parse_bit(row[5].strip(), "achiever", line_no),
                    _parse_bit(row[6].strip(), "mother_college", line_no),
                )
                records.append(StudentRecord(
                    sid, school, cohort, t,
                    _parse_bit(row[7].strip(), "encouraged", line_no, optional=True),
                    _parse_bit(row[8].strip(), "took_prep", line_no, optional=True),
                ))
            except ValueError as exc:
                msg = str(exc)
                problems.append(msg if msg.startswith("line ") else f"line {line_no}: {msg}")
    if problems:
        raise ValueError(f"{path}: " + "; ".join(problems))
    return records


def write_records_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([
                r.student_id, r.school_id, r.cohort_id, r.type.race.label,
                r.type.female, r.type.achiever, r.type.mother_college,
                "" if r.encouraged is None else r.encouraged,
                "" if r.took_prep is None else r.took_prep,
            ])


def system_to_json(system: SchoolSystem) -> dict:
    return {
        "classrooms": [
            {"school_id": c.school_id, "cohort_id": c.cohort_id, "counts": list(c.counts)}
            for c in system.classrooms
        ]
    }


def system_from_json(obj: dict) -> SchoolSystem:
    rooms = [
        Classroom(int(c["school_id"]), int(c["cohort_id"]), tuple(c["counts"]))
        for c in obj["classrooms"]
    ]
    return SchoolSystem.from_classrooms(rooms)


def save_system(path, system: SchoolSystem):
    with open(path, "w") as fh:
        json.dump(system_to_json(system), fh, indent=1)


def load_system(path) -> SchoolSystem:
    with open(path) as fh:
        return system_from_json(json.load(fh))
