"""Small builders shared across test modules."""
import numpy as np

from coursegame.model import (
    Classroom, N_TYPES, SchoolSystem, StudentParams, StudentRecord,
    StudentType, TeacherParams,
)


def make_room(counts_by_index, school=0, cohort=0):
    counts = [0] * N_TYPES
    for t, c in counts_by_index.items():
        counts[t] = int(c)
    return Classroom(school_id=school, cohort_id=cohort, counts=tuple(counts))


def make_system(rooms):
    return SchoolSystem.from_classrooms(rooms)


def teacher_params(delta=None, rho=None, S=1, G=1):
    d = np.zeros(6) if delta is None else np.asarray(delta, dtype=float)
    r = np.zeros((3, 3)) if rho is None else np.asarray(rho, dtype=float)
    return TeacherParams(d, np.zeros(G), np.zeros(S), r)


def student_params(beta=None, alpha=0.0, lam=None, S=1, G=1):
    b = np.zeros(6) if beta is None else np.asarray(beta, dtype=float)
    l = np.zeros((3, 3)) if lam is None else np.asarray(lam, dtype=float)
    return StudentParams(b, alpha, np.zeros(G), np.zeros(S), l)


def records_for_system(system, actions=None):
    """One record per student; actions maps student_id to (b, a) or None."""
    out = []
    sid = 0
    for room in system.classrooms:
        for t in range(N_TYPES):
            for _ in range(room.counts[t]):
                b, a = (None, None) if actions is None else actions(sid)
                out.append(StudentRecord(sid, room.school_id, room.cohort_id,
                                         StudentType.from_index(t), b, a))
                sid += 1
    return out


def hand_instance_system():
    """Two equal one-type-per-race schools at 75/25 and 25/75."""
    return make_system([
        make_room({0: 75, 8: 25}, school=0),
        make_room({0: 25, 8: 75}, school=1),
    ])
