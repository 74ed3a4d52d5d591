"""Domain objects, weights, parameter containers, and dataset I/O."""
import json

import numpy as np
import pytest

from _helpers import make_room, make_system, records_for_system
from coursegame.model import (
    ALL_TYPES, CSV_HEADER, N_TYPES, Classroom, Race, SchoolSystem,
    StudentParams, StudentRecord, StudentType, TeacherParams, class_weights,
    fold_average_effects, load_records_csv, load_system, save_system,
    system_from_json, system_to_json, type_index, type_of_index,
    validate_dataset, weight_matrix, write_records_csv,
)


def test_type_index_corners():
    assert type_index(StudentType(Race.WHITE, 0, 0, 0)) == 0
    assert type_index(StudentType(Race.HISPANIC, 1, 1, 1)) == 23
    assert type_index(StudentType(Race.BLACK, 1, 0, 1)) == 13


def test_type_index_roundtrip():
    for i in range(N_TYPES):
        t = type_of_index(i)
        assert type_index(t) == i
        assert ALL_TYPES[i] == t
    with pytest.raises(ValueError):
        type_of_index(24)
    with pytest.raises(ValueError):
        type_of_index(-1)


def test_type_validation():
    with pytest.raises(ValueError):
        StudentType(Race.WHITE, 2, 0, 0)
    with pytest.raises(ValueError):
        StudentType(5, 0, 0, 0)


def test_covariate_row_layout():
    t = StudentType(Race.BLACK, 1, 0, 1)
    assert np.array_equal(t.covariates(), [1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    t = StudentType(Race.HISPANIC, 0, 1, 0)
    assert np.array_equal(t.covariates(), [1.0, 0.0, 1.0, 0.0, 1.0, 0.0])


def test_class_weights_two_types():
    room = make_room({0: 3, 8: 2})
    w = class_weights(room, StudentType.from_index(0))
    assert w[0] == pytest.approx(2 / 4)
    assert w[8] == pytest.approx(2 / 4)
    assert w.sum() == pytest.approx(1.0)


def test_class_weights_homogeneous():
    w = class_weights(make_room({5: 5}), StudentType.from_index(5))
    assert w[5] == 1.0
    assert w.sum() == 1.0


def test_class_weights_singleton_class_is_zero():
    w = class_weights(make_room({3: 1}), StudentType.from_index(3))
    assert np.array_equal(w, np.zeros(N_TYPES))


def test_class_weights_absent_observer_rejected():
    with pytest.raises(ValueError, match="no observer"):
        class_weights(make_room({0: 4}), StudentType.from_index(8))


def test_weight_matrix_matches_per_type_weights():
    room = make_room({0: 3, 8: 2, 17: 4})
    W = weight_matrix(room)
    for t in (0, 8, 17):
        assert np.allclose(W[t], class_weights(room, StudentType.from_index(t)))
        assert W[t].sum() == pytest.approx(1.0)
    absent = np.setdiff1d(np.arange(N_TYPES), [0, 8, 17])
    assert np.all(W[absent] == 0.0)


def test_classroom_validation():
    with pytest.raises(ValueError):
        Classroom(0, 0, tuple([1] * 10))
    with pytest.raises(ValueError):
        Classroom(0, 0, tuple([-1] + [1] * 23))
    with pytest.raises(ValueError):
        Classroom(0, 0, tuple([0] * N_TYPES))


def test_classroom_race_aggregates():
    room = make_room({0: 6, 8: 3, 16: 1})
    assert np.array_equal(room.race_counts(), [6.0, 3.0, 1.0])
    assert np.allclose(room.race_shares(), [0.6, 0.3, 0.1])
    assert room.N == 10


def test_teacher_params_normalizations():
    ok = TeacherParams(np.zeros(6), np.zeros(2), np.zeros(3), np.zeros((3, 3)))
    assert ok.xi[0] == 0.0
    with pytest.raises(ValueError, match="xi"):
        TeacherParams(np.zeros(6), np.array([0.1, 0.0]), np.zeros(1), np.zeros((3, 3)))
    with pytest.raises(ValueError, match="zeta"):
        TeacherParams(np.zeros(6), np.zeros(1), np.array([1.0]), np.zeros((3, 3)))
    rho = np.zeros((3, 3))
    rho[1, 0] = 0.2
    with pytest.raises(ValueError, match="rho"):
        TeacherParams(np.zeros(6), np.zeros(1), np.zeros(1), rho)
    with pytest.raises(ValueError, match="delta"):
        TeacherParams(np.zeros(5), np.zeros(1), np.zeros(1), np.zeros((3, 3)))


def test_student_params_lam_first_column_free():
    lam = np.full((3, 3), 0.7)
    p = StudentParams(np.zeros(6), 0.1, np.zeros(1), np.zeros(1), lam)
    assert np.all(p.lam == 0.7)
    with pytest.raises(ValueError, match="kappa"):
        StudentParams(np.zeros(6), 0.0, np.array([0.3]), np.zeros(1), lam)


def test_school_system_sorting_and_indices():
    rooms = [make_room({0: 2}, school=7, cohort=1),
             make_room({0: 2}, school=2, cohort=0),
             make_room({0: 2}, school=7, cohort=0)]
    system = make_system(rooms)
    assert system.school_ids == (2, 7)
    assert system.cohort_ids == (0, 1)
    assert [c.school_id for c in system.classrooms] == [2, 7, 7]
    assert system.classrooms[0].school_idx == 0
    assert system.classrooms[1].school_idx == 1
    assert system.classrooms[2].cohort_idx == 1
    assert system.n_students == 6


def test_school_system_duplicate_cell_rejected():
    with pytest.raises(ValueError, match="duplicate"):
        make_system([make_room({0: 1}), make_room({1: 1})])


def test_from_records_matches_counts():
    system = make_system([make_room({0: 3, 9: 2}, school=0),
                          make_room({4: 4}, school=1)])
    records = records_for_system(system)
    rebuilt = SchoolSystem.from_records(records)
    assert rebuilt.classrooms == system.classrooms


def test_fold_average_effects_weighted_mean():
    rooms = [make_room({0: 30}, school=0), make_room({0: 10}, school=1)]
    system = make_system(rooms)
    tp = TeacherParams(np.zeros(6), np.zeros(1), np.array([0.0, 2.0]),
                       np.zeros((3, 3)))
    folded = fold_average_effects(tp, system)
    # 30 students at effect 0, 10 at effect 2
    assert folded.delta[0] == pytest.approx(0.5)
    assert folded.xi.size == 1 and folded.zeta.size == 1
    sp = StudentParams(np.zeros(6), 0.3, np.array([0.0]),
                       np.array([0.0, 2.0]), np.zeros((3, 3)))
    sfold = fold_average_effects(sp, system)
    assert sfold.beta[0] == pytest.approx(0.5)
    assert sfold.alpha == 0.3
    with pytest.raises(TypeError):
        fold_average_effects(object(), system)


def test_validate_dataset_consistent():
    system = make_system([make_room({0: 60, 8: 60}, school=0)])
    report = validate_dataset(records_for_system(system), system)
    assert report.ok and not report.errors


def test_validate_dataset_unknown_classroom():
    system = make_system([make_room({0: 120}, school=0)])
    records = records_for_system(system)
    bad = StudentRecord(999, 5, 0, StudentType.from_index(0))
    report = validate_dataset(records + [bad], system)
    assert any("unknown classroom" in e for e in report.errors)


def test_validate_dataset_small_school_warns_but_passes():
    system = make_system([make_room({0: 40}, school=0)])
    report = validate_dataset(records_for_system(system), system)
    assert report.ok
    assert any("40 students" in w for w in report.warnings)


def test_validate_dataset_duplicate_id():
    system = make_system([make_room({0: 2}, school=0)])
    r = records_for_system(system)
    report = validate_dataset([r[0], r[0]], system)
    assert any("duplicate" in e for e in report.errors)


def test_csv_roundtrip(tmp_path):
    system = make_system([make_room({0: 2, 13: 1}, school=0),
                          make_room({23: 2}, school=1)])
    records = records_for_system(
        system, actions=lambda sid: (sid % 2, (sid + 1) % 2))
    path = tmp_path / "records.csv"
    write_records_csv(path, records)
    assert load_records_csv(path) == records


def test_csv_missing_actions_roundtrip(tmp_path):
    system = make_system([make_room({5: 3})])
    records = records_for_system(system)
    path = tmp_path / "records.csv"
    write_records_csv(path, records)
    back = load_records_csv(path)
    assert all(r.encouraged is None and r.took_prep is None for r in back)


def test_csv_malformed_rows_report_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(
        ",".join(CSV_HEADER) + "\n"
        "0,0,0,W,0,0,0,1,1\n"
        "1,0,0,Q,0,0,0,1,1\n"
        "2,0,0,B,7,0,0,1,1\n")
    with pytest.raises(ValueError) as err:
        load_records_csv(path)
    assert "line 3" in str(err.value) and "line 4" in str(err.value)


def test_csv_bad_header_rejected(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="bad header"):
        load_records_csv(path)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ValueError, match="empty"):
        load_records_csv(empty)


def test_system_json_roundtrip(tmp_path):
    system = make_system([make_room({0: 5, 8: 2}, school=0, cohort=1),
                          make_room({16: 3}, school=4, cohort=0)])
    path = tmp_path / "system.json"
    save_system(path, system)
    assert load_system(path) == system
    obj = json.loads(json.dumps(system_to_json(system)))
    assert system_from_json(obj) == system


def test_race_labels():
    assert Race.from_label("H") == Race.HISPANIC
    assert Race.BLACK.label == "B"
    with pytest.raises(ValueError, match="unknown race"):
        Race.from_label("X")
