"""Command line interface.

Every subcommand reads optional defaults from a JSON config file given with
--config; flags given on the command line win. Exit codes: 0 success, 1 bad
input, 2 numerical failure (non-convergence, separation, failed constraint
solve, infeasible target).
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .estimation import (
    SeparationError,
    estimate_student,
    estimate_teacher,
    fit_from_json,
    fit_to_json,
    prepare_dataset,
    standard_errors,
)
from .game import EquilibriumError
from .model import (
    SchoolSystem,
    load_records_csv,
    load_system,
    save_system,
    system_to_json,
    validate_dataset,
    write_records_csv,
)
from .reassign import (
    InfeasibleTargetError,
    ReassignmentError,
    ReassignmentProblem,
    attainable_entropy_range,
    round_assignment,
    solve_reassignment,
)
from .segregation import entropy_index
from .simulate import (
    SimConfig,
    canonical_params,
    counterfactual_run,
    gen_population,
    simulate_play,
    smooth_curve,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad flags; we reserve 2 for numerics."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _triple(text: str) -> tuple:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _size_spec(text: str):
    if ":" in text:
        lo, hi = text.split(":", 1)
        return (int(lo), int(hi))
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="coursegame",
                description="Course-taking equilibrium toolkit")
    p.add_argument("--config", help="JSON file with per-subcommand defaults")
    p.add_argument("--threads", type=int,
                   help="cap the linear-algebra worker threads")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("simulate", help="generate a synthetic population and play")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--schools", type=int)
    sp.add_argument("--cohorts", type=int)
    sp.add_argument("--class-size", type=_size_spec, dest="class_size",
                    help="students per class, N or LO:HI")
    sp.add_argument("--race-shares", type=_triple, dest="race_shares")
    sp.add_argument("--concentration", type=float,
                    help="class-level mix jitter; larger stays closer to the school mix")
    sp.add_argument("--no-actions", action="store_true",
                    help="emit the population without simulated play")
    sp.add_argument("--out", help="records CSV path")
    sp.add_argument("--system-out", dest="system_out", help="system JSON path")

    for name, hlp in (("estimate-teacher", "fit the encouragement logit"),
                      ("estimate-student", "fit the coursework equation")):
        ep = sub.add_parser(name, help=hlp)
        ep.add_argument("--data", help="records CSV")
        ep.add_argument("--system", help="system JSON (optional consistency check)")
        ep.add_argument("--tol", type=float)
        ep.add_argument("--se", action="store_true", help="also report standard errors")
        ep.add_argument("--out", help="fit JSON path")
        if name == "estimate-student":
            ep.add_argument("--teacher-fit", dest="teacher_fit",
                            help="step-one fit JSON")
            ep.add_argument("--conditional", action="store_true",
                            help="condition on observed encouragement")
            ep.add_argument("--grad", choices=("analytic", "fd"))

    np_ = sub.add_parser("entropy", help="segregation index of a dataset")
    np_.add_argument("--data", help="records CSV")
    np_.add_argument("--system", help="system JSON")
    np_.add_argument("--unit", choices=("classroom", "school"))
    np_.add_argument("--out")

    rp = sub.add_parser("reassign", help="entropy-constrained reassignment")
    rp.add_argument("--data", help="records CSV")
    rp.add_argument("--system", help="system JSON")
    rp.add_argument("--target", "--target-H", dest="target", type=float,
                    help="target segregation index")
    rp.add_argument("--seed", type=int)
    rp.add_argument("--fractional", action="store_true",
                    help="report the fractional optimum without rounding")
    rp.add_argument("--out", help="solution JSON path")
    rp.add_argument("--map-out", dest="map_out",
                    help="per-student moves CSV (needs --data)")

    cp = sub.add_parser("counterfactual", help="outcomes along a segregation grid")
    cp.add_argument("--data", help="records CSV")
    cp.add_argument("--system", help="system JSON")
    cp.add_argument("--teacher-fit", dest="teacher_fit")
    cp.add_argument("--student-fit", dest="student_fit")
    cp.add_argument("--targets", help="comma-separated index levels")
    cp.add_argument("--n-targets", dest="n_targets", type=int)
    cp.add_argument("--seed", type=int)
    cp.add_argument("--fractional", action="store_true")
    cp.add_argument("--no-figure-filter", dest="no_figure_filter", action="store_true",
                    help="keep classes with three substantial race groups")
    cp.add_argument("--out", help="curve CSV path")

    mp = sub.add_parser("smooth", help="kernel-smooth a counterfactual curve")
    mp.add_argument("--in", dest="infile", help="curve CSV from counterfactual")
    mp.add_argument("--race", choices=("W", "B", "H"))
    mp.add_argument("--column", choices=("phi", "sigma"))
    mp.add_argument("--bandwidth", type=float)
    mp.add_argument("--out")

    vp = sub.add_parser("validate", help="check a dataset for consistency")
    vp.add_argument("--data", help="records CSV")
    vp.add_argument("--system", help="system JSON")
    return p


def _load_config(path):
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object keyed by subcommand")
    return cfg


def _merged(args, config):
    """Config supplies defaults; explicit flags (non-None, non-False) win."""
    out = dict(config.get(args.command, {}))
    for k, v in vars(args).items():
        if k in ("command", "config", "threads"):
            continue
        if v is None or v is False:
            out.setdefault(k.replace("-", "_"), v)
        else:
            out[k.replace("-", "_")] = v
    return out


def _require(opt, key, hint):
    if opt.get(key) is None:
        raise ValueError(f"missing required option: {hint}")
    return opt[key]


def _load_data(opt):
    if opt.get("data"):
        records = load_records_csv(opt["data"])
        system = SchoolSystem.from_records(records)
        if opt.get("system"):
            stored = load_system(opt["system"])
            if stored.classrooms != system.classrooms:
                raise ValueError("records do not match the supplied system")
        return records, system
    if opt.get("system"):
        return None, load_system(opt["system"])
    raise ValueError("either --data or --system is required")


def _emit(payload: dict, out_path):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"wrote {out_path}")
    else:
        print(text)


def _cmd_simulate(opt) -> int:
    seed = _require(opt, "seed", "--seed")
    config = SimConfig(
        n_schools=opt.get("schools") or 20,
        cohorts_per_school=opt.get("cohorts") or 2,
        class_size=opt.get("class_size") or 100,
        race_shares=opt.get("race_shares") or (0.54, 0.22, 0.24),
        class_share_concentration=opt.get("concentration", 25.0),
    )
    records, system = gen_population(config, seed=seed)
    if not opt.get("no_actions"):
        teacher, student = canonical_params(config.n_schools,
                                            config.cohorts_per_school)
        records = simulate_play(records, system, teacher, student, seed=seed)
    out = opt.get("out") or "records.csv"
    write_records_csv(out, records)
    print(f"wrote {out} ({len(records)} students, {len(system.classrooms)} classes)")
    if opt.get("system_out"):
        save_system(opt["system_out"], system)
        print(f"wrote {opt['system_out']}")
    return EXIT_OK


def _cmd_estimate_teacher(opt) -> int:
    records, system = _load_data(opt)
    if records is None:
        raise ValueError("--data with student records is required for estimation")
    data = prepare_dataset(records, system)
    fit = estimate_teacher(data, tol=opt.get("tol") or 1e-6)
    if opt.get("se"):
        fit = _with_se(fit, data)
    _emit(fit_to_json(fit), opt.get("out"))
    return EXIT_OK


def _cmd_estimate_student(opt) -> int:
    records, system = _load_data(opt)
    if records is None:
        raise ValueError("--data with student records is required for estimation")
    data = prepare_dataset(records, system)
    tfit = _load_fit(_require(opt, "teacher_fit", "--teacher-fit"), "teacher")
    fit = estimate_student(data, tfit.params, tol=opt.get("tol") or 1e-6,
                           conditional=bool(opt.get("conditional")),
                           grad=opt.get("grad") or "analytic")
    if opt.get("se"):
        fit = _with_se(fit, data, teacher=tfit.params)
    _emit(fit_to_json(fit), opt.get("out"))
    return EXIT_OK


def _with_se(fit, data, teacher=None):
    import dataclasses

    se = standard_errors(fit, data, teacher=teacher)
    if se.se is None:
        print(f"standard errors unavailable: {se.message}", file=sys.stderr)
        return fit
    return dataclasses.replace(fit, se=se.se)


def _load_fit(path, expect: str):
    with open(path, "r", encoding="utf-8") as fh:
        fit = fit_from_json(json.load(fh))
    if fit.model != expect:
        raise ValueError(f"{path} holds a {fit.model} fit, expected {expect}")
    return fit


def _cmd_entropy(opt) -> int:
    _, system = _load_data(opt)
    report = entropy_index(system, unit=opt.get("unit") or "classroom")
    _emit(report.to_json(), opt.get("out"))
    return EXIT_OK


def _cmd_reassign(opt) -> int:
    records, system = _load_data(opt)
    target = _require(opt, "target", "--target")
    prob = ReassignmentProblem.from_system(system, target)
    sol = solve_reassignment(prob)
    payload = sol.to_json()
    payload["attainable"] = list(attainable_entropy_range(prob))
    if not opt.get("fractional"):
        seed = _require(opt, "seed", "--seed (rounding is randomized)")
        rounded = round_assignment(sol.shares, system, seed=seed,
                                   records=records)
        payload["counts"] = [[int(v) for v in row] for row in rounded.counts]
        if opt.get("map_out"):
            if rounded.moves is None:
                raise ValueError("--map-out needs --data with student records")
            with open(opt["map_out"], "w", encoding="utf-8") as fh:
                fh.write("student_id,old_school,new_school\n")
                for sid, old, new in rounded.moves:
                    fh.write(f"{sid},{old},{new}\n")
            print(f"wrote {opt['map_out']} ({len(rounded.moves)} moves)")
    _emit(payload, opt.get("out"))
    return EXIT_OK


def _cmd_counterfactual(opt) -> int:
    _, system = _load_data(opt)
    tfit = _load_fit(_require(opt, "teacher_fit", "--teacher-fit"), "teacher")
    sfit = _load_fit(_require(opt, "student_fit", "--student-fit"), "student")
    targets = None
    if opt.get("targets"):
        targets = [float(v) for v in str(opt["targets"]).split(",")]
    fractional = bool(opt.get("fractional"))
    seed = 0
    if not fractional:
        seed = _require(opt, "seed", "--seed (rounding is randomized)")
    curve = counterfactual_run(
        system, tfit.params, sfit.params, targets=targets,
        n_targets=opt.get("n_targets") or 9, fractional=fractional, seed=seed,
        figure_filter=not opt.get("no_figure_filter"))
    out = opt.get("out") or "counterfactual.csv"
    curve.to_csv(out)
    print(f"wrote {out} (baseline index {curve.baseline_h:.6f}, "
          f"attainable up to {curve.attainable[1]:.6f})")
    return EXIT_OK


def _cmd_smooth(opt) -> int:
    infile = _require(opt, "infile", "--in")
    race = opt.get("race") or "W"
    column = opt.get("column") or "sigma"
    xs, ys, ws = [], [], []
    with open(infile, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        try:
            li, ri = header.index("level"), header.index("race")
            ci, wi = header.index(column), header.index("weight")
        except ValueError:
            raise ValueError(f"{infile} lacks level/race/{column}/weight columns")
        for line in fh:
            parts = line.strip().split(",")
            if parts[ri] != race:
                continue
            xs.append(float(parts[li]))
            ys.append(float(parts[ci]))
            ws.append(float(parts[wi]))
    if not xs:
        raise ValueError(f"no rows for race {race} in {infile}")
    kept, fitted = smooth_curve(np.array(xs), np.array(ys),
                                bandwidth=opt.get("bandwidth") or 0.05,
                                weights=np.array(ws))
    lines = "".join(f"{x!r},{y!r}\n" for x, y in zip(kept, fitted))
    if opt.get("out"):
        with open(opt["out"], "w", encoding="utf-8") as fh:
            fh.write(f"level,{column}\n" + lines)
        print(f"wrote {opt['out']}")
    else:
        print(f"level,{column}\n" + lines, end="")
    return EXIT_OK


def _cmd_validate(opt) -> int:
    records, system = _load_data(opt)
    if records is None:
        raise ValueError("--data with student records is required")
    report = validate_dataset(records, system)
    for w in report.warnings:
        print(f"warning: {w}")
    for e in report.errors:
        print(f"error: {e}", file=sys.stderr)
    if not report.ok:
        return EXIT_INPUT
    print(f"ok: {len(records)} students in {len(system.classrooms)} classes, "
          f"{system.S} schools, {system.G} cohorts")
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "estimate-teacher": _cmd_estimate_teacher,
    "estimate-student": _cmd_estimate_student,
    "entropy": _cmd_entropy,
    "reassign": _cmd_reassign,
    "counterfactual": _cmd_counterfactual,
    "smooth": _cmd_smooth,
    "validate": _cmd_validate,
}


def _cap_threads(n):
    if n is None:
        return
    if n < 1:
        raise ValueError("--threads must be a positive integer")
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n)
    except ImportError:
        import os
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT
    try:
        _cap_threads(args.threads)
        config = _load_config(args.config)
        opt = _merged(args, config)
        return _HANDLERS[args.command](opt)
    except (InfeasibleTargetError, EquilibriumError, ReassignmentError,
            SeparationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
