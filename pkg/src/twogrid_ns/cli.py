"""Command-line driver: single runs, convergence studies and benchmarks.

Configuration is plain ``key=value`` text (several pairs per line allowed,
``#`` starts a comment); command-line flags override file values.

    twogrid-ns study --example 1 --levels 4,8,16 --krule h2 --out rates.csv
    twogrid-ns bench --levels 16 --tfinal 0.25
    twogrid-ns solve --levels 3:9 --mode onegrid
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from dataclasses import dataclass, field, replace

from . import mms
from .twogrid import MODES, SimulationConfig, StepFailure, TwoGridSolver, coarse_for, level, parse_krule

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

STUDY_COLUMNS = [
    "level", "n_H", "n_h", "H", "h", "k", "N",
    "err_l2_vel", "rate_l2_vel", "err_h1_vel", "rate_h1_vel", "err_l2_p", "rate_l2_p",
    "wall_seconds",
]

BENCH_COLUMNS = [
    "level", "n_H", "n_h", "k", "steps",
    "twogrid_seconds", "onegrid_seconds",
    "twogrid_err_l2_vel", "onegrid_err_l2_vel",
    "twogrid_fine_factorizations_per_step", "onegrid_fine_factorizations_per_step",
    "onegrid_mean_newton_iterations",
]


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class StudyFailure(RuntimeError):
    def __init__(self, level_index, cause):
        super().__init__(f"level {level_index} failed: {cause}")
        self.level = level_index
        self.cause = cause


@dataclass
class StudyPlan:
    levels: list  # (n_H, n_h, k), coarsest first
    example: int = 1
    T: float = 1.0
    mode: str = "twogrid"
    nu: float = 1.0
    krule: str = "h2"
    newton_tol: float = 1e-10
    newton_max_iter: int = 25
    out: str | None = None

    def config(self, index: int, **changes) -> SimulationConfig:
        n_H, n_h, k = self.levels[index]
        cfg = SimulationConfig(
            n_h=n_h, n_H=n_H, k=k, krule=self.krule, nu=self.nu, T=self.T, example=self.example,
            newton_tol=self.newton_tol, newton_max_iter=self.newton_max_iter, mode=self.mode,
        )
        return replace(cfg, **changes) if changes else cfg


DEFAULTS = {
    "example": "1",
    "levels": "4,8,16",
    "krule": "h2",
    "tfinal": "1",
    "mode": "twogrid",
    "nu": "1",
    "newton_tol": "1e-10",
    "newton_max_iter": "25",
}
KEYS = set(DEFAULTS) | {"out"}


def _parse_text(text: str) -> dict:
    values, where = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        for token in line.split():
            if "=" not in token:
                raise ConfigError(f"expected key=value, got {token!r}", lineno)
            key, value = token.split("=", 1)
            key = key.strip().lower()
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}", lineno)
            values[key] = value.strip()
            where[key] = lineno
    return values, where


def _parse_levels(spec: str, krule: str):
    levels = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            n_H, n_h = (int(v) for v in item.split(":", 1))
        else:
            n_h = int(item)
            n_H = coarse_for(n_h)
        levels.append((n_H, n_h, parse_krule(krule, n_h)))
    if not levels:
        raise ValueError("no levels given")
    fine = [lv[1] for lv in levels]
    if any(b <= a for a, b in zip(fine, fine[1:])):
        raise ValueError(f"levels must be ordered by decreasing h, got {spec!r}")
    return levels


def parse_config(text: str = "", overrides: dict | None = None) -> StudyPlan:
    """Build a validated plan from config text plus flag overrides."""
    values, where = _parse_text(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in KEYS:
                raise ConfigError(f"unknown key {key!r}")
            values[key] = str(value)
            where[key] = None
    merged = {**DEFAULTS, **values}

    def fail(key, message):
        raise ConfigError(f"{key}: {message}", where.get(key))

    if merged["example"] not in ("1", "2"):
        fail("example", f"expected 1 or 2, got {merged['example']!r}")
    if merged["mode"] not in MODES:
        fail("mode", f"expected one of {MODES}, got {merged['mode']!r}")
    krule = merged["krule"]
    try:
        parse_krule(krule, 4)
    except ValueError as exc:
        fail("krule", str(exc))
    try:
        levels = _parse_levels(merged["levels"], krule)
    except ValueError as exc:
        fail("levels", str(exc))
    try:
        T = float(merged["tfinal"])
        nu = float(merged["nu"])
        tol = float(merged["newton_tol"])
        max_iter = int(merged["newton_max_iter"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    plan = StudyPlan(levels, int(merged["example"]), T, merged["mode"], nu, krule, tol, max_iter, merged.get("out"))
    for i in range(len(levels)):
        try:
            plan.config(i)
        except ValueError as exc:
            raise ConfigError(f"level {i}: {exc}") from None
    return plan


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def report_csv(rows, columns) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        parsed = {}
        for key, value in row.items():
            if value == "":
                parsed[key] = None
            elif key in ("level", "n_H", "n_h", "N", "steps"):
                parsed[key] = int(value)
            else:
                parsed[key] = float(value)
        rows.append(parsed)
    return rows


def format_table(rows, columns) -> str:
    def cell(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    table = [columns] + [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in table)


def _run_level(plan: StudyPlan, index: int, **changes):
    cfg = plan.config(index, **changes)
    try:
        return cfg, TwoGridSolver(cfg).run()
    except StepFailure as exc:
        raise StudyFailure(index, exc) from exc


def run_study(plan: StudyPlan, stream=None) -> mms.ErrorReport:
    """Run every level and return errors and observed rates at ``t = T``."""
    report = mms.ErrorReport()
    case = mms.get_case(plan.example)
    for i in range(len(plan.levels)):
        cfg, result = _run_level(plan, i)
        errors = mms.error_norms(result.fine_velocity, result.fine_pressure, case, cfg.T)
        report.add(cfg.n_H, cfg.n_h, cfg.k, level(cfg.n_h).n_unknowns, errors, result.wall_seconds)
        report.rows[-1]["max_divergence"] = result.max_divergence
        report.rows[-1]["max_pressure_mean"] = result.max_pressure_mean
        log.info("level %d done: %s", i, errors)
    if plan.out:
        with open(plan.out, "w", newline="") as fh:
            fh.write(report_csv(report.rows, STUDY_COLUMNS))
    if stream is not None:
        print(format_table(report.rows, STUDY_COLUMNS), file=stream)
    return report


def run_benchmark(plan: StudyPlan, stream=None) -> list[dict]:
    """Two-grid versus one-grid Newton on the fine mesh, level by level."""
    case = mms.get_case(plan.example)
    rows = []
    for i in range(len(plan.levels)):
        cfg, two = _run_level(plan, i, mode="twogrid")
        _, one = _run_level(plan, i, mode="onegrid")
        steps = cfg.n_steps
        rows.append(dict(
            level=i, n_H=cfg.n_H, n_h=cfg.n_h, k=cfg.k, steps=steps,
            twogrid_seconds=two.wall_seconds, onegrid_seconds=one.wall_seconds,
            twogrid_err_l2_vel=mms.error_norms(two.fine_velocity, None, case, cfg.T)[0],
            onegrid_err_l2_vel=mms.error_norms(one.fine_velocity, None, case, cfg.T)[0],
            twogrid_fine_factorizations_per_step=two.total_fine_factorizations / steps,
            onegrid_fine_factorizations_per_step=one.total_fine_factorizations / steps,
            onegrid_mean_newton_iterations=one.mean_newton_iterations,
        ))
    if plan.out:
        with open(plan.out, "w", newline="") as fh:
            fh.write(report_csv(rows, BENCH_COLUMNS))
    if stream is not None:
        print(format_table(rows, BENCH_COLUMNS), file=stream)
    return rows


def run_single(plan: StudyPlan, stream=None) -> dict:
    """Run the finest level of the plan and report its errors and diagnostics."""
    i = len(plan.levels) - 1
    cfg, result = _run_level(plan, i)
    errors = mms.error_norms(result.fine_velocity, result.fine_pressure, mms.get_case(plan.example), cfg.T)
    summary = dict(
        n_H=cfg.n_H, n_h=cfg.n_h, k=cfg.k, steps=cfg.n_steps, mode=cfg.mode,
        err_l2_vel=errors[0], err_h1_vel=errors[1], err_l2_p=errors[2],
        max_divergence=result.max_divergence, mean_newton_iterations=result.mean_newton_iterations,
        fine_factorizations=result.total_fine_factorizations, wall_seconds=result.wall_seconds,
    )
    if plan.out:
        with open(plan.out, "w", newline="") as fh:
            fh.write(report_csv([summary], list(summary)))
    if stream is not None:
        for key, value in summary.items():
            print(f"{key:>24}: {_fmt(value)}", file=stream)
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twogrid-ns", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=["solve", "study", "bench"])
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--example", choices=["1", "2"])
    parser.add_argument("--levels", help="fine subdivisions, e.g. 4,8,16 or n_H:n_h pairs")
    parser.add_argument("--krule", help="h2 | h | fixed:<value>")
    parser.add_argument("--tfinal")
    parser.add_argument("--mode", choices=list(MODES))
    parser.add_argument("--nu")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides = {k: getattr(args, k) for k in ("example", "levels", "krule", "tfinal", "mode", "nu", "out")}
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        plan = parse_config(text, overrides)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "study":
            run_study(plan, sys.stdout)
        elif args.command == "bench":
            run_benchmark(plan, sys.stdout)
        else:
            run_single(plan, sys.stdout)
    except StudyFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
