"""Command-line drivers: convergence tables, Barry & Mercer line samples, single runs.

Every experiment is described by a JSON file::

    biot-split converge --config table1.json --out table1.csv
    biot-split barry-mercer --config barry_mercer_mini.json --out bm.csv
    biot-split run --config single.json --out snapshot.csv

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 instability detected. Failed levels are still written, with tagged cells
(``error:solver`` / ``error:instability``) in place of numbers.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .analytic import (
    BarryMercerConfig,
    convergence_rows,
    energy_error,
    l2_error,
    lame_from_young_poisson,
    manufactured_displacement_grad,
    manufactured_exact,
    point_values,
    barry_mercer_exact,
)
from .assembly import BiotParams
from .linsolve import SolverConfig, SolverError
from .problems import barry_mercer_problem, manufactured_problem
from .schemes import (
    BiotSystem,
    Discretization,
    InstabilityError,
    SchemeConfig,
    SchemeError,
    SchemeKind,
    run_simulation,
)

log = logging.getLogger("biot_split")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INSTABILITY = 0, 2, 3, 4
EXPERIMENTS = ("converge", "barry_mercer", "single_run")


class ConfigError(ValueError):
    """Invalid experiment description; the message names the offending key or line."""


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BarryMercerSettings:
    nx: int = 64
    n_steps: int = 20
    source: tuple[float, float] = (0.25, 0.25)
    n_modes: int = 128
    line_x: float = 0.25
    samples: int = 65


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    discretization: Discretization
    scheme: SchemeKind
    omega: float
    params: BiotParams
    levels: tuple[tuple[int, float], ...]
    final_time: float = 1.0
    inner_tol: float = 1e-10
    inner_max: int = 500
    solver: SolverConfig = field(default_factory=SolverConfig)
    barry_mercer: BarryMercerSettings | None = None
    problem: str = "manufactured"
    keep: str = "final"
    output: str | None = None

    def n_steps(self, tau: float) -> int:
        if self.barry_mercer is not None and self.experiment == "barry_mercer":
            return self.barry_mercer.n_steps
        return max(1, round(self.final_time / tau))

    def scheme_config(self, kind: SchemeKind, tau: float) -> SchemeConfig:
        return SchemeConfig(kind, tau, self.n_steps(tau), omega=self.omega, inner_tol=self.inner_tol, inner_max=self.inner_max)

    def bm_config(self) -> BarryMercerConfig:
        bm = self.barry_mercer or BarryMercerSettings()
        prm = self.params
        return BarryMercerConfig(lam=prm.lam, mu=prm.mu, k=prm.k, source=bm.source, a=prm.a, b=prm.b, n_modes=bm.n_modes)


_TOP_KEYS = {
    "experiment", "discretization", "scheme", "omega", "physics", "levels", "final_time",
    "inner_tol", "inner_max", "solver", "barry_mercer", "problem", "keep", "output",
}
_PHYSICS_KEYS = {"mu", "lam", "E", "nu", "alpha", "c0", "k", "a", "b"}
_SOLVER_KEYS = {"rel_tol", "max_iter", "preconditioner"}
_BM_KEYS = {"nx", "n_steps", "source", "n_modes", "line_x", "samples"}


def _check_keys(obj: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r}")
    return obj


def _number(obj: dict, key: str, where: str, default=None, integer: bool = False):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    val = obj[key]
    ok = isinstance(val, int) if integer else isinstance(val, (int, float))
    if isinstance(val, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{where}.{key}: expected {kind}, got {val!r}")
    if not integer and not math.isfinite(val):
        raise ConfigError(f"{where}.{key}: must be finite, got {val!r}")
    return int(val) if integer else float(val)


def _string(obj: dict, key: str, where: str, choices, default=None) -> str:
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing required key {key!r}")
        return default
    val = obj[key]
    if not isinstance(val, str):
        raise ConfigError(f"{where}.{key}: expected a string, got {val!r}")
    if choices is not None and val not in choices:
        raise ConfigError(f"{where}.{key}: {val!r} is not one of {', '.join(choices)}")
    return val


def _physics(obj: Any) -> BiotParams:
    obj = _check_keys(obj, _PHYSICS_KEYS, "physics")
    has_lame = "mu" in obj or "lam" in obj
    has_young = "E" in obj or "nu" in obj
    if has_lame and has_young:
        raise ConfigError("physics: give either (mu, lam) or (E, nu), not both")
    if has_young:
        E, nu = _number(obj, "E", "physics"), _number(obj, "nu", "physics")
        if not (E > 0 and 0 <= nu < 0.5):
            raise ConfigError(f"physics: need E > 0 and 0 <= nu < 0.5, got E={E}, nu={nu}")
        lam, mu = lame_from_young_poisson(E, nu)
    else:
        mu, lam = _number(obj, "mu", "physics"), _number(obj, "lam", "physics")
    try:
        return BiotParams(
            mu=mu,
            lam=lam,
            alpha=_number(obj, "alpha", "physics"),
            c0=_number(obj, "c0", "physics"),
            k=_number(obj, "k", "physics"),
            a=_number(obj, "a", "physics", 1.0),
            b=_number(obj, "b", "physics", 1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"physics: {exc}") from None


def _levels(obj: Any) -> tuple[tuple[int, float], ...]:
    if not isinstance(obj, list) or not obj:
        raise ConfigError("levels: expected a nonempty list of [nx, tau] pairs")
    out = []
    for i, lev in enumerate(obj):
        where = f"levels[{i}]"
        if not (isinstance(lev, list) and len(lev) == 2):
            raise ConfigError(f"{where}: expected [nx, tau], got {lev!r}")
        nx, tau = lev
        if isinstance(nx, bool) or not isinstance(nx, int) or nx < 1:
            raise ConfigError(f"{where}: nx must be a positive integer, got {nx!r}")
        if isinstance(tau, bool) or not isinstance(tau, (int, float)) or not (math.isfinite(tau) and tau > 0):
            raise ConfigError(f"{where}: tau must be a positive number, got {tau!r}")
        out.append((nx, float(tau)))
    return tuple(out)


def _solver(obj: Any) -> SolverConfig:
    obj = _check_keys(obj, _SOLVER_KEYS, "solver")
    max_iter = obj.get("max_iter")
    if max_iter is not None:
        max_iter = _number(obj, "max_iter", "solver", integer=True)
    try:
        return SolverConfig(
            rel_tol=_number(obj, "rel_tol", "solver", 1e-12),
            max_iter=max_iter,
            preconditioner=_string(obj, "preconditioner", "solver", ("none", "diagonal"), "diagonal"),
        )
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def _barry_mercer(obj: Any) -> BarryMercerSettings:
    obj = _check_keys(obj, _BM_KEYS, "barry_mercer")
    d = BarryMercerSettings()
    src = obj.get("source", list(d.source))
    if not (isinstance(src, list) and len(src) == 2 and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in src)):
        raise ConfigError(f"barry_mercer.source: expected [x, y], got {src!r}")
    out = BarryMercerSettings(
        nx=_number(obj, "nx", "barry_mercer", d.nx, integer=True),
        n_steps=_number(obj, "n_steps", "barry_mercer", d.n_steps, integer=True),
        source=(float(src[0]), float(src[1])),
        n_modes=_number(obj, "n_modes", "barry_mercer", d.n_modes, integer=True),
        line_x=_number(obj, "line_x", "barry_mercer", d.line_x),
        samples=_number(obj, "samples", "barry_mercer", d.samples, integer=True),
    )
    for key in ("nx", "n_steps", "n_modes"):
        if getattr(out, key) < 1:
            raise ConfigError(f"barry_mercer.{key}: must be at least 1")
    if out.samples < 2:
        raise ConfigError("barry_mercer.samples: must be at least 2")
    return out


def config_from_dict(raw: Any) -> RunConfig:
    """Validate a decoded JSON document and build a :class:`RunConfig`."""
    raw = _check_keys(raw, _TOP_KEYS, "config")
    experiment = _string(raw, "experiment", "config", EXPERIMENTS)
    disc = Discretization(_string(raw, "discretization", "config", [d.value for d in Discretization], "mini"))
    default_kind = "explicit_fixed_stress" if disc is Discretization.MINI else "explicit_stabilized_p1p1"
    kind = SchemeKind(_string(raw, "scheme", "config", [k.value for k in SchemeKind], default_kind))
    if kind in (SchemeKind.EXPLICIT_FIXED_STRESS, SchemeKind.EXPLICIT_NAIVE) and disc is not Discretization.MINI:
        raise ConfigError(f"config.scheme: {kind.value} needs the mini discretization")
    if kind is SchemeKind.EXPLICIT_STABILIZED_P1P1 and disc is not Discretization.P1P1_STABILIZED:
        raise ConfigError(f"config.scheme: {kind.value} needs the p1p1_stabilized discretization")
    if experiment == "converge" and kind is SchemeKind.MONOLITHIC:
        raise ConfigError("config.scheme: a convergence study compares an explicit scheme with the monolithic one")
    if experiment == "barry_mercer" and kind is SchemeKind.MONOLITHIC:
        raise ConfigError("config.scheme: the Barry-Mercer driver compares an explicit scheme with the monolithic one")
    omega = _number(raw, "omega", "config", 1.0)
    if omega < 1 and kind is not SchemeKind.MONOLITHIC:
        raise ConfigError(f"config.omega: must be at least 1, got {omega}")
    if "physics" not in raw:
        raise ConfigError("config: missing required key 'physics'")
    params = _physics(raw["physics"])
    solver = _solver(raw.get("solver", {}))
    bm = _barry_mercer(raw["barry_mercer"]) if "barry_mercer" in raw else None
    problem = _string(raw, "problem", "config", ("manufactured", "barry_mercer"), "manufactured")
    if experiment == "barry_mercer":
        problem = "barry_mercer"
        bm = bm or BarryMercerSettings()
    if problem == "barry_mercer" and not math.isclose(params.alpha, 1.0):
        raise ConfigError("physics.alpha: the Barry-Mercer series needs alpha = 1")
    if problem == "barry_mercer" and params.c0 != 0.0:
        raise ConfigError("physics.c0: the Barry-Mercer series needs c0 = 0")
    if problem == "barry_mercer" and bm is None:
        bm = BarryMercerSettings()

    final_time = _number(raw, "final_time", "config", 1.0)
    if final_time <= 0:
        raise ConfigError(f"config.final_time: must be positive, got {final_time}")
    if problem == "barry_mercer":
        bmc = BarryMercerConfig(lam=params.lam, mu=params.mu, k=params.k, source=bm.source, a=params.a, b=params.b, n_modes=bm.n_modes)
        if "final_time" not in raw:
            final_time = bmc.quarter_period
        if "levels" in raw:
            levels = _levels(raw["levels"])
        else:
            levels = ((bm.nx, final_time / bm.n_steps),)
        if experiment == "barry_mercer" and "levels" in raw:
            raise ConfigError("config.levels: the Barry-Mercer mesh and step come from the barry_mercer block")
    else:
        if "levels" not in raw:
            raise ConfigError("config: missing required key 'levels'")
        levels = _levels(raw["levels"])
    if problem == "manufactured" and (params.a != 1.0 or params.b != 1.0):
        raise ConfigError("physics: the manufactured solution lives on the unit square (a = b = 1)")

    inner_tol = _number(raw, "inner_tol", "config", 1e-10)
    inner_max = _number(raw, "inner_max", "config", 500, integer=True)
    if not 0 < inner_tol < 1:
        raise ConfigError(f"config.inner_tol: must lie in (0, 1), got {inner_tol}")
    if inner_max < 1:
        raise ConfigError(f"config.inner_max: must be at least 1, got {inner_max}")
    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError(f"config.output: expected a string, got {output!r}")
    return RunConfig(
        experiment=experiment,
        discretization=disc,
        scheme=kind,
        omega=omega,
        params=params,
        levels=levels,
        final_time=final_time,
        inner_tol=inner_tol,
        inner_max=inner_max,
        solver=solver,
        barry_mercer=bm,
        problem=problem,
        keep=_string(raw, "keep", "config", ("final", "all"), "final"),
        output=output,
    )


def parse_config(path) -> RunConfig:
    """Read and validate a JSON experiment description."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    if not text.strip():
        raise ConfigError(f"{path}: config file is empty")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return config_from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def shipped_config(name: str) -> Path:
    """Path of a config bundled with the package (``table1.json`` etc.)."""
    return Path(str(resources.files("biot_split").joinpath("configs", name)))


# ----------------------------------------------------------------------------
# experiment drivers


def fmt(value: float) -> str:
    return f"{value:.5e}"


def _failure_tag(exc: Exception) -> str:
    return "instability" if isinstance(exc, InstabilityError) else "solver"


def _manufactured_job(cfg: RunConfig, nx: int, tau: float, kind: SchemeKind) -> dict:
    """Run one (level, scheme) pair and measure final-time errors."""
    problem = manufactured_problem(nx, cfg.params, cfg.discretization)
    try:
        system = BiotSystem(problem, cfg.solver)
        traj = run_simulation(system, cfg.scheme_config(kind, tau))
    except (SchemeError, SolverError) as exc:
        log.warning("level nx=%d tau=%g %s failed: %s", nx, tau, kind.value, exc)
        return {"error": _failure_tag(exc), "message": str(exc)}
    s = traj.final
    p_err = l2_error(system.pspace, s.p, lambda x, y, t: manufactured_exact(x, y, t)[2], s.time)
    u_err = energy_error(system.uspace, s.u, manufactured_displacement_grad, s.time, cfg.params)
    if not (math.isfinite(p_err) and math.isfinite(u_err)):
        return {"error": "instability", "message": "non-finite error norm"}
    return {"p": p_err, "u": u_err, "cg_iterations": traj.cg_iterations}


def _run_jobs(fn, jobs, threads: int) -> list:
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, *job) for job in jobs]
        return [f.result() for f in futures]  # level order, whatever finishes first


@dataclass
class DriverResult:
    header: list[str]
    rows: list[list[str]]
    failures: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        if "instability" in self.failures:
            return EXIT_INSTABILITY
        return EXIT_SOLVER if self.failures else EXIT_OK

    def write(self, stream) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)


CONVERGE_HEADER = ["h", "tau", "p_err_fully", "p_err_dec", "p_rate", "u_err_fully", "u_err_dec", "u_rate"]


def cmd_converge(cfg: RunConfig, threads: int = 1) -> DriverResult:
    """Errors of the explicit scheme and the monolithic reference on every level."""
    if cfg.experiment != "converge":
        raise ConfigError(f"converge needs experiment 'converge', got {cfg.experiment!r}")
    jobs = []
    for nx, tau in cfg.levels:
        jobs.append((cfg, nx, tau, SchemeKind.MONOLITHIC))
        jobs.append((cfg, nx, tau, cfg.scheme))
    results = _run_jobs(_manufactured_job, jobs, threads)
    fully, dec = results[0::2], results[1::2]

    def col(res, key):
        return [r.get(key) for r in res]

    levels = [(1.0 / nx, tau) for nx, tau in cfg.levels]
    rows = convergence_rows(levels, col(fully, "p"), col(dec, "p"), col(fully, "u"), col(dec, "u"))
    out = DriverResult(CONVERGE_HEADER, [])
    for row, rf, rd in zip(rows, fully, dec):
        for r in (rf, rd):
            if "error" in r:
                out.failures.append(r["error"])

        def cell(v, res):
            return fmt(v) if v is not None else f"error:{res['error']}"

        out.rows.append([
            fmt(row.h),
            fmt(row.tau),
            cell(row.p_err_fully, rf),
            cell(row.p_err_dec, rd),
            fmt(row.p_rate) if row.p_rate is not None else "",
            cell(row.u_err_fully, rf),
            cell(row.u_err_dec, rd),
            fmt(row.u_rate) if row.u_rate is not None else "",
        ])
    return out


BM_HEADER = ["y", "p_exact", "p_dec", "p_fully", "u_exact", "u_dec", "u_fully", "v_exact", "v_dec", "v_fully"]


def _bm_job(cfg: RunConfig, kind: SchemeKind) -> dict:
    bm = cfg.barry_mercer
    nx, tau = cfg.levels[0]
    problem = barry_mercer_problem(cfg.bm_config(), nx, alpha=cfg.params.alpha, c0=cfg.params.c0, discretization=cfg.discretization)
    try:
        system = BiotSystem(problem, cfg.solver)
        traj = run_simulation(system, cfg.scheme_config(kind, tau))
    except (SchemeError, SolverError) as exc:
        log.warning("Barry-Mercer %s failed: %s", kind.value, exc)
        return {"error": _failure_tag(exc), "message": str(exc)}
    s = traj.final
    ys = np.linspace(0.0, cfg.params.b, bm.samples)
    pts = np.column_stack([np.full_like(ys, bm.line_x), ys])
    p = point_values(system.pspace, s.p, pts)
    uv = point_values(system.uspace, s.u, pts)
    return {"p": p, "u": uv[:, 0], "v": uv[:, 1], "time": s.time}


def barry_mercer_samples(cfg: RunConfig, threads: int = 1) -> dict:
    """Line samples of the series, decoupled and fully coupled solutions."""
    bm = cfg.barry_mercer
    dec, fully = _run_jobs(_bm_job, [(cfg, cfg.scheme), (cfg, SchemeKind.MONOLITHIC)], threads)
    nx, tau = cfg.levels[0]
    T = tau * cfg.n_steps(tau)
    ys = np.linspace(0.0, cfg.params.b, bm.samples)
    p_ex, u_ex, v_ex = barry_mercer_exact(cfg.bm_config(), np.full_like(ys, bm.line_x), ys, T)
    return {"y": ys, "time": T, "exact": {"p": p_ex, "u": u_ex, "v": v_ex}, "dec": dec, "fully": fully}


def cmd_barry_mercer(cfg: RunConfig, threads: int = 1) -> DriverResult:
    if cfg.experiment != "barry_mercer":
        raise ConfigError(f"barry-mercer needs experiment 'barry_mercer', got {cfg.experiment!r}")
    data = barry_mercer_samples(cfg, threads)
    out = DriverResult(BM_HEADER, [])
    for res in (data["dec"], data["fully"]):
        if "error" in res:
            out.failures.append(res["error"])

    def cell(res, key, i):
        return fmt(res[key][i]) if "error" not in res else f"error:{res['error']}"

    ex = data["exact"]
    for i, y in enumerate(data["y"]):
        row = [fmt(y)]
        for key in ("p", "u", "v"):
            row += [fmt(ex[key][i]), cell(data["dec"], key, i), cell(data["fully"], key, i)]
        out.rows.append(row)
    return out


SNAPSHOT_HEADER = ["step", "time", "dof", "index", "value"]


def cmd_run(cfg: RunConfig) -> DriverResult:
    """Single run on the first level; dumps the kept states coefficient by coefficient."""
    nx, tau = cfg.levels[0]
    if cfg.problem == "barry_mercer":
        problem = barry_mercer_problem(cfg.bm_config(), nx, alpha=cfg.params.alpha, c0=cfg.params.c0, discretization=cfg.discretization)
    else:
        problem = manufactured_problem(nx, cfg.params, cfg.discretization)
    out = DriverResult(SNAPSHOT_HEADER, [])
    try:
        traj = run_simulation(BiotSystem(problem, cfg.solver), cfg.scheme_config(cfg.scheme, tau), keep=cfg.keep)
    except (SchemeError, SolverError) as exc:
        log.error("run failed: %s", exc)
        tag = _failure_tag(exc)
        out.failures.append(tag)
        step = getattr(exc, "step", "")
        out.rows.append([str(step), "", f"error:{tag}", "", ""])
        return out
    for s in traj.states:
        for name, vec in (("u", s.u), ("p", s.p)):
            out.rows.extend([str(s.step_index), fmt(s.time), name, str(i), fmt(v)] for i, v in enumerate(vec))
    return out


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biot-split", description="Explicit fixed-stress splitting for the Biot model.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("converge", "convergence table: explicit scheme vs monolithic reference"),
        ("barry-mercer", "point-source benchmark sampled along a vertical line"),
        ("run", "single simulation, coefficient snapshot CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON experiment description")
        p.add_argument("--out", help="CSV output path (default: the config's 'output', else stdout)")
        p.add_argument("--threads", type=int, default=1, help="maximum number of parallel jobs")
    return parser


_EXPECTED = {"converge": "converge", "barry-mercer": "barry_mercer", "run": None}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(args.config)
        expected = _EXPECTED[args.command]
        if expected is not None and cfg.experiment != expected:
            raise ConfigError(f"{args.config}: command {args.command!r} needs experiment {expected!r}, got {cfg.experiment!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "converge":
        result = cmd_converge(cfg, args.threads)
    elif args.command == "barry-mercer":
        result = cmd_barry_mercer(cfg, args.threads)
    else:
        result = cmd_run(cfg)

    target = args.out or cfg.output
    if target:
        with open(target, "w", newline="") as fh:
            result.write(fh)
    else:
        result.write(sys.stdout)
    if result.exit_code != EXIT_OK:
        print(f"finished with failures: {', '.join(result.failures)}", file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
