"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary).

Reference values are the published convergence tables for the manufactured
problem and the Barry & Mercer benchmark settings. Tolerances are the
stated ones; nothing is relaxed to make a criterion pass.
"""

import os

import numpy as np
import pytest

import test_analytic
import test_assembly
import test_fespace
import test_linsolve
import test_schemes
from biot_split.assembly import is_symmetric
from biot_split.assembly import assemble_coupling, assemble_elasticity, assemble_lumped_mass, assemble_mass, assemble_pressure_stiffness
from biot_split.cli import barry_mercer_samples, cmd_converge, parse_config, shipped_config
from biot_split.fespace import SpaceKind, make_space
from biot_split.mesh import build_rect_mesh
from biot_split.problems import manufactured_problem
from biot_split.schemes import BiotSystem, Discretization, SchemeConfig, SchemeKind, run_simulation

pytestmark = pytest.mark.slow

THREADS = os.cpu_count() or 1

# published errors at t = 1 for (h, tau) = (1/40, 1/10), (1/80, 1/20), (1/160, 1/40)
TABLES = {
    "table1.json": {
        "p_fully": [1.027e-03, 5.343e-04, 2.716e-04],
        "p_dec": [2.937e-03, 1.593e-03, 8.186e-04],
        "p_rate": [0.88, 0.96],
        "u_dec": [1.847e-03, 6.775e-04, 2.963e-04],
        "u_rate": [1.45, 1.19],
    },
    "table2.json": {
        "p_fully": [1.060e-03, 5.423e-04, 2.736e-04],
        "p_dec": [3.017e-03, 1.619e-03, 8.269e-04],
        "p_rate": [0.90, 0.97],
        "u_dec": [1.213e-03, 5.363e-04, 2.602e-04],
        "u_rate": [1.18, 1.04],
    },
}
COLUMNS = ["h", "tau", "p_fully", "p_dec", "p_rate", "u_fully", "u_dec", "u_rate"]


def parse_rows(result):
    out = {c: [] for c in COLUMNS}
    for row in result.rows:
        for c, v in zip(COLUMNS, row):
            out[c].append(float(v) if v and not v.startswith("error") else None)
    return out


@pytest.fixture(scope="module")
def tables():
    cache = {}

    def get(name):
        if name not in cache:
            cfg = parse_config(shipped_config(name))
            cache[name] = parse_rows(cmd_converge(cfg, THREADS))
        return cache[name]

    return get


def rel(a, b):
    return abs(a - b) / abs(b) if a is not None else float("inf")


def check_table(got, ref):
    """Sub-checks of a table reproduction: (description, ok) pairs."""
    checks = []
    for key in ("p_dec", "u_dec"):
        for i, r in enumerate(ref[key]):
            e = rel(got[key][i], r)
            checks.append((f"{key}[{i}] {got[key][i]:.4e} vs {r:.3e} ({100 * e:.1f}%)", e <= 0.10))
    for key in ("p_rate", "u_rate"):
        for i, r in enumerate(ref[key]):
            g = got[key][i + 1]
            checks.append((f"{key}[{i + 1}] {g:.2f} vs {r:.2f}", g is not None and abs(g - r) <= 0.15))
    return checks


def summarize(checks):
    failed = [d for d, ok in checks if not ok]
    if not failed:
        return True, f"{len(checks)}/{len(checks)} sub-checks"
    return False, f"{len(checks) - len(failed)}/{len(checks)} sub-checks; failing: " + "; ".join(failed)


def run_checks(items):
    """Run callables, collecting assertion failures instead of stopping at the first."""
    checks = []
    for name, fn in items:
        try:
            fn()
            checks.append((name, True))
        except AssertionError as exc:
            checks.append((f"{name} ({str(exc).splitlines()[0] if str(exc) else 'assertion'})", False))
    return checks


# --- criteria 1-3: convergence tables -----------------------------------------


def test_criterion_1_table1(tables, acceptance_report):
    ok, detail = summarize(check_table(tables("table1.json"), TABLES["table1.json"]))
    acceptance_report(1, ok, "MINI + explicit fixed-stress table: " + detail)
    assert ok, detail


def test_criterion_2_table2(tables, acceptance_report):
    ok, detail = summarize(check_table(tables("table2.json"), TABLES["table2.json"]))
    acceptance_report(2, ok, "stabilized P1-P1 table: " + detail)
    assert ok, detail


def test_criterion_3_fully_vs_decoupled(tables, acceptance_report):
    checks = []
    for name, ref in TABLES.items():
        got = tables(name)
        for i, r in enumerate(ref["p_fully"]):
            e = rel(got["p_fully"][i], r)
            checks.append((f"{name} p_fully[{i}] {got['p_fully'][i]:.4e} vs {r:.3e} ({100 * e:.1f}%)", e <= 0.10))
            ratio = got["p_dec"][i] / got["p_fully"][i]
            checks.append((f"{name} dec/fully[{i}] = {ratio:.2f}", 0.25 <= ratio <= 4.0))
    ok, detail = summarize(checks)
    acceptance_report(3, ok, "monolithic errors and dec/fully ratio: " + detail)
    assert ok, detail


# --- criterion 4: scheme equivalence ------------------------------------------


def test_criterion_4_naive_equals_zero_L(acceptance_report):
    from biot_split.schemes import initial_state, solve_monolithic_step, step_explicit_naive, step_fixed_stress

    system = BiotSystem(manufactured_problem(16))
    tau = 1.0 / 20
    s0 = initial_state(system)
    s1 = solve_monolithic_step(system, s0, tau)
    a_prev, a_cur = s0, s1
    b_prev, b_cur = s0, s1
    identical = True
    zero_L = [s0, s1]
    for _ in range(1, 20):
        a_prev, a_cur = a_cur, step_explicit_naive(system, a_cur, a_prev, tau)
        b_prev, b_cur = b_cur, step_fixed_stress(system, b_cur, b_prev, tau, 0.0)
        zero_L.append(b_cur)
        identical &= bool(np.array_equal(a_cur.u, b_cur.u) and np.array_equal(a_cur.p, b_cur.p))
    # the driver path of the naive scheme reproduces the same trajectory
    driver = run_simulation(manufactured_problem(16), SchemeConfig(SchemeKind.EXPLICIT_NAIVE, tau, 20), keep="all").states
    identical &= len(driver) == len(zero_L) and all(np.array_equal(x.u, y.u) and np.array_equal(x.p, y.p) for x, y in zip(driver, zero_L))
    acceptance_report(4, identical, "bitwise-identical trajectories over 20 steps at h = 1/16" if identical else "trajectories differ")
    assert identical


# --- criterion 5: oracle suite ------------------------------------------------


def test_criterion_5_oracles(acceptance_report):
    items = [
        ("sources vs 4th-order FD at 200 points", lambda: _sources_oracle()),
        ("element mass closed form", test_assembly.test_element_mass_closed_form),
    ]
    items += [(f"quadrature degree {d}", lambda d=d: test_fespace.test_quadrature_exact_on_monomials(d)) for d in range(1, 7)]
    items += [(f"CG vs dense ({pc})", lambda pc=pc: test_linsolve.test_against_dense_solve(pc)) for pc in ("diagonal", "none")]
    ok, detail = summarize(run_checks(items))
    acceptance_report(5, ok, "oracle suite: " + detail)
    assert ok, detail


def _sources_oracle():
    rng = np.random.default_rng(2024)
    pts = rng.uniform(0, 1, 200), rng.uniform(0, 1, 200), rng.uniform(0, 1.5, 200)
    test_analytic.test_sources_match_fd_oracle(pts, test_analytic.PARAMS)


# --- criterion 6: structural invariants ---------------------------------------


def _symmetry():
    m = build_rect_mesh(8, 8)
    Q = make_space(m, SpaceKind.P1_SCALAR)
    for kind in (SpaceKind.MINI_VECTOR, SpaceKind.P1_VECTOR):
        V = make_space(m, kind)
        assert is_symmetric(assemble_elasticity(V, 2.0, 1.0))
        G = assemble_coupling(Q, V, 1.0)
        assert G.shape == (Q.dof_count, V.dof_count)
    for mat in (assemble_mass(Q), assemble_lumped_mass(Q), assemble_pressure_stiffness(Q, 1.0)):
        assert is_symmetric(mat)


def test_criterion_6_invariants(acceptance_report):
    mesh8 = build_rect_mesh(8, 8)
    items = [
        ("matrix symmetry", _symmetry),
        ("coercivity over 100 random MINI fields", lambda: test_assembly.test_coercivity_random_mini_fields(mesh8)),
        ("M0 - M positive semidefinite", lambda: test_assembly.test_lumped_minus_consistent_psd(mesh8)),
        ("point-load partition of unity", test_assembly.test_point_load_partition_of_unity),
    ]
    items += [(f"Dirichlet dofs zero ({k.value})", lambda k=k: test_schemes.test_dirichlet_dofs_exactly_zero(k)) for k in test_schemes.MINI_KINDS]
    items.append(("Dirichlet dofs zero (explicit_stabilized_p1p1)", _p1p1_dirichlet))
    combos = [(Discretization.MINI, k) for k in test_schemes.MINI_KINDS] + [(Discretization.P1P1_STABILIZED, SchemeKind.EXPLICIT_STABILIZED_P1P1)]
    items += [(f"zero data -> zero ({k.value})", lambda d=d, k=k: test_schemes.test_zero_data_gives_zero_solution(d, k)) for d, k in combos]
    ok, detail = summarize(run_checks(items))
    acceptance_report(6, ok, "structural invariants: " + detail)
    assert ok, detail


def _p1p1_dirichlet():
    system = BiotSystem(manufactured_problem(8, discretization=Discretization.P1P1_STABILIZED))
    traj = run_simulation(system, SchemeConfig(SchemeKind.EXPLICIT_STABILIZED_P1P1, 0.1, 4, omega=1.5), keep="all")
    for s in traj.states:
        assert np.all(s.u[system.uspace.dirichlet_dofs] == 0.0)
        assert np.all(s.p[system.pspace.dirichlet_dofs] == 0.0)


# --- criterion 7: Barry & Mercer ----------------------------------------------


def test_criterion_7_barry_mercer(acceptance_report):
    checks = []
    for name in ("barry_mercer_mini.json", "barry_mercer_p1p1.json"):
        cfg = parse_config(shipped_config(name))
        d = barry_mercer_samples(cfg, THREADS)
        # the sample at the source is a logarithmic singularity of the exact
        # pressure and carries no meaningful relative error
        away = ~np.isclose(d["y"], cfg.barry_mercer.source[1])
        exact, dec, fully = d["exact"]["p"][away], d["dec"]["p"][away], d["fully"]["p"][away]
        e_split = np.linalg.norm(dec - fully) / np.linalg.norm(fully)
        e_series = np.linalg.norm(fully - exact) / np.linalg.norm(exact)
        label = cfg.discretization.value
        checks.append((f"{label} dec vs fully {100 * e_split:.2f}%", e_split <= 0.05))
        checks.append((f"{label} fully vs series {100 * e_series:.2f}%", e_series <= 0.10))
    ok, detail = summarize(checks)
    acceptance_report(7, ok, "Barry-Mercer along x = 0.25: " + detail + " [" + "; ".join(c for c, _ in checks) + "]")
    assert ok, detail


# --- criterion 8: splitting self-convergence ----------------------------------


def test_criterion_8_splitting_error(acceptance_report):
    gaps = []
    for tau in (0.1, 0.05, 0.025):
        n = round(1.0 / tau)
        system = BiotSystem(manufactured_problem(40))
        mono = run_simulation(system, SchemeConfig(SchemeKind.MONOLITHIC, tau, n)).final
        dec = run_simulation(system, SchemeConfig(SchemeKind.EXPLICIT_FIXED_STRESS, tau, n)).final
        dp = mono.p - dec.p
        gaps.append(float(np.sqrt(dp @ (system.M @ dp))))
    ratios = [a / b for a, b in zip(gaps, gaps[1:])]
    ok = all(1.7 <= r <= 2.3 for r in ratios)
    detail = "gaps " + ", ".join(f"{g:.3e}" for g in gaps) + "; ratios " + ", ".join(f"{r:.2f}" for r in ratios)
    acceptance_report(8, ok, "splitting error at h = 1/40: " + detail)
    assert ok, detail
