"""Acceptance criteria 1-11.

Each test records one ``PASS``/``FAIL`` line in ``RESULTS`` (printed in the
pytest terminal summary) and then asserts. Convergence orders are judged on
the finest mesh pair; the least-squares slope over all meshes is reported
alongside. Run as a script to print the lines directly::

    python3 tests/test_acceptance.py
"""
import time

import mpmath
import numpy as np
import pytest

from hermion.dcfm import RefQuantities, assemble_governing, factorize, solve_patch
from hermion.diagnostics import BlowUpError, estimate_order, run_convergence, run_longtime
from hermion.polyspace import n_divfree
from hermion.scenarios import get_scenario
from hermion.solver import Simulation

RESULTS = {}


def record(n, ok, text):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
    RESULTS[n] = line
    print(line)
    return ok


_RUNS = {}


def convergence(name, m, **kw):
    """Cached convergence study; the divergence criterion sweeps every cached run."""
    key = (name, m, tuple(sorted(kw.items())))
    if key not in _RUNS:
        t = time.perf_counter()
        rep = run_convergence(get_scenario(name), m, **kw)
        _RUNS[key] = (rep, time.perf_counter() - t)
    return _RUNS[key]


def orders_text(rep):
    pair, slope = estimate_order([r.error_l2 for r in rep.meshes], [r.h for r in rep.meshes])
    errs = ", ".join(f"{r.error_l2:.3e}" for r in rep.meshes)
    return pair[-1], f"errors [{errs}] pair orders {np.round(pair, 2).tolist()} slope {slope:.2f}"


def order_check(n, cases):
    """``cases``: list of ``(label, name, m, kw, minimum)``; returns overall pass."""
    ok_all, parts = True, []
    for label, name, m, kw, lo in cases:
        rep, secs = convergence(name, m, **kw)
        order, txt = orders_text(rep)
        ok = order >= lo
        ok_all &= ok
        parts.append(f"{label}: order {order:.2f} (>= {lo}) {txt} [{secs:.0f}s]")
    record(n, ok_all, " | ".join(parts))
    return ok_all


def test_criterion_01_free_space_order():
    t = time.perf_counter()
    cases = [(f"m={m}", "free-space", m, {}, 2 * m + 0.8) for m in (1, 2, 3)]
    ok, parts = True, []
    for label, name, m, kw, lo in cases:
        rep, _ = convergence(name, m, **kw)
        order, txt = orders_text(rep)
        ok &= order >= lo
        parts.append(f"{label}: order {order:.2f} (>= {lo}) {txt}")
    secs = time.perf_counter() - t
    ok &= secs < 120
    record(1, ok, " | ".join(parts) + f" | runtime {secs:.0f}s (< 120s)")
    assert ok


def test_criterion_02_pec_order():
    assert order_check(2, [("m=1", "pec-star", 1, {}, 2.8), ("m=2", "pec-star", 2, {}, 4.7)])


def test_criterion_03_pmc_impedance_order():
    assert order_check(3, [("pmc", "pmc-star", 1, {}, 2.8), ("impedance", "impedance-star", 1, {}, 2.8)])


def test_criterion_04_interface_order():
    assert order_check(4, [("m=1", "interface-star", 1, {}, 2.8), ("m=2", "interface-star", 2, {}, 4.7)])


def test_criterion_05_gstc_order():
    rep, secs = convergence("gstc-flat", 1)
    order, txt = orders_text(rep)
    low, _ = convergence("gstc-flat", 1, d=2, nd=1)
    low_order, low_txt = orders_text(low)
    ok = order >= 2.8 and low_order < 2.5
    record(5, ok, f"d=3: order {order:.2f} (>= 2.8) {txt} | d=2: order {low_order:.2f} (< 2.5) {low_txt}")
    assert ok


def test_criterion_06_divergence():
    # every exact-solution convergence run of this module, plus the PEC runs for the bulk order
    for m in (1, 2):
        convergence("pec-star", m)
    worst, worst_run = 0.0, ""
    for (name, m, _), (rep, _) in _RUNS.items():
        for r in rep.meshes:
            rel = r.div_patch / r.div_scale
            if rel >= worst:
                worst, worst_run = rel, f"{name} m={m} h={r.h:.4g}"
    parts = [f"max patch/field {worst:.2e} (<= 1e-10, {worst_run})"]
    ok = worst <= 1e-10
    for m in (1, 2):
        rep, _ = convergence("pec-star", m)
        pair, slope = estimate_order([r.div_bulk for r in rep.meshes], [r.h for r in rep.meshes])
        ok &= pair[-1] >= 2 * m - 0.3
        parts.append(f"PEC m={m} bulk order {pair[-1]:.2f} (>= {2 * m - 0.3}) slope {slope:.2f}")
    record(6, ok, " | ".join(parts))
    assert ok


def test_criterion_07_variable_coefficients():
    assert order_check(7, [("m=1 omega=3pi", "varcoeff-pec-star", 1, {}, 2.8)])


def longtime_ratio(name, m):
    t = time.perf_counter()
    # h=1/30 under-resolves the patches, so the plateau sits above the default field-scale
    # abort level; only non-finite data aborts here and growth is judged by the ratio
    rep = run_longtime(get_scenario(name), m, 1 / 30, 25.0, stride=6, cfl=0.5, limit=np.inf)
    series = np.array(rep.series[rep.meshes[0].h])
    e1 = series[np.argmin(np.abs(series[:, 0] - 1.0)), 1]
    return series[:, 1].max() / e1, e1, series[-1, 1], time.perf_counter() - t


def test_criterion_08_long_time():
    ok, parts = True, []
    for name in ("pec-star", "interface-star"):
        for m in (1, 2):
            try:
                ratio, e1, ef, secs = longtime_ratio(name, m)
            except BlowUpError as exc:
                ok = False
                parts.append(f"{name} m={m}: {exc}")
                continue
            ok &= ratio <= 10 and secs < 900
            parts.append(f"{name} m={m}: max/e(1) {ratio:.2f} (<= 10) e(1) {e1:.2e} e(25) {ef:.2e} [{secs:.0f}s]")
    record(8, ok, " | ".join(parts))
    assert ok


def identical_media_difference(m, h):
    vals = []
    for name in ("free-space", "interface-identical"):
        sim = Simulation(get_scenario(name), h, m)
        state = sim.run()
        active, v = sim.node_values(state)
        _, ex = sim.exact_values(state.t)
        vals.append((active, v, ex))
    (a0, v0, e0), (a1, v1, _) = vals
    assert np.array_equal(a0, a1)
    return np.abs(v0 - v1).max() / np.abs(e0).max()


def test_criterion_09_identical_media_interface():
    # judged at m=3; m=2 is reported for reference (its interface error is still ~1e-6 at h=1/80)
    info = identical_media_difference(2, 1 / 80)
    diff = identical_media_difference(3, 1 / 80)
    ok = diff <= 1e-8
    record(9, ok, f"m=3 h=1/80: max diff / field {diff:.2e} (<= 1e-8) | m=2 h=1/80 (reference): {info:.2e}")
    assert ok


def test_criterion_10_structural_counts():
    ok, parts = True, []
    for d in range(1, 8):
        G, _ = assemble_governing(d, ("const", 1.0, 1.0), (0.3, 0.3, 0.01), RefQuantities(L0=0.3))
        n_unk = (d + 1) ** 3 + n_divfree(d)
        g_ok = G.shape == (3 * d**3 + 7 * d**2 + 7 * d - 2, 2 * d**3 + 6 * d**2 + 7 * d + 3)
        ok &= g_ok and n_unk == G.shape[1]
        parts.append(f"d={d} {G.shape}")
    # total rows: G per side + 3 per BM node + (condition equations) (N_d + 1) per surface sample
    sims = [Simulation(get_scenario("pec-star"), 1 / 28, 1, tf=0.0, keep_matrices=True),
            Simulation(get_scenario("interface-identical"), 1 / 20, 1, tf=0.0, keep_matrices=True)]
    n_checked = 0
    for sim in sims:
        g = 3 * sim.d**3 + 7 * sim.d**2 + 7 * sim.d - 2
        n_cond = len(sim.scenario.surfaces[0].condition.equations())
        n_samples = (int(sim.beta) + 1) ** 2
        for systems in sim.systems.values():
            for s in systems:
                ns = len(s.extra["sides"])
                n_eq = ns * g + 3 * len(s.bm_index) + n_cond * (sim.nd + 1) * n_samples
                ok &= s.extra["M"].shape[0] == n_eq
                n_checked += 1
    parts.append(f"N_eq identity on {n_checked} patch systems")
    record(10, ok, ", ".join(parts))
    assert ok


def normal_equations_oracle(M, b, dps=50):
    with mpmath.workdps(dps):
        A = mpmath.matrix(M.tolist())
        rhs = mpmath.matrix(b.tolist())
        x = mpmath.lu_solve(A.T * A, A.T * rhs)
        return np.array([float(v) for v in x])


def test_criterion_11_least_squares_oracle():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 25))
        rows = n + int(rng.integers(0, 30))
        M = rng.standard_normal((rows, n)) * np.exp(rng.uniform(-2, 2, n))
        b = rng.standard_normal(rows)
        x = solve_patch(factorize(M), b)
        ref = normal_equations_oracle(M, b)
        worst = max(worst, np.linalg.norm(x - ref) / np.linalg.norm(ref))
    ok = worst <= 1e-8
    record(11, ok, f"50 systems, max relative difference {worst:.2e} (<= 1e-8)")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
