import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermion.diagnostics import (
    BlowUpError,
    RunReport,
    MeshResult,
    _coarse_to_fine,
    cell_divergence_sq,
    error_norms,
    estimate_order,
    run_longtime,
    run_mesh,
    run_self_convergence,
)
from hermion.scenarios import Medium, get_scenario, standing_mode
from hermion.solver import Simulation


def test_zero_error():
    e = np.random.default_rng(0).standard_normal((10, 3))
    per, tot = error_norms(e, e)
    assert tot == 0.0 and not per.any()


def test_constant_offset_on_ez():
    rng = np.random.default_rng(1)
    e = rng.standard_normal((50, 3))
    v = e.copy()
    v[:, 2] += 0.25
    assert error_norms(v, e, np.inf, relative=False)[1] == pytest.approx(0.25)
    assert error_norms(v, e, np.inf)[1] == pytest.approx(0.25 / np.abs(e).max())
    per, tot = error_norms(v, e, 2, relative=False)
    assert per[2] == pytest.approx(0.25 * np.sqrt(50)) and per[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 40))
def test_norms_match_loop_oracle(seed, n):
    rng = np.random.default_rng(seed)
    e = rng.standard_normal((n, 3))
    v = e + 1e-3 * rng.standard_normal((n, 3))
    s_d = s_e = 0.0
    m_d = m_e = 0.0
    for i in range(n):
        for f in range(3):
            d = v[i, f] - e[i, f]
            s_d += d * d
            s_e += e[i, f] ** 2
            m_d = max(m_d, abs(d))
            m_e = max(m_e, abs(e[i, f]))
    assert error_norms(v, e, 2)[1] == pytest.approx(np.sqrt(s_d / s_e), rel=1e-12)
    assert error_norms(v, e, np.inf)[1] == pytest.approx(m_d / m_e, rel=1e-12)


def test_norm_errors():
    with pytest.raises(ValueError):
        error_norms(np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        error_norms(np.zeros((2, 3)), np.ones((2, 3)), p=1)
    with pytest.raises(ZeroDivisionError):
        error_norms(np.ones((2, 3)), np.zeros((2, 3)))


def corner_blocks(fx, fy, h, m):
    """Scaled corner data ``(1, 2, 2, 2, m+1, m+1)`` of H = (fx, fy) on the cell [0, h]^2.

    ``fx, fy`` take ``(x, y, k, l)`` and return the ``(k, l)`` derivative.
    """
    from math import factorial

    out = np.zeros((1, 2, 2, 2, m + 1, m + 1))
    for f, fn in enumerate((fx, fy)):
        for a, x0 in enumerate((0.0, h)):
            for b, y0 in enumerate((0.0, h)):
                for k in range(m + 1):
                    for l in range(m + 1):
                        out[0, f, a, b, k, l] = fn(x0, y0, k, l) * h ** (k + l) / (factorial(k) * factorial(l))
    return out


def _poly(cx, cy, px, py):
    """Derivative oracle for cx * x^px * y^py."""
    from math import factorial

    def fn(x0, y0, k, l):
        if k > px or l > py:
            return 0.0
        return (cx * factorial(px) / factorial(px - k) * factorial(py) / factorial(py - l)
                * x0 ** (px - k) * y0 ** (py - l))

    return fn


@pytest.mark.parametrize("m", [1, 2])
def test_divergence_of_x_is_cell_area(m):
    h = 0.1
    c = corner_blocks(_poly(1.0, 0, 1, 0), _poly(0.0, 0, 0, 0), h, m)
    assert cell_divergence_sq(c, h, m)[0] == pytest.approx(h * h, rel=1e-12)


@pytest.mark.parametrize("m", [1, 2])
def test_divergence_free_cubic(m):
    h = 0.1
    c = corner_blocks(_poly(1.0, 0, 0, 3), _poly(1.0, 0, 3, 0), h, m)
    assert cell_divergence_sq(c, h, m)[0] <= 1e-24


def test_divergence_material_factor():
    h, m = 0.2, 1
    c = corner_blocks(_poly(1.0, 0, 1, 0), _poly(0.0, 0, 0, 0), h, m)
    assert cell_divergence_sq(c, h, m, fac=[3.0])[0] == pytest.approx(9 * h * h)


def test_order_exact_power_law():
    hs = [0.1, 0.05, 0.025]
    pair, slope = estimate_order([2 * h**3 for h in hs], hs)
    np.testing.assert_allclose(pair, 3.0)
    assert slope == pytest.approx(3.0)


def test_order_with_outlier():
    hs = [0.1, 0.05, 0.025, 0.0125]
    errs = [h**3 for h in hs]
    errs[2] *= 10
    pair, slope = estimate_order(errs, hs)
    assert pair[1] < 0 and pair[2] > 6
    assert 2 < slope < 4


def test_order_needs_pairs():
    with pytest.raises(ValueError):
        estimate_order([1.0], [0.1])


def test_report_orders_need_three_meshes():
    r = RunReport("x", 1, 2, 2, 0.5)
    r.meshes = [MeshResult(h=0.1, error_l2=1e-2), MeshResult(h=0.05, error_l2=1.25e-3)]
    assert r.finalize().orders == []
    r.meshes.append(MeshResult(h=0.025, error_l2=1.5625e-4))
    r.finalize()
    np.testing.assert_allclose(r.orders, 3.0)
    lines = r.to_csv().splitlines()
    assert lines[0].startswith("h,error_l2,error_inf,order")
    assert lines[2].split(",")[3] == "3" or float(lines[2].split(",")[3]) == pytest.approx(3.0)
    assert "nan" in lines[1]


def _free_w2():
    sc = copy.copy(get_scenario("free-space"))
    sc.media = {0: Medium(1, 1, standing_mode(2))}
    return sc


def test_patch_divergence_is_rounding_level():
    res, sim, state = run_mesh(get_scenario("pec-star"), 1 / 28, 1, tf=0.1)
    assert res.div_patch <= 1e-10 * res.div_scale
    assert res.div_bulk > 0


def test_free_space_longtime_bounded():
    rep = run_longtime(_free_w2(), 1, 1 / 20, 10.0, stride=20)
    errs = np.array([e for _, e in rep.series[rep.meshes[0].h]])
    # phase drift grows linearly in t; an instability would grow exponentially
    assert np.isfinite(errs).all() and errs.max() < 0.1
    assert errs[-1] / errs[len(errs) // 2] < 3


def test_blowup_detector_fires_without_matching():
    with pytest.raises(BlowUpError):
        run_longtime(get_scenario("pec-star"), 1, 1 / 28, 2.0, omega_b=0.0)


def test_blowup_detector_fires_above_cfl_limit():
    with pytest.raises(BlowUpError):
        run_longtime(_free_w2(), 1, 1 / 20, 5.0, cfl=1.5)


def test_nested_mesh_mapping():
    sc = get_scenario("pulse-pec-star")
    coarse = Simulation(sc, 1 / 10, 1, tf=0.0)
    fine = Simulation(sc, 1 / 20, 1, tf=0.0)
    idx = _coarse_to_fine(coarse, fine)
    Xc, Yc = (c.ravel() for c in coarse.mesh.coords(0))
    Xf, Yf = (c.ravel() for c in fine.mesh.coords(0))
    np.testing.assert_allclose(Xf[idx], Xc, atol=1e-14)
    np.testing.assert_allclose(Yf[idx], Yc, atol=1e-14)
    with pytest.raises(ValueError):
        _coarse_to_fine(fine, coarse)


def test_self_convergence_against_itself_is_zero():
    rep = run_self_convergence(get_scenario("pulse-pec-star"), 1, [1 / 20], 1 / 20, tf=0.2)
    assert rep.meshes[0].error_l2 == 0.0
    assert rep.mode == "self"
