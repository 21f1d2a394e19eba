from math import factorial

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermion.geometry import DUAL, PRIMAL, StaggeredMesh
from hermion.hermite import (
    FieldState,
    advance_half_step,
    compute_time_step,
    evaluate_center,
    hermite_interpolate_cell,
    taylor_extend_advection,
    taylor_extend_maxwell,
)
from hermion.scenarios import get_scenario
from hermion.solver import Simulation


def poly_corner_data(c, m):
    """Scaled derivative blocks of the centred polynomial sum c[a, b] xi^a eta^b at xi, eta = +-1/2."""
    K = c.shape[0]
    out = np.zeros((2, 2, m + 1, m + 1))
    for sx, x0 in enumerate((-0.5, 0.5)):
        for sy, y0 in enumerate((-0.5, 0.5)):
            for k in range(m + 1):
                for l in range(m + 1):
                    acc = 0.0
                    for a in range(k, K):
                        for b in range(l, K):
                            fa = factorial(a) // factorial(a - k) // factorial(k)
                            fb = factorial(b) // factorial(b - l) // factorial(l)
                            acc += c[a, b] * fa * fb * x0 ** (a - k) * y0 ** (b - l)
                    out[sx, sy, k, l] = acc
    return out


def test_constant_corner_data():
    m = 2
    data = np.zeros((2, 2, m + 1, m + 1))
    data[..., 0, 0] = 5.0
    c = hermite_interpolate_cell(data, m)
    expected = np.zeros((2 * m + 2,) * 2)
    expected[0, 0] = 5.0
    np.testing.assert_allclose(c, expected, atol=1e-14)


def test_linear_reproduced_m1():
    # u = xi: values -1/2, 1/2; scaled first derivatives 1
    data = np.zeros((2, 2, 2, 2))
    data[0, :, 0, 0], data[1, :, 0, 0] = -0.5, 0.5
    data[:, :, 1, 0] = 1.0
    c = hermite_interpolate_cell(data, 1)
    expected = np.zeros((4, 4))
    expected[1, 0] = 1.0
    np.testing.assert_allclose(c, expected, atol=1e-14)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_interpolation_reproduces_polynomials(m):
    rng = np.random.default_rng(m)
    K = 2 * m + 2
    c = rng.standard_normal((K, K))
    out = hermite_interpolate_cell(poly_corner_data(c, m), m)
    np.testing.assert_allclose(out, c, rtol=1e-12, atol=1e-12 * np.abs(c).max())


def test_advection_first_layer():
    c0 = np.zeros((4, 4))
    c0[1, 0] = 1.0
    dt, dx, dy = 0.1, 0.5, 0.25
    ext = taylor_extend_advection(c0, dt, dx, dy)
    assert ext[0, 0, 1] == pytest.approx(dt / dx)
    assert np.count_nonzero(ext[..., 1:]) == 1


def test_advection_constant_data_frozen():
    c0 = np.zeros((4, 4))
    c0[0, 0] = 3.0
    ext = taylor_extend_advection(c0, 0.1, 1.0, 1.0)
    assert not ext[..., 1:].any()


def test_advection_characteristic_shift():
    # u(x, y, t) = u0(x + t, y + t) for u_t = u_x + u_y
    rng = np.random.default_rng(0)
    m = 2
    K = 2 * m + 2
    c0 = rng.standard_normal((K, K))
    dx = dy = dt = 1.0
    ext = taylor_extend_advection(c0, dt, dx, dy)
    from numpy.polynomial import polynomial as npoly

    for x, y, t in rng.uniform(-0.5, 0.5, (10, 3)):
        val = npoly.polyval3d(x, y, t, ext)
        ref = npoly.polyval2d(x + t, y + t, c0)
        assert val == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_maxwell_zero_and_constant_fields():
    K = 4
    zero = np.zeros((K, K))
    for out in taylor_extend_maxwell((zero, zero, zero), 0.1, 1.0, 1.0, ("const", 1.0, 1.0)):
        assert not out.any()
    const = np.zeros((K, K))
    const[0, 0] = 2.0
    for out in taylor_extend_maxwell((const, const, const), 0.1, 1.0, 1.0, ("const", 2.0, 3.0)):
        assert not out[..., 1:].any()


def test_maxwell_time_layers_standing_mode():
    sc = get_scenario("free-space")
    med = sc.media[0]
    m, h, dt = 1, 1 / 30, 1 / 60
    K = 2 * m + 2
    x0, y0, t0 = 0.31, 0.42, 0.2
    X, Y, T = np.array([x0]), np.array([y0]), np.array([t0])
    fields = [med.quantity(nm).scaled_taylor(X, Y, T, K, h, h)[0] for nm in ("Hx", "Hy", "Ez")]
    ext = taylor_extend_maxwell(fields, dt, h, h, ("const", 1.0, 1.0))
    for f, nm in enumerate(("Hx", "Hy", "Ez")):
        q = med.quantity(nm)
        for s in (1, 2):
            ref = q(X, Y, T, 0, 0, s)[0] * dt**s / factorial(s)
            assert ext[f][0, 0, s] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_time_step_examples():
    dt, n = compute_time_step(1 / 30, 1.0, 0.5, 0.0, 1.0)
    assert n == 60 and dt == pytest.approx(1 / 60)
    dt, n = compute_time_step(1 / 30, 1 / np.sqrt(2), 0.5, 0.0, 1.0)
    assert n == int(np.ceil(60 / np.sqrt(2))) == 43
    assert dt / np.sqrt(2) <= 0.5 / 30
    assert compute_time_step(1 / 30, 1.0, 0.5, 1.0, 1.0)[1] == 0


def _free_sim(h=1 / 30, m=2):
    return Simulation(get_scenario("free-space"), h, m)


def test_one_step_standing_mode_w5():
    from hermion.scenarios import Medium, standing_mode
    import copy

    sc = copy.copy(get_scenario("free-space"))
    # sin(5 pi x) is periodic on [0, 2], not on the unit square
    sc.media = {0: Medium(1, 1, standing_mode(5))}
    sc.bounds = (0.0, 2.0, 0.0, 2.0)
    sim = Simulation(sc, 1 / 30, 2, tf=1 / 60)
    assert sim.n_steps == 1
    state = sim.run()
    _, v = sim.node_values(state)
    _, e = sim.exact_values(state.t)
    # interpolation error constant (h/2)^6/6! * (5 pi)^6 per direction predicts ~1e-6;
    # measured 1.19e-6
    assert np.abs(v - e).max() < 1.5e-6


def test_zero_state_stays_zero_and_linearity():
    sim = _free_sim(1 / 10, 1)
    rng = np.random.default_rng(0)
    shape = sim.mesh.shape(PRIMAL) + (3, 2, 2)
    info = sim.bm[DUAL]
    adv = lambda d: advance_half_step(FieldState(PRIMAL, 0.0, d), info["targets"], info["corners"], sim.dt,  # noqa: E731
                                      sim.h, info["materials"], sim.mesh.shape(DUAL)).data
    assert not adv(np.zeros(shape)).any()
    s1, s2 = rng.standard_normal(shape), rng.standard_normal(shape)
    np.testing.assert_allclose(adv(2 * s1 - 3 * s2), 2 * adv(s1) - 3 * adv(s2), atol=1e-12)


def test_unset_corner_rejected():
    sim = _free_sim(1 / 10, 1)
    data = np.zeros(sim.mesh.shape(PRIMAL) + (3, 2, 2))
    data[3, 3] = np.nan
    info = sim.bm[DUAL]
    with pytest.raises(RuntimeError):
        advance_half_step(FieldState(PRIMAL, 0.0, data), info["targets"], info["corners"], sim.dt, sim.h,
                          info["materials"], sim.mesh.shape(DUAL))


@settings(max_examples=15, deadline=None)
@given(zeta=st.floats(0, 1), seed=st.integers(0, 1000))
def test_evaluate_center_matches_polynomial_time_sum(zeta, seed):
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((4, 4, 7))
    out = evaluate_center(T, zeta, 1)
    ref = np.einsum("kls,s->kl", T[:2, :2], zeta ** np.arange(7))
    np.testing.assert_allclose(out, ref, rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("m", [1, 2])
def test_free_space_order(m):
    from hermion.scenarios import Medium, standing_mode
    import copy

    sc = copy.copy(get_scenario("free-space"))
    sc.media = {0: Medium(1, 1, standing_mode(2))}
    errs = []
    hs = [1 / 20, 1 / 40]
    for h in hs:
        sim = Simulation(sc, h, m, tf=0.5)
        st_ = sim.run()
        _, v = sim.node_values(st_)
        _, e = sim.exact_values(st_.t)
        errs.append(np.linalg.norm(v - e) / np.linalg.norm(e))
    assert np.log2(errs[0] / errs[1]) >= 2 * m + 0.8


def test_mesh_geometry():
    mesh = StaggeredMesh.from_h((0, 1, 0, 1), 0.1)
    X, Y = mesh.coords(DUAL)
    assert X[0, 0] == pytest.approx(0.05) and Y[0, 0] == pytest.approx(0.05)
    with pytest.raises(ValueError):
        StaggeredMesh(0, 1, 0, 1, 0, 10)
