import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermion.conditions import (
    PEC,
    PMC,
    GstcFlat,
    Impedance,
    Interface,
    condition_rhs,
    condition_rows,
    gstc_rows,
    impedance_rows,
    interface_rows,
    pec_rows,
    pmc_rows,
    prefactor,
)
from hermion.scenarios import boundary_field, get_scenario

QUANTS = ("Hx", "Hy", "Ez", "muHx", "muHy")


def one_sample(nx=1.0, ny=0.0):
    return dict(x=np.array([0.5]), y=np.array([0.5]), t=np.array([0.0]), nx=np.array([nx]), ny=np.array([ny]))


def symbolic_functional(sides=("one",), max_nt=4, max_ny=2):
    """Each (side, quantity, nt, ny) term gets its own column, so a row lists its coefficients."""
    keys = [(s, q, a, b) for s in sides for q in QUANTS for a in range(max_nt) for b in range(max_ny)]
    col = {k: i for i, k in enumerate(keys)}

    def functional(side, quantity, nt, ny):
        out = np.zeros((1, len(keys)))
        out[0, col[(side, quantity, nt, ny)]] = 1.0
        return out

    return functional, col


def coefficients(row, col):
    return {k: row[i] for k, i in col.items() if row[i] != 0.0}


def test_pec_j0_rows():
    fn, col = symbolic_functional()
    nx, ny = 0.6, 0.8
    rows = pec_rows(one_sample(nx, ny), 0, fn, L0=1.0)
    assert coefficients(rows[0], col) == {("one", "Ez", 0, 0): 1.0}
    assert coefficients(rows[1], col) == pytest.approx({("one", "muHx", 0, 0): nx, ("one", "muHy", 0, 0): ny})


def test_pmc_flat_row_is_hy():
    fn, col = symbolic_functional()
    rows = pmc_rows(one_sample(1.0, 0.0), 0, fn, L0=1.0, Z0=2.0)
    assert coefficients(rows[0], col) == {("one", "Hy", 0, 0): 2.0}


def test_prefactor_scales_with_order():
    fn, _ = symbolic_functional()
    s = one_sample(0.6, 0.8)
    L0, c0 = 0.3, 2.0
    r0 = pmc_rows(s, 0, fn, L0=L0, c0=c0)
    r1 = pmc_rows(s, 1, fn, L0=L0, c0=c0)
    # same coefficients, shifted one time derivative and scaled by L0 / c0
    assert r1.sum() == pytest.approx(r0.sum() * L0 / c0)
    assert prefactor(PMC(), 2, 49, L0, c0) == pytest.approx((L0 / c0) ** 2 / 49)


def test_impedance_flat_row():
    fn, col = symbolic_functional()
    rows = impedance_rows(one_sample(1.0, 0.0), 0, fn, L0=1.0, Z=1.0)
    assert coefficients(rows[0], col) == {("one", "Ez", 0, 0): 1.0, ("one", "Hy", 0, 0): 1.0}


def test_impedance_zero_limit_is_pec_ez_row():
    fn, _ = symbolic_functional()
    s = one_sample(0.6, 0.8)
    np.testing.assert_array_equal(impedance_rows(s, 1, fn, L0=0.5, Z=0.0), pec_rows(s, 1, fn, L0=0.5)[:1])


def test_impedance_from_medium():
    assert Impedance.from_medium(3.0, 0.75).Z == pytest.approx(2.0)


def test_weights():
    assert PEC().omega_s(0.3) == 1.0
    assert Interface().omega_s(0.3) == 1.0
    assert GstcFlat().omega_s(0.3) == 0.3


def test_interface_rows_signs():
    fn, col = symbolic_functional(("plus", "minus"))
    nx, ny = 0.6, 0.8
    rows = interface_rows(one_sample(nx, ny), 0, fn, L0=1.0)
    assert coefficients(rows[0], col) == pytest.approx({
        ("plus", "Hy", 0, 0): nx, ("minus", "Hy", 0, 0): -nx,
        ("plus", "Hx", 0, 0): -ny, ("minus", "Hx", 0, 0): ny,
    })
    assert coefficients(rows[1], col) == pytest.approx({
        ("plus", "muHx", 0, 0): nx, ("minus", "muHx", 0, 0): -nx,
        ("plus", "muHy", 0, 0): ny, ("minus", "muHy", 0, 0): -ny,
    })
    assert coefficients(rows[2], col) == {("plus", "Ez", 0, 0): 1.0, ("minus", "Ez", 0, 0): -1.0}


def test_gstc_zero_susceptibility_is_flat_interface():
    fn, _ = symbolic_functional(("plus", "minus"))
    s = one_sample(1.0, 0.0)
    for j in range(3):
        np.testing.assert_allclose(gstc_rows(s, j, fn, L0=1.0, chi_ee_zz=0.0, chi_mm_yy=0.0),
                                   interface_rows(s, j, fn, L0=1.0))


def test_gstc_rows_terms():
    fn, col = symbolic_functional(("plus", "minus"))
    ce, cm = 0.3, 0.7
    rows = gstc_rows(one_sample(), 1, fn, L0=1.0, chi_ee_zz=ce, chi_mm_yy=cm)
    assert coefficients(rows[0], col) == pytest.approx({
        ("plus", "Hy", 1, 0): 1.0, ("minus", "Hy", 1, 0): -1.0,
        ("plus", "Ez", 2, 0): -ce / 2, ("minus", "Ez", 2, 0): -ce / 2,
    })
    assert coefficients(rows[1], col) == pytest.approx({
        ("plus", "muHx", 1, 0): 1.0, ("minus", "muHx", 1, 0): -1.0,
        ("plus", "Hy", 1, 1): cm / 2, ("minus", "Hy", 1, 1): cm / 2,
    })
    assert coefficients(rows[2], col) == pytest.approx({
        ("plus", "Ez", 1, 0): 1.0, ("minus", "Ez", 1, 0): -1.0,
        ("plus", "Hy", 2, 0): -cm / 2, ("minus", "Hy", 2, 0): -cm / 2,
    })


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(-10, 10), min_size=10, max_size=10), th=st.floats(0, 2 * np.pi))
def test_interface_pointwise_oracle(vals, th):
    """Rows applied to per-term values equal the hand-written jump combination."""
    nx, ny = np.cos(th), np.sin(th)
    v = dict(zip([(s, q) for s in ("plus", "minus") for q in QUANTS], vals))

    def functional(side, quantity, nt, ny_):
        return np.array([[v[(side, quantity)]]])

    r = interface_rows(one_sample(nx, ny), 0, functional, L0=1.0)[:, 0]
    jump = lambda q: v[("plus", q)] - v[("minus", q)]  # noqa: E731
    np.testing.assert_allclose(r, [nx * jump("Hy") - ny * jump("Hx"), nx * jump("muHx") + ny * jump("muHy"),
                                   jump("Ez")], atol=1e-12)


def test_rows_and_rhs_share_structure():
    """Rows applied to exact values equal the rhs built from the same values."""
    rng = np.random.default_rng(0)
    n = 5
    s = dict(x=np.zeros(n), y=np.zeros(n), t=np.zeros(n), nx=rng.uniform(-1, 1, n), ny=rng.uniform(-1, 1, n))
    table = {}

    def value(side, q, nt, ny):
        key = (side, q, nt, ny)
        if key not in table:
            table[key] = rng.standard_normal(n)
        return table[key]

    def functional(side, q, nt, ny):
        return np.diag(value(side, q, nt, ny))

    for cond in (PEC(), PMC(), Impedance(0.7), Interface(), GstcFlat(chi_ee_zz=0.2, chi_mm_yy=0.4)):
        for j in range(2):
            rows = condition_rows(cond, s, j, functional, L0=0.3, Z0=1.3, c0=0.9)
            rhs = condition_rhs(cond, s, j, value, L0=0.3, Z0=1.3, c0=0.9)
            np.testing.assert_allclose(rows.sum(axis=1), rhs, rtol=1e-14, atol=1e-14)


def exact_rhs(name, j, n=50, seed=0):
    sc = get_scenario(name)
    spec = next(sp_ for sp_ in sc.surfaces if sp_.condition.two_sided)
    rng = np.random.default_rng(seed)
    xg = spec.surface.x_line if not spec.surface.closed else None
    if xg is None:
        u = rng.uniform(0, 2 * np.pi, n)
        X, Y = spec.surface.point(u)
    else:
        X, Y = np.full(n, xg), rng.uniform(0, 1, n)
    nx, ny = spec.surface.normal(X, Y)
    T = rng.uniform(0, 1, n)
    smp = dict(x=X, y=Y, t=T, nx=nx, ny=ny)

    def provider(side, q, nt, ny_):
        return sc.media[spec.sides[side]].quantity(q)(X, Y, T, 0, ny_, nt)

    return condition_rhs(spec.condition, smp, j, provider, L0=1.0)


@pytest.mark.parametrize("j", [0, 1, 2])
def test_gstc_manufactured_solution_satisfies_condition(j):
    assert np.abs(exact_rhs("gstc-flat", j)).max() < 1e-11


def test_interface_scenario_needs_sources():
    assert np.abs(exact_rhs("interface-star", 0)).max() > 1e-2


def test_identical_interface_is_homogeneous():
    sc = get_scenario("interface-identical")
    spec = sc.surfaces[0]
    assert boundary_field(sc.media[1], spec, "Ez") is None


def test_pec_standing_mode_sources_nonzero():
    sc = get_scenario("pec-star")
    spec = sc.surfaces[0]
    u = np.linspace(0.1, 6.0, 40)
    X, Y = spec.surface.point(u)
    Ez = boundary_field(sc.media[0], spec, "Ez")(X, Y, 0.0)
    assert np.abs(Ez).max() > 0.1


def test_chi_mm_xx_stored_but_unused():
    a = GstcFlat(chi_ee_zz=0.2, chi_mm_yy=0.3, chi_mm_xx=0.0)
    b = GstcFlat(chi_ee_zz=0.2, chi_mm_yy=0.3, chi_mm_xx=5.0)
    fn, _ = symbolic_functional(("plus", "minus"))
    np.testing.assert_array_equal(condition_rows(a, one_sample(), 0, fn, 1.0),
                                  condition_rows(b, one_sample(), 0, fn, 1.0))
