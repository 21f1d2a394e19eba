"""Built-in test problems: geometry, media, exact solutions and sources.

Fields are written with sympy so that every derivative needed by initial
data, surface right-hand sides and source terms is obtained analytically
and lambdified once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Callable

import numpy as np
import sympy as sp

from .conditions import PEC, PMC, GstcFlat, Impedance, Interface, SurfaceCondition
from .geometry import LevelSetSurface

x, y, t = sp.symbols("x y t", real=True)


class ScenarioError(ValueError):
    pass


class SymbolicField:
    """A sympy expression in ``(x, y, t)`` with cached derivative callables."""

    def __init__(self, expr):
        self.expr = sp.sympify(expr)
        self._cache = {}

    @property
    def is_zero(self):
        return self.expr == 0

    def derivative(self, ax=0, ay=0, at=0) -> Callable:
        key = (ax, ay, at)
        fn = self._cache.get(key)
        if fn is None:
            e = self.expr
            for sym, n in ((x, ax), (y, ay), (t, at)):
                if n:
                    e = sp.diff(e, sym, n)
            raw = sp.lambdify((x, y, t), e, "numpy")

            def fn(X, Y, T, _raw=raw):
                X, Y, T = np.broadcast_arrays(np.asarray(X, float), np.asarray(Y, float),
                                              np.asarray(T, float))
                return np.broadcast_to(np.asarray(_raw(X, Y, T), dtype=float), X.shape).copy()

            self._cache[key] = fn
        return fn

    def __call__(self, X, Y, T, ax=0, ay=0, at=0):
        return self.derivative(ax, ay, at)(X, Y, T)

    def scaled_taylor(self, X, Y, T, K, hx, hy, q=0, ht=1.0):
        """Scaled derivatives ``d^{k+l+s} f hx^k hy^l ht^s / (k! l! s!)``.

        Returns shape ``X.shape + (K, K)`` when ``q == 0`` and
        ``X.shape + (K, K, q)`` otherwise (time orders ``0..q-1``).
        """
        X = np.asarray(X, float)
        ns = max(q, 1)
        out = np.zeros(X.shape + (K, K, ns))
        if self.is_zero:
            return out if q else out[..., 0]
        for k in range(K):
            for l in range(K):
                for s in range(ns):
                    fac = hx**k * hy**l * ht**s / (factorial(k) * factorial(l) * factorial(s))
                    out[..., k, l, s] = fac * self(X, Y, T, k, l, s)
        return out if q else out[..., 0]


@dataclass
class Medium:
    """Material and field data of one region label."""

    mu: object
    eps: object
    fields: tuple | None = None  # exact (Hx, Hy, Ez) or None
    initial: tuple | None = None  # initial (Hx, Hy, Ez) when there is no exact solution
    boundary: tuple | None = None  # fields driving surface data when there is no exact solution

    def __post_init__(self):
        self.mu = sp.sympify(self.mu)
        self.eps = sp.sympify(self.eps)
        self._sym = {}

    @property
    def constant(self):
        return not (self.mu.free_symbols or self.eps.free_symbols)

    def quantity(self, name) -> SymbolicField:
        """``Hx Hy Ez muHx muHy Bx By Dz inv_mu inv_eps`` or ``f`` (Ampere source)."""
        if name not in self._sym:
            self._sym[name] = SymbolicField(self._expr(name))
        return self._sym[name]

    def _expr(self, name):
        if name == "inv_mu":
            return 1 / self.mu
        if name == "inv_eps":
            return 1 / self.eps
        src = self.fields if self.fields is not None else self.initial
        if src is None:
            return sp.Integer(0)
        Hx, Hy, Ez = (sp.sympify(e) for e in src)
        table = {
            "Hx": Hx, "Hy": Hy, "Ez": Ez,
            "muHx": self.mu * Hx, "muHy": self.mu * Hy,
            "Bx": self.mu * Hx, "By": self.mu * Hy, "Dz": self.eps * Ez,
        }
        if name == "f":
            if self.fields is None:
                return sp.Integer(0)
            f = sp.diff(self.eps * Ez, t) - sp.diff(Hy, x) + sp.diff(Hx, y)
            return sp.simplify(f)
        return table[name]

    def residuals(self):
        """Faraday residuals and the magnetic divergence of the exact fields."""
        Hx, Hy, Ez = (sp.sympify(e) for e in self.fields)
        return (
            sp.diff(self.mu * Hx, t) + sp.diff(Ez, y),
            sp.diff(self.mu * Hy, t) - sp.diff(Ez, x),
            sp.diff(self.mu * Hx, x) + sp.diff(self.mu * Hy, y),
        )


@dataclass
class SurfaceSpec:
    surface: LevelSetSurface
    condition: SurfaceCondition
    sides: dict  # condition side name -> region label
    data: str | None = "exact"  # "exact", "initial" or None (homogeneous)


@dataclass
class Scenario:
    name: str
    bounds: tuple
    kind: str  # free, boundary, interface
    media: dict  # region label -> Medium
    region: Callable  # (X, Y) -> int labels, -1 inactive
    surfaces: list = field(default_factory=list)
    c_max: float = 1.0
    t0: float = 0.0
    tf: float = 1.0
    exact: bool = True
    meshes: tuple = (1 / 28, 1 / 56, 1 / 112)
    params: dict = field(default_factory=dict)
    description: str = ""

    @property
    def variable(self):
        return any(not med.constant for med in self.media.values())

    @property
    def gstc(self):
        return any(isinstance(s.condition, GstcFlat) for s in self.surfaces)

    def defaults(self, m):
        """Default ``(d, N_d, cfl)`` for order parameter ``m``."""
        if self.gstc:
            d, nd = 2 * m + 1, 2 * m
        else:
            d, nd = 2 * m, 2 * m
        if "n_d" in self.params:
            nd = min(self.params["n_d"], nd)
        cfl = 0.5
        if m >= 3 and any(isinstance(s.condition, Impedance) for s in self.surfaces):
            cfl = 0.25
        return d, nd, cfl

    def field_names(self):
        return ("Bx", "By", "Dz") if self.variable else ("Hx", "Hy", "Ez")


# ----------------------------------------------------------------------
# catalogue


def standing_mode(w):
    a = w * sp.pi
    r2 = sp.sqrt(2)
    return (
        -sp.sin(a * x) * sp.cos(a * y) * sp.sin(r2 * a * t) / r2,
        sp.cos(a * x) * sp.sin(a * y) * sp.sin(r2 * a * t) / r2,
        sp.sin(a * x) * sp.sin(a * y) * sp.cos(r2 * a * t),
    )


def incident_pulse(gamma, sigma):
    s = x - gamma - t
    Hy = -2 / sigma**2 * s * sp.exp(-(s**2) / sigma**2)
    return (sp.Integer(0), Hy, -Hy)


def _inside(surf, label_in, label_out):
    def region(X, Y):
        return np.where(surf.phi(X, Y) < 0, label_in, label_out)

    return region


def _free_space():
    med = Medium(1, 1, standing_mode(2))
    return Scenario(
        "free-space", (0.0, 1.0, 0.0, 1.0), "free", {0: med},
        lambda X, Y: np.zeros(np.shape(X), dtype=int),
        meshes=(1 / 20, 1 / 40, 1 / 80),
        description="periodic standing mode, no surface",
    )


def _star_boundary(name, cond):
    star = LevelSetSurface.three_star(0.5, 0.5, 0.3, 0.1, 3.0)
    med = Medium(1, 1, standing_mode(5))
    return Scenario(
        name, (0.0, 1.0, 0.0, 1.0), "boundary", {0: med}, _inside(star, 0, -1),
        surfaces=[SurfaceSpec(star, cond, {"one": 0})],
        description=f"standing mode inside a three-star, {cond.name} boundary with sources",
    )


def _varcoeff(w=3 * sp.pi):
    star = LevelSetSurface.three_star(0.5, 0.5, 0.3, 0.1, 3.0)
    phase = w * (x + y + t)
    fields = (
        sp.sin(phase),
        -sp.sin(phase),
        -w * sp.exp(x + y) / (w**2 + 1) * (w * sp.sin(phase) + sp.cos(phase)),
    )
    med = Medium(sp.exp(x + y), 2 * (w**2 + 1) / w**2 * sp.exp(-x - y), fields)
    c = float(w / sp.sqrt(2 * (w**2 + 1)))
    return Scenario(
        "varcoeff-pec-star", (0.0, 1.0, 0.0, 1.0), "boundary", {0: med}, _inside(star, 0, -1),
        surfaces=[SurfaceSpec(star, PEC(), {"one": 0})], c_max=c,
        meshes=(1 / 30, 1 / 60, 1 / 120), params={"omega": float(w), "n_d": 2},
        description="mu = exp(x+y), variable eps, PEC three-star, Ampere source",
    )


def _pulse_pec():
    star = LevelSetSurface.three_star(0.5, 0.0, 0.3, 0.1, 3.0)
    med = Medium(1, 1, None, incident_pulse(-0.3, 1 / 20))
    return Scenario(
        "pulse-pec-star", (-1.0, 1.0, -1.0, 1.0), "boundary", {0: med}, _inside(star, -1, 0),
        surfaces=[SurfaceSpec(star, PEC(), {"one": 0}, data=None)], exact=False,
        meshes=(1 / 40, 1 / 80, 1 / 160), params={"reference_h": 1 / 320},
        description="Gaussian-derivative pulse scattered by a PEC three-star (self-convergence)",
    )


def _interface_star(alpha=3):
    star = LevelSetSurface.three_star(0.5, 0.5, 0.3, 0.1, 3.0)
    ph = 2 * sp.pi * alpha * (x + y + t)
    outer = Medium(3, sp.Rational(2, 3), (-sp.cos(ph) / 3, sp.cos(ph) / 3, sp.cos(ph)))
    inner = Medium(1, 1, standing_mode(5))
    return Scenario(
        "interface-star", (0.0, 1.0, 0.0, 1.0), "interface", {0: outer, 1: inner},
        _inside(star, 1, 0), surfaces=[SurfaceSpec(star, Interface(), {"plus": 1, "minus": 0})],
        params={"alpha": alpha},
        description="plane wave outside, standing mode inside a three-star interface",
    )


def _identical_interface():
    star = LevelSetSurface.three_star(0.5, 0.5, 0.3, 0.1, 3.0)
    fields = standing_mode(2)
    return Scenario(
        "interface-identical", (0.0, 1.0, 0.0, 1.0), "interface",
        {0: Medium(1, 1, fields), 1: Medium(1, 1, fields)}, _inside(star, 1, 0),
        surfaces=[SurfaceSpec(star, Interface(), {"plus": 1, "minus": 0}, data=None)],
        meshes=(1 / 20, 1 / 40, 1 / 80),
        description="three-star interface between identical media (invisible surface)",
    )


def _dielectric_cylinder():
    inner = LevelSetSurface.circle(0.0, 0.0, 0.6)
    outer = LevelSetSurface.circle(0.0, 0.0, 0.8)
    pulse = incident_pulse(-1.1, 1 / 20)
    # the pulse starts outside r = 0.8, so the initial state is zero
    media = {0: Medium(2, sp.Rational(9, 4), None, (0, 0, 0)),
             1: Medium(1, 1, None, (0, 0, 0), boundary=pulse)}

    def region(X, Y):
        r = np.hypot(X, Y)
        return np.where(r < 0.6, 0, np.where(r <= 0.8, 1, -1))

    return Scenario(
        "dielectric-cylinder", (-1.0, 1.0, -1.0, 1.0), "interface", media, region,
        surfaces=[
            SurfaceSpec(inner, Interface(), {"plus": 1, "minus": 0}, data=None),
            SurfaceSpec(outer, PEC(), {"one": 1}, data="boundary"),
        ],
        c_max=1.0, exact=False, meshes=(1 / 40, 1 / 80, 1 / 160), params={"reference_h": 1 / 320},
        description="circular magnetic dielectric inside a driven PEC circle (self-convergence)",
    )


def _dielectric_star_pulse():
    star = LevelSetSurface.three_star(0.5, 0.0, 0.3, 0.1, 3.0)
    media = {0: Medium(1, 1, None, incident_pulse(-0.3, 1 / 20)), 1: Medium(2, 2, None, (0, 0, 0))}
    return Scenario(
        "dielectric-star-pulse", (-1.0, 1.0, -1.0, 1.0), "interface", media, _inside(star, 1, 0),
        surfaces=[SurfaceSpec(star, Interface(), {"plus": 1, "minus": 0}, data=None)],
        exact=False, meshes=(1 / 40, 1 / 80, 1 / 160), params={"reference_h": 1 / 320},
        description="pulse illuminating a three-star magnetic dielectric (self-convergence)",
    )


def _gstc_flat(w=4 * sp.pi):
    xg = 0.5 + np.pi / 100
    ph = w * (x + y + t)
    minus = Medium(1, 2, (-sp.sin(ph), sp.sin(ph), sp.sin(ph)))
    plus = Medium(1, 2, (-sp.cos(ph), sp.cos(ph), sp.cos(ph)))
    wf = float(w)
    cond = GstcFlat(chi_ee_zz=2 / wf, chi_mm_yy=2 / wf, chi_mm_xx=2 / (3 * wf))
    left = LevelSetSurface.vertical_line(0.2, normal_sign=-1.0)
    mid = LevelSetSurface.vertical_line(xg)
    right = LevelSetSurface.vertical_line(0.8)

    def region(X, Y):
        X = np.asarray(X)
        return np.where((X < 0.2) | (X > 0.8), -1, np.where(X < xg, 0, 1))

    return Scenario(
        "gstc-flat", (0.0, 1.0, 0.0, 1.0), "interface", {0: minus, 1: plus}, region,
        surfaces=[
            SurfaceSpec(left, PEC(), {"one": 0}),
            SurfaceSpec(mid, cond, {"plus": 1, "minus": 0}, data=None),
            SurfaceSpec(right, PEC(), {"one": 1}),
        ],
        c_max=1 / np.sqrt(2), meshes=(1 / 30, 1 / 60, 1 / 120),
        params={"omega": wf, "x_gamma": xg},
        description="flat GSTC metasurface between PEC walls",
    )


@lru_cache(maxsize=1)
def _catalogue():
    items = [
        _free_space(),
        _star_boundary("pec-star", PEC()),
        _star_boundary("pmc-star", PMC()),
        _star_boundary("impedance-star", Impedance(1.0)),
        _varcoeff(),
        _pulse_pec(),
        _interface_star(),
        _identical_interface(),
        _dielectric_cylinder(),
        _dielectric_star_pulse(),
        _gstc_flat(),
    ]
    return {s.name: s for s in items}


def builtin_scenarios() -> dict:
    return dict(_catalogue())


def get_scenario(name: str) -> Scenario:
    cat = _catalogue()
    if name not in cat:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {', '.join(cat)}")
    return cat[name]


def boundary_field(medium: Medium, spec: SurfaceSpec, quantity: str) -> SymbolicField | None:
    """Exact data feeding a surface right-hand side, ``None`` when homogeneous."""
    if spec.data is None:
        return None
    if spec.data == "boundary":
        key = ("boundary", quantity)
        if key not in medium._sym:
            Hx, Hy, Ez = (sp.sympify(e) for e in medium.boundary)
            table = {"Hx": Hx, "Hy": Hy, "Ez": Ez, "muHx": medium.mu * Hx, "muHy": medium.mu * Hy}
            medium._sym[key] = SymbolicField(table[quantity])
        return medium._sym[key]
    return medium.quantity(quantity)
