"""Surface conditions as row generators over correction-polynomial coefficients.

A condition is a list of scalar equations.  Each equation is a linear
combination of terms ``coef(n) * d_t^(j + nt) d_y^ny q`` where ``q`` is a
field quantity (``Hx``, ``Hy``, ``Ez``, ``muHx``, ``muHy``) taken on one
side of the surface.  The DCFM engine supplies a *functional* that turns a
term into matrix rows over the patch unknowns, and scenarios supply a
*provider* that evaluates the same term on the exact data, so matrix rows
and right-hand sides are generated by one piece of code.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

QUANTITIES = ("Hx", "Hy", "Ez", "muHx", "muHy")
SCALES = ("Z0", "c0", "1")


def _one(nx, ny):
    return np.ones_like(nx)


@dataclass(frozen=True)
class Term:
    coef: Callable  # (nx, ny) -> array
    side: str  # "one" for boundaries, "plus" / "minus" for two-sided conditions
    quantity: str
    nt: int = 0  # extra time derivatives on top of j
    ny: int = 0  # y derivatives


@dataclass(frozen=True)
class Equation:
    scale: str  # reference factor multiplying the row: Z0, c0 or 1
    terms: tuple


def _jump(quantity, coef=_one, scale_sign=1.0):
    return (
        Term(lambda nx, ny: scale_sign * coef(nx, ny), "plus", quantity),
        Term(lambda nx, ny: -scale_sign * coef(nx, ny), "minus", quantity),
    )


def _avg(quantity, factor, nt=0, ny=0):
    return (
        Term(lambda nx, ny_: np.full_like(nx, 0.5 * factor), "plus", quantity, nt, ny),
        Term(lambda nx, ny_: np.full_like(nx, 0.5 * factor), "minus", quantity, nt, ny),
    )


@dataclass(frozen=True)
class SurfaceCondition:
    """Base class; subclasses define ``equations()``."""

    name: str = field(init=False, default="condition")
    two_sided: bool = field(init=False, default=False)
    # highest extra time derivative used by any term (GSTC differentiates once more)
    extra_order: int = field(init=False, default=0)

    def equations(self) -> list[Equation]:
        raise NotImplementedError

    def omega_s(self, L0: float) -> float:
        return 1.0

    def sides(self):
        return ("plus", "minus") if self.two_sided else ("one",)

    def max_nd(self, d: int) -> int:
        return d - self.extra_order


@dataclass(frozen=True)
class PEC(SurfaceCondition):
    name: str = field(init=False, default="pec")

    def equations(self):
        return [
            Equation("1", (Term(_one, "one", "Ez"),)),
            Equation("c0", (Term(lambda nx, ny: nx, "one", "muHx"),
                            Term(lambda nx, ny: ny, "one", "muHy"))),
        ]


@dataclass(frozen=True)
class PMC(SurfaceCondition):
    name: str = field(init=False, default="pmc")

    def equations(self):
        return [
            Equation("Z0", (Term(lambda nx, ny: nx, "one", "Hy"),
                            Term(lambda nx, ny: -ny, "one", "Hx"))),
        ]


@dataclass(frozen=True)
class Impedance(SurfaceCondition):
    """``E_z - Z (n_y H_x - n_x H_y) = g`` with ``Z = sqrt(mu/eps)``."""

    Z: float = 1.0
    name: str = field(init=False, default="impedance")

    @classmethod
    def from_medium(cls, mu, eps):
        return cls(float(np.sqrt(mu / eps)))

    def equations(self):
        Z = self.Z
        return [
            Equation("1", (Term(_one, "one", "Ez"),
                           Term(lambda nx, ny: -Z * ny, "one", "Hx"),
                           Term(lambda nx, ny: Z * nx, "one", "Hy"))),
        ]


@dataclass(frozen=True)
class Interface(SurfaceCondition):
    """Continuity of tangential H, normal mu H and E_z (jumps are plus minus minus)."""

    name: str = field(init=False, default="interface")
    two_sided: bool = field(init=False, default=True)

    def equations(self):
        return [
            Equation("Z0", _jump("Hy", lambda nx, ny: nx) + _jump("Hx", lambda nx, ny: -ny)),
            Equation("c0", _jump("muHx", lambda nx, ny: nx) + _jump("muHy", lambda nx, ny: ny)),
            Equation("1", _jump("Ez")),
        ]


@dataclass(frozen=True)
class GstcFlat(SurfaceCondition):
    """Flat vertical metasurface with normal (1, 0).

    ``chi_mm_xx`` is kept for completeness; the TM_z flat model has no term
    that uses it.
    """

    chi_ee_zz: float = 0.0
    chi_mm_yy: float = 0.0
    chi_mm_xx: float = 0.0
    mu0: float = 1.0
    eps0: float = 1.0
    name: str = field(init=False, default="gstc")
    two_sided: bool = field(init=False, default=True)
    extra_order: int = field(init=False, default=1)

    def omega_s(self, L0):
        return L0

    def equations(self):
        ce = self.eps0 * self.chi_ee_zz
        cm = self.mu0 * self.chi_mm_yy
        return [
            Equation("Z0", _jump("Hy") + _avg("Ez", -ce, nt=1)),
            Equation("c0", _jump("muHx") + _avg("Hy", cm, ny=1)),
            Equation("1", _jump("Ez") + _avg("Hy", -cm, nt=1)),
        ]


def scale_factor(scale, Z0=1.0, c0=1.0):
    return {"Z0": Z0, "c0": c0, "1": 1.0}[scale]


def prefactor(cond, j, n_samples, L0, c0=1.0):
    """``(omega_s / N_S) (L0 / c0)^j``."""
    return cond.omega_s(L0) / n_samples * (L0 / c0) ** j


def condition_rows(cond: SurfaceCondition, samples, j, functional, L0, Z0=1.0, c0=1.0, n_samples=None):
    """Rows for derivative order ``j``: one block of ``N_S`` rows per equation.

    ``functional(side, quantity, nt, ny)`` returns the ``(N_S, N_c)``
    matrix evaluating ``d_t^nt d_y^ny quantity`` at the samples.
    ``n_samples`` overrides the normalisation count when several patches'
    samples are stacked.
    """
    nx, ny = samples["nx"], samples["ny"]
    ns = len(nx)
    pre = prefactor(cond, j, n_samples or ns, L0, c0)
    blocks = []
    for eq in cond.equations():
        rows = None
        for term in eq.terms:
            block = term.coef(nx, ny)[:, None] * functional(term.side, term.quantity, j + term.nt, term.ny)
            rows = block if rows is None else rows + block
        blocks.append(pre * scale_factor(eq.scale, Z0, c0) * rows)
    return np.vstack(blocks)


def condition_rhs(cond: SurfaceCondition, samples, j, provider, L0, Z0=1.0, c0=1.0, n_samples=None):
    """Right-hand side matching :func:`condition_rows`.

    ``provider(side, quantity, nt, ny)`` returns the exact values at the
    samples, or ``None`` for homogeneous data.
    """
    nx, ny = samples["nx"], samples["ny"]
    ns = len(nx)
    pre = prefactor(cond, j, n_samples or ns, L0, c0)
    out = []
    for eq in cond.equations():
        val = np.zeros(ns)
        for term in eq.terms:
            v = provider(term.side, term.quantity, j + term.nt, term.ny)
            if v is not None:
                val = val + term.coef(nx, ny) * v
        out.append(pre * scale_factor(eq.scale, Z0, c0) * val)
    return np.concatenate(out)


def pec_rows(samples, j, functional, L0, Z0=1.0, c0=1.0):
    return condition_rows(PEC(), samples, j, functional, L0, Z0, c0)


def pmc_rows(samples, j, functional, L0, Z0=1.0, c0=1.0):
    return condition_rows(PMC(), samples, j, functional, L0, Z0, c0)


def impedance_rows(samples, j, functional, L0, Z=1.0, Z0=1.0, c0=1.0):
    return condition_rows(Impedance(Z), samples, j, functional, L0, Z0, c0)


def interface_rows(samples, j, functional, L0, Z0=1.0, c0=1.0):
    return condition_rows(Interface(), samples, j, functional, L0, Z0, c0)


def gstc_rows(samples, j, functional, L0, chi_ee_zz, chi_mm_yy, mu0=1.0, eps0=1.0, Z0=1.0, c0=1.0):
    cond = GstcFlat(chi_ee_zz=chi_ee_zz, chi_mm_yy=chi_mm_yy, mu0=mu0, eps0=eps0)
    return condition_rows(cond, samples, j, functional, L0, Z0, c0)
