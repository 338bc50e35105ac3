"""Model problems for  u_t - i alpha u_xx + i g(x,t) u = f(x,t)  on (a,b),
homogeneous Dirichlet data, plus the physical observables.

The semiclassical form i eps u_t = -(eps^2/2) u_xx + V u corresponds to
alpha = eps/2, g = V/eps, f = 0, with WKB initial data
u_0 = sqrt(n_0) exp(i S_0 / eps).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .spline import FeFunction


@dataclass
class WkbData:
    """WKB initial condition sqrt(n_0(x)) * exp(i S_0(x) / eps)."""

    n0_sqrt: Callable[[np.ndarray], np.ndarray]
    s0: Callable[[np.ndarray], np.ndarray]
    eps: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.n0_sqrt(x) * np.exp(1j * self.s0(x) / self.eps)


@dataclass
class ProblemSpec:
    name: str
    a: float
    b: float
    T: float
    alpha: float
    u0: Callable[[np.ndarray], np.ndarray]
    g: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    f: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    g_const: Optional[float] = None       # set when g is constant in x and t
    g_time_dependent: bool = False
    exact: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    eps: Optional[float] = None
    t0: float = 0.0

    @property
    def interval(self):
        return (self.a, self.b)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def _soliton_phase(lam: float, center: float = 0.5):
    """The bump/phase pair exp(-lam^2 (x-c)^2), -(1/lam) log(2 cosh(lam (x-c)))."""
    def n0_sqrt(x):
        return np.exp(-(lam**2) * (x - center) ** 2)

    def s0(x):
        y = lam * (x - center)
        return -np.logaddexp(y, -y) / lam

    return n0_sqrt, s0


def _semiclassical(name, a, b, T, eps, u0, V=None, V_const=None,
                   time_dependent=False, exact=None):
    """alpha = eps/2, g = V/eps, f = 0."""
    if V_const is not None:
        gc = V_const / eps
        g = lambda x, t: np.full_like(np.asarray(x, dtype=float), gc)
        return ProblemSpec(name=name, a=a, b=b, T=T, alpha=0.5 * eps, u0=u0,
                           g=g, g_const=gc, exact=exact, eps=eps)
    g = lambda x, t: V(x, t) / eps
    return ProblemSpec(name=name, a=a, b=b, T=T, alpha=0.5 * eps, u0=u0,
                       g=g, g_time_dependent=time_dependent, exact=exact, eps=eps)


def _constant_well(name, a, b, T, lam, eps):
    n0_sqrt, s0 = _soliton_phase(lam)
    return _semiclassical(name, a, b, T, eps,
                          WkbData(n0_sqrt, s0, eps), V_const=10.0)


def _exp2():
    # exact solution e^{-25(x-t)^2} e^{i(1+t)(1+x)} with V = (1+t)^2 x^2 / 2;
    # f obtained by substituting u into u_t - (i/2) u_xx + i V u.
    def exact(x, t):
        x = np.asarray(x, dtype=float)
        return np.exp(-25.0 * (x - t) ** 2) * np.exp(1j * (1.0 + t) * (1.0 + x))

    def f(x, t):
        x = np.asarray(x, dtype=float)
        re = -50.0 * t * (x - t)
        im = (1.0 + x) + 25.0 - 1250.0 * (x - t) ** 2 \
            + 0.5 * (1.0 + t) ** 2 * (1.0 + x**2)
        return (re + 1j * im) * exact(x, t)

    return ProblemSpec(
        name="exp2", a=-2.0, b=2.0, T=1.0, alpha=0.5,
        u0=lambda x: exact(x, 0.0),
        g=lambda x, t: 0.5 * (1.0 + t) ** 2 * np.asarray(x, dtype=float) ** 2,
        g_time_dependent=True, f=f, exact=exact,
    )


def _catalog_builders():
    def exp1a(eps):
        eps = 1.0 if eps is None else eps
        u0 = WkbData(lambda x: np.exp(-12.5 * x**2), lambda x: 0.5 * x**2, eps)
        return _semiclassical("exp1a", -2.0, 2.0, 1.0, eps, u0, V_const=100.0)

    def exp1b(eps):
        eps = 0.5 if eps is None else eps
        u0 = WkbData(lambda x: np.exp(-25.0 * (x - 0.5) ** 2), lambda x: 1.0 + x, eps)
        return _semiclassical("exp1b", -2.0, 2.0, 1.0, eps, u0,
                              V=lambda x, t: 0.5 * np.asarray(x, dtype=float) ** 2)

    def exp1c(eps):
        eps = 0.25 if eps is None else eps
        _, s0 = _soliton_phase(5.0)
        u0 = WkbData(lambda x: np.exp(-12.5 * x**2), s0, eps)
        return _semiclassical("exp1c", -2.0, 2.0, 1.0, eps, u0,
                              V=lambda x, t: (np.asarray(x, dtype=float) ** 2 - 0.25) ** 2)

    def sensitivity(eps):
        return _constant_well("sensitivity", -1.0, 2.0, 0.54, 5.0,
                              0.005 if eps is None else eps)

    def case1(eps):
        return _constant_well("case1", 0.0, 1.0, 0.1, 30.0,
                              1e-4 if eps is None else eps)

    def case2(eps):
        eps = 1e-3 if eps is None else eps
        n0_sqrt, s0 = _soliton_phase(5.0)
        return _semiclassical("case2", -1.0, 2.0, 0.54, eps,
                              WkbData(n0_sqrt, s0, eps),
                              V=lambda x, t: 0.5 * np.asarray(x, dtype=float) ** 2)

    def tdep1(eps):
        eps = 1e-2 if eps is None else eps
        n0_sqrt, _ = _soliton_phase(12.0, center=1.5)
        u0 = WkbData(n0_sqrt, lambda x: 5.0 * (x**2 - x), eps)
        return _semiclassical("tdep1", 1.0, 2.0, 3.0, eps, u0,
                              V=lambda x, t: 0.5 * np.asarray(x, dtype=float) ** 2 / (10.0 * t + 0.05),
                              time_dependent=True)

    def tdep2(eps):
        eps = 2.5e-3 if eps is None else eps
        n0_sqrt, _ = _soliton_phase(5.0)
        u0 = WkbData(n0_sqrt, lambda x: 5.0 * (x**2 - x), eps)
        return _semiclassical("tdep2", -1.0, 2.0, 1.0, eps, u0,
                              V=lambda x, t: 0.5 * np.asarray(x, dtype=float) ** 2 / (t + 0.05),
                              time_dependent=True)

    def obs1(eps):
        p = _constant_well("obs1", -1.0, 2.0, 0.54, 5.0, 1e-3 if eps is None else eps)
        return p

    def obs2(eps):
        return _constant_well("obs2", -1.0, 2.0, 0.54, 5.0,
                              2.5e-4 if eps is None else eps)

    def obs3(eps):
        return _constant_well("obs3", 0.0, 1.0, 0.1, 30.0,
                              5e-5 if eps is None else eps)

    return {
        "exp1a": exp1a, "exp1b": exp1b, "exp1c": exp1c,
        "exp2": lambda eps: _exp2(),
        "sensitivity": sensitivity, "case1": case1, "case2": case2,
        "tdep1": tdep1, "tdep2": tdep2,
        "obs1": obs1, "obs2": obs2, "obs3": obs3,
    }


def catalog(name: str, eps: float | None = None) -> ProblemSpec:
    """Built-in problem by name; eps overrides the default Planck scale
    where the problem has one."""
    builders = _catalog_builders()
    key = name.lower()
    if key not in builders:
        raise ValueError(f"unknown problem {name!r}; known: {sorted(builders)}")
    return builders[key](eps)


def observable_grid(u: FeFunction, n: int = 4096) -> np.ndarray:
    """Uniform sample grid over the domain, augmented with all breakpoints."""
    mesh = u.space.mesh
    xs = np.union1d(np.linspace(mesh.a, mesh.b, n), mesh.breakpoints())
    return xs


def position_density(u: FeFunction, grid: np.ndarray) -> np.ndarray:
    """N(x) = |u(x)|^2."""
    return np.abs(u(grid)) ** 2


def current_density(u: FeFunction, grid: np.ndarray) -> np.ndarray:
    """J(x) = Im( conj(u) u_x )."""
    return np.imag(np.conj(u(grid)) * u(grid, deriv=1))
