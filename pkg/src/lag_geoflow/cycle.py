"""Symmetric circles on M^1 and the matching cycles they represent.

A symmetric circle u -> (z(u), zeta(u)) is stored on the half grid
u_k = pi*k/N, k = 0..N.  The other half follows from the equivariance
zeta(-u) = zeta(u), z(-u) = -z(u), so evenness and oddness hold exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from numpy.polynomial import polynomial as P

from . import _spectral as sp
from .errors import (
    ArcEndpointNotRoot,
    ArcThroughRoot,
    DistinctRootsRequired,
    InvalidCycle,
    InvalidInput,
    NotPositive,
)
from .fiber import MilnorFiber, _as_complex, fiber_from_json, nearest_sqrt
from .tolerances import DEFAULT, ToleranceProfile


def sphere_volume(n: int) -> float:
    """Volume of the unit (n-1)-sphere, V_{n-1} = 2 pi^{n/2} / Gamma(n/2)."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True, eq=False)
class SymmetricCircle:
    """Discrete O(1)-equivariant circle on M^1.

    Attributes
    ----------
    fiber : MilnorFiber
    zeta, z : numpy.ndarray
        Complex samples on the half grid k = 0..N.
    root_at_0, root_at_pi : int
        Indices of the roots of f at u = 0 and u = pi.
    """

    fiber: MilnorFiber
    zeta: np.ndarray
    z: np.ndarray
    root_at_0: int = field(default=-1)
    root_at_pi: int = field(default=-1)

    def __post_init__(self):
        zeta = np.array(self.zeta, dtype=complex)
        z = np.array(self.z, dtype=complex)
        if zeta.ndim != 1 or zeta.shape != z.shape or zeta.size < 5:
            raise InvalidCycle("zeta and z must be 1-d arrays of equal length N+1 >= 5")
        fib = self.fiber
        tol = fib.tol
        j0 = fib.root_index(zeta[0])
        j1 = fib.root_index(zeta[-1])
        if j0 is None or j1 is None:
            raise ArcEndpointNotRoot("cycle endpoints must lie on roots of f")
        if j0 == j1:
            raise DistinctRootsRequired("cycle endpoints must be two distinct roots")
        zeta[0] = fib.roots[j0]
        zeta[-1] = fib.roots[j1]
        if abs(z[0]) > 1e-8 or abs(z[-1]) > 1e-8:
            raise InvalidCycle("z must vanish at u = 0 and u = pi")
        z[0] = 0.0
        z[-1] = 0.0
        if np.any(np.abs(z[1:-1]) == 0):
            raise InvalidCycle("z vanishes at an interior grid point")
        fv = fib.f(zeta)
        res = np.abs(z * z - fv)
        if np.any(res > tol.on_fiber * (1 + np.abs(fv))):
            raise InvalidCycle(f"points are off the fiber (residual {res.max():.3e})")
        if not _polyline_simple(zeta):
            raise InvalidCycle("zeta-image of the half circle is not embedded")
        zeta.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "root_at_0", j0)
        object.__setattr__(self, "root_at_pi", j1)

    @property
    def N(self) -> int:
        return self.zeta.size - 1

    @property
    def n(self) -> int:
        return self.fiber.n

    @property
    def tol(self) -> ToleranceProfile:
        return self.fiber.tol

    @cached_property
    def u(self) -> np.ndarray:
        return np.pi * np.arange(self.N + 1) / self.N

    @cached_property
    def zeta_full(self) -> np.ndarray:
        return sp.mirror_even(self.zeta)

    @cached_property
    def z_full(self) -> np.ndarray:
        return sp.mirror_odd(self.z)

    @cached_property
    def dzeta(self) -> np.ndarray:
        """Spectral d(zeta)/du on the half grid."""
        d = sp.derivative(self.zeta_full)[: self.N + 1].copy()
        d[0] = d[-1] = 0.0
        return d

    @cached_property
    def dz(self) -> np.ndarray:
        return sp.derivative(self.z_full)[: self.N + 1]

    @cached_property
    def weights(self) -> np.ndarray:
        """Half-grid quadrature weights; full-circle integrals are twice the half sum."""
        return sp.gregory_weights(self.N, np.pi / self.N)

    @cached_property
    def zeta_interp(self) -> sp.TrigInterpolant:
        return sp.TrigInterpolant(self.zeta_full)

    @cached_property
    def z_interp(self) -> sp.TrigInterpolant:
        return sp.TrigInterpolant(self.z_full)

    def rho(self) -> np.ndarray:
        """Pullback coefficient rho = zeta' z^{n-2} / 2 at interior nodes (NaN at ends)."""
        out = np.full(self.N + 1, np.nan + 0j)
        zi = self.z[1:-1]
        out[1:-1] = self.dzeta[1:-1] * zi ** (self.n - 2) / 2
        return out

    def to_json(self) -> dict:
        return {
            "fiber": self.fiber.to_json(),
            "N": self.N,
            "zeta": [[c.real, c.imag] for c in self.zeta],
            "z": [[c.real, c.imag] for c in self.z],
        }

    def to_csv(self) -> str:
        try:
            mu = measure_density(self)
        except NotPositive:
            mu = np.full(self.N + 1, np.nan)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "re_zeta", "im_zeta", "re_z", "im_z", "mu"])
        for k in range(self.N + 1):
            w.writerow([repr(float(x)) for x in (self.u[k], self.zeta[k].real, self.zeta[k].imag,
                                                 self.z[k].real, self.z[k].imag, mu[k])])
        return buf.getvalue()

    def resample(self, n_new: int) -> "SymmetricCircle":
        """Trigonometric resampling to a new half-grid size."""
        u = np.pi * np.arange(n_new + 1) / n_new
        zeta = self.zeta_interp(u)
        fv = self.fiber.f(zeta)
        z = nearest_sqrt(fv, self.z_interp(u))
        z[0] = z[-1] = 0.0
        zeta[0], zeta[-1] = self.zeta[0], self.zeta[-1]
        return SymmetricCircle(self.fiber, zeta, z)


def _polyline_simple(pts: np.ndarray) -> bool:
    a = pts[:-1]
    b = pts[1:]
    m = a.size
    if m < 3:
        return True
    d = b - a

    def cross(p, q):
        return p.real * q.imag - p.imag * q.real

    ai = a[:, None]
    di = d[:, None]
    aj = a[None, :]
    dj = d[None, :]
    den = cross(di, dj)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(aj - ai, dj) / den
        s = cross(aj - ai, di) / den
    eps = 1e-12
    hit = (np.abs(den) > 1e-300) & (t > eps) & (t < 1 - eps) & (s > eps) & (s < 1 - eps)
    idx = np.arange(m)
    hit &= np.abs(idx[:, None] - idx[None, :]) > 1
    return not bool(np.any(hit))


@dataclass(frozen=True)
class PolynomialArc:
    """Polynomial path x -> sum c_i x^i in the zeta-plane, x in [0, 1]."""

    coeffs: tuple

    def __call__(self, x):
        return P.polyval(x, np.asarray(self.coeffs, dtype=complex))

    def derivative(self, x):
        return P.polyval(x, P.polyder(np.asarray(self.coeffs, dtype=complex)))

    @classmethod
    def parabolic(cls, a: float, left: complex = -1.0, right: complex = 1.0) -> "PolynomialArc":
        """Segment from ``right`` (x=0) to ``left`` (x=1) bent by a*i*(1 - s^2), s = 1 - 2x."""
        mid = (left + right) / 2
        half = (right - left) / 2
        # s = 1 - 2x;  zeta = mid + half*s + i*a*(1 - s^2)
        return cls((complex(right), complex(-2 * half + 4j * a), complex(-4j * a)))


def _arc_derivative(arc, x):
    if hasattr(arc, "derivative"):
        return arc.derivative(x)
    h = 1e-6
    return (arc(x + h) - arc(x - h)) / (2 * h)


def cycle_from_arc(fiber: MilnorFiber, arc: Callable, N: int) -> SymmetricCircle:
    """Symmetric circle over an arc joining two distinct roots.

    zeta(u) = arc((1 - cos u)/2) and z(u) = sin(u) sqrt(q(u)) with
    q = f(zeta)/sin^2(u), extended by its limits at u = 0, pi and continued
    along the grid.

    Raises
    ------
    ArcEndpointNotRoot, DistinctRootsRequired, ArcThroughRoot, InvalidInput
    """
    if int(N) != N or N < 4:
        raise InvalidInput("N must be an integer >= 4")
    tol = fiber.tol
    a0 = complex(arc(0.0))
    a1 = complex(arc(1.0))
    j0 = fiber.root_index(a0)
    j1 = fiber.root_index(a1)
    if j0 is None or j1 is None:
        raise ArcEndpointNotRoot(f"arc endpoints {a0}, {a1} are not roots of f")
    if j0 == j1:
        raise DistinctRootsRequired("arc must join two distinct roots of f")
    xs = np.linspace(0.0, 1.0, 16 * N + 1)[1:-1]
    pts = np.asarray(arc(xs), dtype=complex)
    dist = np.min(np.abs(pts[:, None] - np.asarray(fiber.roots)[None, :]), axis=1)
    if np.any(dist < tol.delta_branch):
        raise ArcThroughRoot("arc passes through a zero of f")
    d0 = complex(_arc_derivative(arc, 0.0))
    d1 = complex(_arc_derivative(arc, 1.0))
    if abs(d0) < 1e-12 or abs(d1) < 1e-12:
        raise InvalidInput("arc must have nonzero tangent at its endpoints")
    u = np.pi * np.arange(N + 1) / N
    w = (1 - np.cos(u)) / 2
    zeta = np.asarray(arc(w), dtype=complex)
    zeta[0] = fiber.roots[j0]
    zeta[-1] = fiber.roots[j1]
    s = np.sin(u)
    q = np.empty(N + 1, dtype=complex)
    q[1:-1] = fiber.f(zeta[1:-1]) / s[1:-1] ** 2
    q[0] = fiber.fprime(zeta[0]) * d0 / 4
    q[-1] = -fiber.fprime(zeta[-1]) * d1 / 4
    root_q = np.empty(N + 1, dtype=complex)
    root_q[0] = np.sqrt(q[0])
    for k in range(1, N + 1):
        root_q[k] = nearest_sqrt(q[k], root_q[k - 1])
    z = s * root_q
    z[0] = z[-1] = 0.0
    return SymmetricCircle(fiber, zeta, z)


def round_cycle(fiber: MilnorFiber, N: int) -> SymmetricCircle:
    """Straight segment between the two roots (sorted order, last to first)."""
    r = fiber.roots
    return cycle_from_arc(fiber, PolynomialArc((r[-1], r[0] - r[-1])), N)


@dataclass(frozen=True)
class PositivityReport:
    is_positive: bool
    margin: float
    worst_u: float


def check_positive(circle: SymmetricCircle) -> PositivityReport:
    """Test both positivity conditions of a matching cycle.

    Interior nodes need Re(zeta' z^{n-2}) != 0; the endpoints need
    Re((z')^n / f'(zeta)) != 0.  The margin is the smallest normalized
    |Re x| / |x| over all tested points; it is zero when Re rho changes
    sign between interior nodes, since a zero lies in between.
    """
    n = circle.n
    N = circle.N
    vals = np.empty(N + 1, dtype=complex)
    vals[1:-1] = circle.rho()[1:-1]
    for k in (0, N):
        vals[k] = circle.dz[k] ** n / circle.fiber.fprime(circle.zeta[k])
    mag = np.abs(vals)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(mag > 0, np.abs(vals.real) / mag, 0.0)
    k = int(np.argmin(ratio))
    margin = float(ratio[k])
    flips = np.nonzero(np.sign(vals[1:N - 1].real) != np.sign(vals[2:N].real))[0]
    if flips.size:
        k = int(flips[0]) + 1
        margin = 0.0
    return PositivityReport(bool(margin > circle.tol.positivity_floor), margin, float(circle.u[k]))


def _require_positive(circle: SymmetricCircle) -> None:
    rep = check_positive(circle)
    if not rep.is_positive:
        raise NotPositive(f"cycle is not positive (margin {rep.margin:.3e} at u={rep.worst_u:.4f})")


def _even_extrapolate(u: np.ndarray, vals: np.ndarray) -> float:
    """Value at 0 of the quadratic in u^2 through three samples."""
    coef = np.polyfit(u ** 2, vals, 2)
    return float(np.polyval(coef, 0.0))


def measure_density(circle: SymmetricCircle) -> np.ndarray:
    """Density mu_k of Re Omega in the u-variable on the half grid.

    mu = V_{n-1} |Re(z^{n-2} zeta' / 2)|.  For n >= 2 the endpoint values
    are evaluated directly (they vanish); for n = 1 they are extrapolated
    evenly from the three nearest interior nodes.
    """
    cached = circle.__dict__.get("_mu")
    if cached is not None:
        return cached
    _require_positive(circle)
    n = circle.n
    N = circle.N
    mu = np.empty(N + 1)
    mu[1:-1] = np.abs(circle.rho()[1:-1].real)
    if n >= 2:
        for k in (0, N):
            mu[k] = abs((circle.z[k] ** (n - 2) * circle.dzeta[k] / 2).real)
    else:
        h = circle.u[1:4]
        mu[0] = _even_extrapolate(h, mu[1:4])
        mu[-1] = _even_extrapolate(h, mu[-2:-5:-1])
    mu *= sphere_volume(n)
    mu.setflags(write=False)
    circle.__dict__["_mu"] = mu
    return mu


@dataclass(frozen=True, eq=False)
class InvariantFunction:
    """Even function h(u) on the half grid k = 0..N.

    Attributes
    ----------
    values : numpy.ndarray
        Real samples h_k, k = 0..N.
    mean_zero : bool
        Whether the Upsilon-mean-zero normalization has been applied.
    """

    values: np.ndarray
    mean_zero: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size < 5:
            raise InvalidInput("invariant function needs N+1 >= 5 samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def N(self) -> int:
        return self.values.size - 1

    @classmethod
    def from_callable(cls, fn: Callable, N: int) -> "InvariantFunction":
        return cls(np.asarray(fn(np.pi * np.arange(N + 1) / N), dtype=float))

    @classmethod
    def from_fourier(cls, coeffs, N: int) -> "InvariantFunction":
        """h(u) = sum_m coeffs[m] cos(m u)."""
        u = np.pi * np.arange(N + 1) / N
        vals = sum(c * np.cos(m * u) for m, c in enumerate(coeffs))
        return cls(np.asarray(vals, dtype=float) + np.zeros(N + 1))

    @cached_property
    def full(self) -> np.ndarray:
        return sp.mirror_even(self.values)

    @cached_property
    def derivative(self) -> np.ndarray:
        """Spectral h'(u) on the half grid."""
        d = sp.derivative(self.full)[: self.N + 1].copy()
        d[0] = d[-1] = 0.0
        return d

    def __add__(self, other):
        return InvariantFunction(self.values + other.values, self.mean_zero and other.mean_zero)

    def __sub__(self, other):
        return InvariantFunction(self.values - other.values, self.mean_zero and other.mean_zero)

    def __neg__(self):
        return InvariantFunction(-self.values, self.mean_zero)

    def scaled(self, c: float) -> "InvariantFunction":
        return InvariantFunction(c * self.values, self.mean_zero)


def _check_grid(circle: SymmetricCircle, h: InvariantFunction) -> None:
    if h.N != circle.N:
        raise InvalidInput(f"function has N={h.N}, cycle has N={circle.N}")


def integrate(circle: SymmetricCircle, h: InvariantFunction) -> float:
    """Integral of h against Re Omega over the full circle."""
    _check_grid(circle, h)
    mu = measure_density(circle)
    return float(2.0 * np.sum(circle.weights * h.values * mu))


def total_mass(circle: SymmetricCircle) -> float:
    return float(2.0 * np.sum(circle.weights * measure_density(circle)))


def inner(circle: SymmetricCircle, h: InvariantFunction, k: InvariantFunction) -> float:
    """Upsilon(h, k) = integral of h k Re Omega."""
    _check_grid(circle, h)
    _check_grid(circle, k)
    mu = measure_density(circle)
    return float(2.0 * np.sum(circle.weights * h.values * k.values * mu))


def norm(circle: SymmetricCircle, h: InvariantFunction) -> float:
    return math.sqrt(max(inner(circle, h, h), 0.0))


def project_mean_zero(circle: SymmetricCircle, h: InvariantFunction) -> InvariantFunction:
    """Subtract the Re Omega mean of h."""
    mean = integrate(circle, h) / total_mass(circle)
    return InvariantFunction(h.values - mean, True)


def is_mean_zero(circle: SymmetricCircle, h: InvariantFunction, tol: float | None = None) -> bool:
    tol = circle.tol.mean_zero if tol is None else tol
    mu = measure_density(circle)
    absint = float(2.0 * np.sum(circle.weights * np.abs(h.values) * mu))
    return abs(integrate(circle, h)) <= tol * absint + 1e-300


def is_special(circle: SymmetricCircle, tol: float | None = None) -> bool:
    """Whether arg(rho) is constant modulo pi along the interior nodes."""
    tol = circle.tol.special_tol if tol is None else tol
    _require_positive(circle)
    rho = circle.rho()[1:-1]
    dbl = (rho / np.abs(rho)) ** 2
    ref = dbl[np.argmax(np.abs(rho))]
    dev = np.abs(np.angle(dbl / ref)) / 2
    return bool(np.max(dev) <= tol)


def cycle_from_json(obj, tol: ToleranceProfile = DEFAULT, fiber: MilnorFiber | None = None) -> SymmetricCircle:
    """Parse a cycle: full schema {"fiber","N","zeta","z"} or {"arc": coeffs, "N"}."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"cycle is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or "N" not in obj:
        raise InvalidInput('cycle JSON needs key "N"')
    if "fiber" in obj:
        fib = fiber_from_json(obj["fiber"], tol)
        if fiber is not None and not fib.same_as(fiber):
            raise InvalidInput("cycle fiber differs from the --fiber argument")
        fiber = fib
    if fiber is None:
        raise InvalidInput("cycle JSON has no fiber and none was supplied")
    N = int(obj["N"])
    if "arc" in obj:
        arc = PolynomialArc(tuple(_as_complex(c) for c in obj["arc"]))
        return cycle_from_arc(fiber, arc, N)
    if "zeta" not in obj or "z" not in obj:
        raise InvalidInput('cycle JSON needs "zeta" and "z" arrays or an "arc"')
    zeta = np.array([_as_complex(c) for c in obj["zeta"]])
    z = np.array([_as_complex(c) for c in obj["z"]])
    if zeta.size != N + 1:
        raise InvalidInput(f"expected N+1 = {N + 1} samples, got {zeta.size}")
    return SymmetricCircle(fiber, zeta, z)
