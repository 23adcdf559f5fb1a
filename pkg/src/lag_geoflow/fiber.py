"""The curve z^2 = f(zeta) underlying an A_m Milnor fiber.

The n-dimensional fiber is z_1^2 + ... + z_n^2 = f(zeta); everything
O(n)-invariant reduces to the complex curve M^1 = {z^2 = f(zeta)}, which is
what this module handles: evaluation of f and f', the roots of f, and
continuous square roots of f along paths in the zeta-plane.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import BadSeed, DegenerateRoots, EmptyPolynomial, InvalidInput, StepTooLarge
from .tolerances import DEFAULT, ToleranceProfile


@dataclass(frozen=True, eq=False)
class MilnorFiber:
    """Polynomial data of an A_m Milnor fiber.

    Attributes
    ----------
    coeffs : tuple of complex
        Coefficients of f in ascending degree; the last one is nonzero.
    n : int
        Ambient complex dimension of the Milnor fiber.
    roots : tuple of complex
        Simple zeros of f, sorted by (real part, imaginary part).
    root_sep : float
        Minimum pairwise distance of the roots (inf for a single root).
    """

    coeffs: tuple
    n: int
    roots: tuple
    root_sep: float
    tol: ToleranceProfile = field(default=DEFAULT, repr=False)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @cached_property
    def _c(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=complex)

    @cached_property
    def _dc(self) -> np.ndarray:
        return P.polyder(self._c)

    @cached_property
    def _roots(self) -> np.ndarray:
        return np.asarray(self.roots, dtype=complex)

    def f(self, zeta):
        return P.polyval(zeta, self._c)

    def fprime(self, zeta):
        return P.polyval(zeta, self._dc) if self.degree >= 1 else np.zeros_like(zeta)

    def root_index(self, zeta: complex, tol: float | None = None) -> int | None:
        """Index of the root within ``tol`` of zeta, or None."""
        tol = self.tol.endpoint_root if tol is None else tol
        d = np.abs(self._roots - zeta)
        j = int(np.argmin(d))
        return j if d[j] <= tol else None

    @cached_property
    def chart_radii(self) -> np.ndarray:
        """Radius in the z-plane of the blowup chart around each root.

        ``factor * sqrt(d_j |f'(zeta_j)|)`` with d_j the distance to the
        nearest other root: the z-chart image of the disc of radius
        ``factor^2 * d_j`` around zeta_j.
        """
        r = self._roots
        out = np.empty(len(r))
        for j, zj in enumerate(r):
            others = np.delete(r, j)
            dj = float(np.min(np.abs(others - zj))) if len(others) else 1.0
            out[j] = self.tol.chart_radius_factor * np.sqrt(dj * abs(self.fprime(zj)))
        return out

    def to_json(self) -> dict:
        return {"coeffs": [[c.real, c.imag] for c in map(complex, self.coeffs)], "n": self.n}

    def roots_json(self) -> dict:
        return {"roots": [[r.real, r.imag] for r in map(complex, self.roots)]}

    def same_as(self, other: "MilnorFiber") -> bool:
        return self.n == other.n and np.array_equal(self._c, other._c)


def _polish(c: np.ndarray, r: complex, steps: int) -> complex:
    dc = P.polyder(c)
    for _ in range(steps):
        fr = P.polyval(r, c)
        d = P.polyval(r, dc)
        if d == 0:
            break
        step = fr / d
        r = r - step
        if abs(step) <= 1e-16 * (1 + abs(r)):
            break
    return complex(r)


def make_fiber(coeffs: Sequence, n: int, tol: ToleranceProfile = DEFAULT) -> MilnorFiber:
    """Build a MilnorFiber from the coefficients of f (ascending degree).

    Roots are the companion-matrix eigenvalues polished by Newton iteration.

    Raises
    ------
    EmptyPolynomial
        All coefficients vanish.
    InvalidInput
        Degree zero or n < 1.
    DegenerateRoots
        Two roots closer than the simplicity tolerance, or a root where f'
        (nearly) vanishes.
    """
    c = np.array([_as_complex(x) for x in coeffs], dtype=complex)
    if c.size == 0 or not np.any(c != 0):
        raise EmptyPolynomial("all coefficients of f are zero")
    c = np.trim_zeros(c, "b")
    if c.size < 2:
        raise InvalidInput("f must have degree >= 1")
    if int(n) != n or n < 1:
        raise InvalidInput(f"dimension n must be a positive integer, got {n}")
    raw = P.polyroots(c) if c.size > 2 else np.array([-c[0] / c[1]])
    roots = np.array([_polish(c, r, tol.newton_root_steps) for r in np.atleast_1d(raw)])
    order = np.lexsort((roots.imag, roots.real))
    roots = roots[order]
    scale = max(np.max(np.abs(roots)), 0.0)
    sep_tol = max(tol.root_sep_rel * scale, tol.root_sep_floor)
    if roots.size > 1:
        diff = np.abs(roots[:, None] - roots[None, :]) + np.diag(np.full(roots.size, np.inf))
        sep = float(diff.min())
    else:
        sep = float("inf")
    if sep <= sep_tol:
        raise DegenerateRoots(f"roots of f are not simple (separation {sep:.3e})")
    cmax = float(np.max(np.abs(c)))
    dfr = np.abs(P.polyval(roots, P.polyder(c)))
    if np.any(dfr <= tol.root_fprime * (1 + cmax)):
        raise DegenerateRoots(f"f' nearly vanishes at a root (|f'| = {dfr.min():.3e})")
    res = np.abs(P.polyval(roots, c))
    if np.any(res > tol.root_residual * (1 + cmax)):
        raise DegenerateRoots(f"root polishing failed (residual {res.max():.3e})")
    return MilnorFiber(tuple(complex(x) for x in c), int(n), tuple(complex(x) for x in roots), sep, tol)


def _as_complex(x) -> complex:
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise InvalidInput(f"complex numbers are [re, im] pairs, got {x!r}")
        return complex(float(x[0]), float(x[1]))
    return complex(x)


def eval_f(fiber: MilnorFiber, zeta):
    return fiber.f(zeta)


def eval_fprime(fiber: MilnorFiber, zeta):
    return fiber.fprime(zeta)


def nearest_sqrt(w, ref):
    """Square root of w closest to ref (elementwise)."""
    s = np.sqrt(np.asarray(w, dtype=complex))
    return np.where(np.abs(s - ref) <= np.abs(s + ref), s, -s)


def branch_track_sqrt(fiber: MilnorFiber, path: Sequence[complex], seed_z: complex) -> np.ndarray:
    """Continuous branch of sqrt(f) along a zeta-polyline.

    Parameters
    ----------
    path : sequence of complex
        Points zeta_0, zeta_1, ... of the path.
    seed_z : complex
        Value of z at path[0]; must satisfy seed_z**2 == f(path[0]).

    Returns
    -------
    numpy.ndarray
        z_k with z_k**2 = f(zeta_k), each the root nearer to its predecessor.
    """
    tol = fiber.tol
    path = np.asarray(path, dtype=complex)
    f0 = complex(fiber.f(path[0]))
    if abs(seed_z * seed_z - f0) > tol.seed_tol * (1 + abs(f0)):
        raise BadSeed(f"seed z={seed_z} does not satisfy z^2 = f(zeta0) = {f0}")
    fv = fiber.f(path)
    roots = np.sqrt(fv.astype(complex))
    out = np.empty(path.size, dtype=complex)
    out[0] = seed_z
    for k in range(1, path.size):
        prev = out[k - 1]
        cand = roots[k] if abs(roots[k] - prev) <= abs(roots[k] + prev) else -roots[k]
        if abs(cand - prev) > 0.5 * abs(prev) + 1e-6:
            raise StepTooLarge(
                f"branch step {k}: |dz|={abs(cand - prev):.3e} exceeds guard at |z|={abs(prev):.3e}"
            )
        out[k] = cand
    return out


def fiber_from_json(obj, tol: ToleranceProfile = DEFAULT) -> MilnorFiber:
    """Parse ``{"coeffs": [[re, im], ...], "n": int}`` (dict or JSON text)."""
    if isinstance(obj, str):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise InvalidInput(f"fiber is not valid JSON: {exc}") from None
    if not isinstance(obj, dict) or "coeffs" not in obj or "n" not in obj:
        raise InvalidInput('fiber JSON needs keys "coeffs" and "n"')
    return make_fiber(obj["coeffs"], obj["n"], tol)
