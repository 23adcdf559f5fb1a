"""Horizontal foliation of M^1 and its extension over the real blowup.

Leaves are tangent to d(zeta) in i z^{2-n} R; equivalently they are the
level sets of Phi = Re W with dW = z^{n-2} d(zeta).  Near a zero zeta_j of f
the leaf field is written in polar coordinates z = r e^{i theta}, where it
extends smoothly across r = 0 with 2n zeros on the exceptional circle.

Leaves are integrated with an adaptive Dormand-Prince 5(4) scheme that
advances many leaves at once, each with its own step size and chart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cycle import SymmetricCircle, check_positive
from .errors import (
    AtBranchPoint,
    AtSingularity,
    DoubleIntersection,
    InvalidInput,
    NoIntersection,
    NotIsotopic,
    NotPositive,
    SingularityApproach,
    StepCollapse,
)
from .fiber import MilnorFiber, nearest_sqrt

ZETA_CHART = -1

RUNNING, HIT_DONE, MAXLEN, LEFT_DOMAIN, NEAR_SINGULAR, COLLAPSED = range(6)
_TERMINATION = {
    HIT_DONE: "HitCurve",
    MAXLEN: "Arclength",
    LEFT_DOMAIN: "LeftDomain",
    NEAR_SINGULAR: "NearSingularity",
    COLLAPSED: "StepCollapse",
}

# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class ChartPoint:
    """A point of M^1 (or of its blowup) with its chart.

    ``chart`` is ZETA_CHART (-1) for the (z, zeta) chart, or the index j of a
    root for the polar chart z = r e^{i theta} around zeta_j.  Both z and
    zeta are always filled in; r and theta only in the polar chart.
    """

    chart: int
    zeta: complex
    z: complex
    r: float = math.nan
    theta: float = math.nan

    @property
    def is_polar(self) -> bool:
        return self.chart != ZETA_CHART

    @classmethod
    def in_zeta_chart(cls, z: complex, zeta: complex) -> "ChartPoint":
        return cls(ZETA_CHART, complex(zeta), complex(z))

    @classmethod
    def in_polar_chart(cls, fiber: MilnorFiber, j: int, r: float, theta: float) -> "ChartPoint":
        z = r * np.exp(1j * theta)
        zeta = local_inverse(fiber, j, np.array([z]))[0]
        return cls(int(j), complex(zeta), complex(z), float(r), float(theta))


def local_inverse(fiber: MilnorFiber, j, z, seed=None):
    """zeta near root j with f(zeta) = z^2, by Newton iteration."""
    z = np.asarray(z, dtype=complex)
    roots = np.asarray(fiber.roots)
    zj = roots[j]
    if seed is None:
        zeta = zj + z * z / fiber.fprime(zj)
    else:
        zeta = np.array(seed, dtype=complex)
    tol = fiber.tol.local_inverse_tol
    for _ in range(40):
        step = (fiber.f(zeta) - z * z) / fiber.fprime(zeta)
        zeta = zeta - step
        if np.all(np.abs(step) <= tol * 1e-3 * (1 + np.abs(zeta))):
            break
    return zeta


def singular_angles(fiber: MilnorFiber, j: int) -> np.ndarray:
    """The 2n zeros of the blowup field on the exceptional circle over root j.

    Solutions of n theta - arg f'(zeta_j) = pi/2 (mod pi) in [0, 2 pi), sorted.
    """
    n = fiber.n
    a = np.angle(fiber.fprime(fiber.roots[j]))
    th = (a + np.pi / 2 + np.pi * np.arange(2 * n)) / n
    return np.sort(np.mod(th, 2 * np.pi))


def blowup_field(fiber: MilnorFiber, j: int, r, theta):
    """Unnormalized blowup field (X_r, X_theta) in the polar chart over root j.

    X = |f'| r cos(a) d_r + |f'| sin(a) d_theta with a = pi/2 + arg f'(zeta) - n theta.
    """
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z = r * np.exp(1j * theta)
    zeta = local_inverse(fiber, j, z)
    fp = fiber.fprime(zeta)
    a = np.pi / 2 + np.angle(fp) - fiber.n * theta
    return np.abs(fp) * r * np.cos(a), np.abs(fp) * np.sin(a)


def _sing_distance(fiber: MilnorFiber, j: np.ndarray, r, theta):
    out = np.empty(np.shape(r))
    for jj in np.unique(j):
        m = j == jj
        ang = singular_angles(fiber, int(jj))
        d = np.angle(np.exp(1j * (theta[m][:, None] - ang[None, :])))
        out[m] = np.hypot(r[m], np.min(np.abs(d), axis=1))
    return out


def _zeta_dir(n, z):
    w = z ** (n - 2)
    return 1j * np.conj(w) / np.abs(w)


def _polar_dir(n, r, theta, fp):
    beta = n * theta - np.angle(fp)
    vr = r * np.sin(beta)
    vt = np.cos(beta)
    nm = np.hypot(vr, vt)
    return vr / nm, vt / nm


def _phi_vector(n, z, fp):
    """Ambient (z, zeta) components of a vector with dPhi = 1."""
    return fp / (2 * z ** (n - 1)), 1.0 / z ** (n - 2)


def omega(a_z, a_zeta, b_z, b_zeta):
    """Ambient Kaehler form Im(conj(a_z) b_z + conj(a_zeta) b_zeta)."""
    return (np.conj(a_z) * b_z + np.conj(a_zeta) * b_zeta).imag


def direction(fiber: MilnorFiber, p: ChartPoint, prev=None) -> np.ndarray:
    """Unit leaf tangent at p in chart components.

    Zeta chart: complex array [dz, dzeta] with |dzeta| = 1 and
    dzeta proportional to i z^{2-n}.  Polar chart: real array [dr, dtheta]
    of unit Euclidean length.  The sign is chosen to have positive inner
    product with ``prev`` when given.

    Raises
    ------
    AtSingularity
        p is within sing_radius of a zero of the blowup field.
    """
    n = fiber.n
    if p.is_polar:
        d = _sing_distance(fiber, np.array([p.chart]), np.array([p.r]), np.array([p.theta]))[0]
        if d <= fiber.tol.sing_radius:
            raise AtSingularity(f"point is {d:.2e} from a singular point of the blowup field")
        fp = fiber.fprime(p.zeta)
        vr, vt = _polar_dir(n, p.r, p.theta, fp)
        out = np.array([vr, vt], dtype=float)
    else:
        if p.z == 0:
            raise AtSingularity("z = 0 is not in the zeta chart domain")
        dzeta = _zeta_dir(n, p.z)
        out = np.array([fiber.fprime(p.zeta) / (2 * p.z) * dzeta, dzeta])
    if prev is not None:
        prev = np.asarray(prev)
        if np.real(np.vdot(prev, out)) < 0:
            out = -out
    return out


def area_form(fiber: MilnorFiber, p: ChartPoint, a, b) -> float:
    """The Kaehler form of M^1 (or its pullback to the blowup) on two tangents.

    Zeta chart: tangents are complex d(zeta) components and the density is
    g = 1 + |f'|^2 / (4 |f|).  Polar chart: tangents are (dr, dtheta) pairs
    and the form is r psi dr^dtheta with psi = 1 + 4|z|^2/|f'|^2.

    Raises
    ------
    AtBranchPoint
        Zeta chart evaluation at a zero of f.
    """
    if p.is_polar:
        fp = fiber.fprime(p.zeta)
        psi = 1 + 4 * abs(p.z) ** 2 / abs(fp) ** 2
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return float(p.r * psi * (a[0] * b[1] - a[1] * b[0]))
    fv = fiber.f(p.zeta)
    if fv == 0:
        raise AtBranchPoint("the zeta chart degenerates at zeros of f")
    g = 1 + abs(fiber.fprime(p.zeta)) ** 2 / (4 * abs(fv))
    a = complex(a)
    b = complex(b)
    return float(g * (a.real * b.imag - a.imag * b.real))


def chord_potential(fiber: MilnorFiber, za, zeta_a, zb, zeta_b, panels: int = 4):
    """Integral of z^{n-2} d(zeta) from point a to point b of M^1.

    The 1-form is holomorphic, so any path in the right homotopy class gives
    the same value.  Pairs inside one blowup chart are joined by a straight
    chord in z (with zeta = zeta(z) from the local inverse), where the form
    reads 2 z^{n-1} / f'(zeta) dz; other pairs by a straight chord in zeta
    with z continued as the square root nearest to the linear interpolation
    of the endpoint values.  Vectorized.
    """
    n = fiber.n
    za, zb, zeta_a, zeta_b = np.broadcast_arrays(*(np.asarray(x, dtype=complex)
                                                   for x in (za, zb, zeta_a, zeta_b)))
    out = np.zeros(za.shape, dtype=complex)
    d = zeta_b - zeta_a
    if n == 2:
        return out + d
    roots = np.asarray(fiber.roots)
    R = fiber.chart_radii
    ja = np.argmin(np.abs(zeta_a[..., None] - roots), axis=-1)
    jb = np.argmin(np.abs(zeta_b[..., None] - roots), axis=-1)
    local = (ja == jb) & (np.abs(za) < R[ja]) & (np.abs(zb) < R[ja])
    far = ~local
    if np.any(far):
        a, b, ze_a, dd = za[far], zb[far], zeta_a[far], d[far]
        tot = np.zeros(a.shape, dtype=complex)
        for p in range(panels):
            t = (p + (_GL_X + 1) / 2) / panels
            zeta = ze_a + np.multiply.outer(t, dd)
            z = nearest_sqrt(fiber.f(zeta), a + np.multiply.outer(t, b - a))
            tot = tot + np.tensordot(_GL_W / (2 * panels), z ** (n - 2), axes=(0, 0)) * dd
        out[far] = tot
    if np.any(local):
        a, b, j = za[local], zb[local], ja[local]
        dz = b - a
        tot = np.zeros(a.shape, dtype=complex)
        for p in range(panels):
            t = (p + (_GL_X + 1) / 2) / panels
            z = a + np.multiply.outer(t, dz)
            jj = np.broadcast_to(j, z.shape)
            seed = zeta_a[local] + np.multiply.outer(t, d[local])
            zeta = local_inverse(fiber, jj, z, seed=seed)
            integrand = 2 * z ** (n - 1) / fiber.fprime(zeta)
            tot = tot + np.tensordot(_GL_W / (2 * panels), integrand, axes=(0, 0)) * dz
        out[local] = tot
    return out


def leaf_residual(fiber: MilnorFiber, z, zeta) -> np.ndarray:
    """|Re dW| / |dW| between consecutive points of a polyline on M^1."""
    z = np.asarray(z, dtype=complex)
    zeta = np.asarray(zeta, dtype=complex)
    dw = chord_potential(fiber, z[:-1], zeta[:-1], z[1:], zeta[1:])
    small = (np.abs(z[1:] - z[:-1]) < 1e-14) & (np.abs(zeta[1:] - zeta[:-1]) < 1e-14)
    with np.errstate(invalid="ignore", divide="ignore"):
        res = np.where(small, 0.0, np.abs(dw.real) / np.abs(dw))
    return np.nan_to_num(res)


@dataclass
class _Target:
    """Spectral description of a target symmetric circle for hit detection."""

    circle: SymmetricCircle
    upsample: int = 2

    def __post_init__(self):
        c = self.circle
        m = self.upsample * c.N
        self.v_half = np.pi * np.arange(m + 1) / m
        self.zeta_half = c.zeta_interp(self.v_half)
        self.v_full = np.concatenate([self.v_half, -self.v_half[-2:0:-1]])
        zf = c.z_interp(self.v_full)
        self.z_full = np.concatenate([zf, zf[:1]])
        self.v_full = np.concatenate([self.v_full, [0.0]])
        zeta_full = c.zeta_interp(self.v_full)
        fib = c.fiber
        roots = np.asarray(fib.roots)
        near = np.argmin(np.abs(zeta_full[:, None] - roots[None, :]), axis=1)
        az = np.abs(self.z_full)
        # polyline segments that belong to the blowup chart of each root
        self.seg_mask = []
        for j, R in enumerate(fib.chart_radii):
            ok = (near == j) & (az <= 1.5 * R)
            self.seg_mask.append(ok[:-1] & ok[1:])
        self.zeta_fn = c.zeta_interp
        self.z_fn = c.z_interp
        pts = np.concatenate([self.zeta_half, c.fiber.roots])
        self.center = complex(np.mean(pts))


def _seg_cross(p, q, a, b):
    """First crossing of segments p->q (rows) with a_i->b_i (columns).

    Returns (t, s, i) per row; t = inf when there is no crossing.
    """
    d = q - p
    e = b - a

    def cross(x, y):
        return x.real * y.imag - x.imag * y.real

    den = cross(d[:, None], e[None, :])
    w = a[None, :] - p[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cross(w, e[None, :]) / den
        s = cross(w, d[:, None]) / den
    ok = (np.abs(den) > 0) & (t > 1e-13) & (t <= 1.0) & (s >= 0.0) & (s <= 1.0)
    t = np.where(ok, t, np.inf)
    i = np.argmin(t, axis=1)
    rows = np.arange(p.size)
    return t[rows, i], s[rows, i], i


class _Tracer:
    """Vectorized adaptive leaf integrator with chart switching."""

    def __init__(self, fiber: MilnorFiber, target: SymmetricCircle | None = None,
                 domain_center: complex = 0.0, domain_radius: float = np.inf):
        self.fib = fiber
        self.n = fiber.n
        self.tol = fiber.tol
        self.roots = np.asarray(fiber.roots)
        self.R = fiber.chart_radii
        self.target = _Target(target) if target is not None else None
        self.center = domain_center
        self.rdom = domain_radius
        self.sing = [singular_angles(fiber, j) for j in range(len(self.roots))]

    # -- field ---------------------------------------------------------
    def points(self, y, cj, zb, zc):
        """(zeta, z) of states; zeta-chart z taken nearest zb, polar zeta seeded by zc."""
        polar = cj >= 0
        zeta = np.empty(y.shape[0], dtype=complex)
        z = np.empty(y.shape[0], dtype=complex)
        zm = ~polar
        if np.any(zm):
            zeta[zm] = y[zm, 0] + 1j * y[zm, 1]
            z[zm] = nearest_sqrt(self.fib.f(zeta[zm]), zb[zm])
        if np.any(polar):
            zp = y[polar, 0] * np.exp(1j * y[polar, 1])
            z[polar] = zp
            zeta[polar] = local_inverse(self.fib, cj[polar], zp, seed=zc[polar])
        return zeta, z

    def tangent(self, y, cj, zeta, z, sg):
        """Chart velocity (dy0, dy1) and ambient (dz, dzeta) of the unit field."""
        fp = self.fib.fprime(zeta)
        polar = cj >= 0
        v0 = np.empty(y.shape[0])
        v1 = np.empty(y.shape[0])
        dz = np.empty(y.shape[0], dtype=complex)
        dzeta = np.empty(y.shape[0], dtype=complex)
        zm = ~polar
        if np.any(zm):
            dze = sg[zm] * _zeta_dir(self.n, z[zm])
            v0[zm] = dze.real
            v1[zm] = dze.imag
            dzeta[zm] = dze
            dz[zm] = fp[zm] / (2 * z[zm]) * dze
        if np.any(polar):
            r = y[polar, 0]
            th = y[polar, 1]
            vr, vt = _polar_dir(self.n, r, th, fp[polar])
            vr = sg[polar] * vr
            vt = sg[polar] * vt
            v0[polar] = vr
            v1[polar] = vt
            dzp = np.exp(1j * th) * (vr + 1j * r * vt)
            dz[polar] = dzp
            dzeta[polar] = 2 * z[polar] / fp[polar] * dzp
        return v0, v1, dz, dzeta, fp

    def rhs(self, y, cj, zb, zc, sg):
        zeta, z = self.points(y, cj, zb, zc)
        v0, v1, dz, dzeta, fp = self.tangent(y, cj, zeta, z, sg)
        pz, pzeta = _phi_vector(self.n, z, fp)
        dj = omega(dz, dzeta, pz, pzeta)
        dl = 0.5 * (np.conj(z) * dz + np.conj(zeta) * dzeta).imag
        return np.stack([v0, v1, dj, dl], axis=1), zeta, z, dz, dzeta

    def step(self, y, cj, zb, zc, sg, h):
        """One DP5 step of per-row size h; returns (y5, err_ratio)."""
        ks = []
        for s in range(7):
            ys = y.copy()
            for i, a in enumerate(_A[s]):
                if a != 0.0:
                    ys = ys + (h * a)[:, None] * ks[i]
            with np.errstate(all="ignore"):
                k = self.rhs(ys, cj, zb, zc, sg)[0]
            ks.append(k)
        K = np.stack(ks, axis=0)
        y5 = y + h[:, None] * np.tensordot(_B5, K, axes=(0, 0))
        e = h[:, None] * np.tensordot(_B5 - _B4, K, axes=(0, 0))
        sc = self.tol.trace_atol + self.tol.trace_rtol * np.maximum(np.abs(y), np.abs(y5))
        with np.errstate(invalid="ignore"):
            err = np.max(np.abs(e) / sc, axis=1)
        err = np.where(np.isfinite(err) & np.all(np.isfinite(y5), axis=1), err, np.inf)
        return y5, err

    # -- chart handling --------------------------------------------------
    def _dz_of(self, y, cj, zeta, z, sg):
        return self.tangent(y, cj, zeta, z, sg)[2]

    def to_initial(self, zeta0, z0, sigma):
        """Initial states; sigma is relative to the zeta-chart field i z^{2-n}."""
        m = zeta0.size
        y = np.zeros((m, 4))
        cj = np.full(m, ZETA_CHART)
        zb = z0.astype(complex).copy()
        zc = zeta0.astype(complex).copy()
        sg = np.asarray(sigma, dtype=float).copy() * np.ones(m)
        y[:, 0] = zeta0.real
        y[:, 1] = zeta0.imag
        self.switch(y, cj, zb, zc, sg, zeta0, z0)
        return y, cj, zb, zc, sg

    def switch(self, y, cj, zb, zc, sg, zeta, z, rows=None):
        """Move rows between charts in place (hysteresis on |z|)."""
        rows = np.arange(y.shape[0]) if rows is None else rows
        if rows.size == 0:
            return
        dist = np.abs(zeta[rows, None] - self.roots[None, :])
        jn = np.argmin(dist, axis=1)
        az = np.abs(z[rows])
        enter = (cj[rows] == ZETA_CHART) & (az < self.tol.chart_enter * self.R[jn])
        leave = (cj[rows] >= 0) & (az > self.R[np.maximum(cj[rows], 0)])
        for mask, new in ((enter, "polar"), (leave, "zeta")):
            idx = rows[mask]
            if idx.size == 0:
                continue
            old_dz = self._dz_of(y[idx], cj[idx], zeta[idx], z[idx], sg[idx])
            ny = y[idx].copy()
            ncj = cj[idx].copy()
            if new == "polar":
                ncj[:] = jn[mask]
                ny[:, 0] = np.abs(z[idx])
                ny[:, 1] = np.angle(z[idx])
            else:
                ncj[:] = ZETA_CHART
                ny[:, 0] = zeta[idx].real
                ny[:, 1] = zeta[idx].imag
            one = np.ones(idx.size)
            new_dz = self._dz_of(ny, ncj, zeta[idx], z[idx], one)
            y[idx] = ny
            cj[idx] = ncj
            sg[idx] = np.where((np.conj(old_dz) * new_dz).real >= 0, 1.0, -1.0)
            zb[idx] = z[idx]
            zc[idx] = zeta[idx]

    def cap(self, y, cj, zeta):
        polar = cj >= 0
        out = np.empty(y.shape[0])
        dist = np.min(np.abs(zeta[:, None] - self.roots[None, :]), axis=1)
        out[~polar] = 0.25 * dist[~polar]
        out[polar] = 0.1
        return out

    # -- main loop ------------------------------------------------------
    def run(self, zeta0, z0, sigma, max_len, audit=True, keep_history=True):
        tol = self.tol
        zeta0 = np.asarray(zeta0, dtype=complex)
        z0 = np.asarray(z0, dtype=complex)
        m = zeta0.size
        y, cj, zb, zc, sg = self.to_initial(zeta0, z0, sigma)
        max_len = np.broadcast_to(np.asarray(max_len, dtype=float), (m,)).copy()
        zeta, z = self.points(y, cj, zb, zc)
        ell = np.zeros(m)
        status = np.zeros(m, dtype=int)
        h = 0.01 * np.minimum(self.cap(y, cj, zeta), max_len)
        nhit = np.zeros(m, dtype=int)
        hit = {
            "zeta": np.full(m, np.nan + 0j), "z": np.full(m, np.nan + 0j),
            "v": np.full(m, np.nan), "orient": np.zeros(m, dtype=int),
            "ell": np.full(m, np.nan), "J": np.full(m, np.nan), "L": np.full(m, np.nan),
            "node": np.full(m, -1), "hs": np.full(m, np.nan), "newton": np.zeros(m, dtype=bool),
        }
        hist = [(y.copy(), cj.copy(), zb.copy(), zc.copy(), sg.copy(), ell.copy(),
                 zeta.copy(), z.copy(), np.ones(m, dtype=bool))]
        node_count = np.ones(m, dtype=int)
        sing_d = np.full(m, np.inf)
        while True:
            act = np.nonzero(status == RUNNING)[0]
            if act.size == 0:
                break
            ya, cja, zba, zca, sga = y[act], cj[act], zb[act], zc[act], sg[act]
            ha = np.minimum(np.minimum(h[act], self.cap(ya, cja, zeta[act])), max_len[act] - ell[act])
            ha = np.maximum(ha, 0.0)
            y5, err = self.step(ya, cja, zba, zca, sga, ha)
            zeta5 = np.full(act.size, np.nan + 0j)
            z5 = np.full(act.size, np.nan + 0j)
            good = np.isfinite(err)
            if np.any(good):
                zeta5[good], z5[good] = self.points(y5[good], cja[good], zba[good], zca[good])
            # z-branch guard in the zeta chart
            zc_mask = (cja == ZETA_CHART) & good
            jump = np.abs(z5 - zba) > 0.5 * np.abs(zba) + 1e-6
            err = np.where(zc_mask & jump, np.inf, err)
            acc = err <= 1.0
            fac = np.where(np.isfinite(err), 0.9 * np.maximum(err, 1e-10) ** -0.2, 0.2)
            fac = np.clip(fac, 0.2, 5.0)
            newh = ha * np.where(acc, fac, np.minimum(fac, 0.5))
            h[act] = newh
            collapse = (~acc) & (newh < tol.step_min)
            status[act[collapse]] = COLLAPSED
            ia = act[acc]
            if ia.size == 0:
                continue
            y_old = y[ia].copy()
            zeta_old = zeta[ia].copy()
            z_old = z[ia].copy()
            cj_old, zb_old, zc_old, sg_old = cj[ia].copy(), zb[ia].copy(), zc[ia].copy(), sg[ia].copy()
            y[ia] = y5[acc]
            zeta[ia] = zeta5[acc]
            z[ia] = z5[acc]
            ell[ia] = ell[ia] + ha[acc]
            polar_rows = ia[cj[ia] >= 0]
            zb[ia] = np.where(cj[ia] == ZETA_CHART, z[ia], zb[ia])
            zc[ia] = np.where(cj[ia] >= 0, zeta[ia], zc[ia])
            if polar_rows.size:
                sd = np.empty(polar_rows.size)
                for jj in np.unique(cj[polar_rows]):
                    mm = cj[polar_rows] == jj
                    rr = polar_rows[mm]
                    dd = np.angle(np.exp(1j * (y[rr, 1][:, None] - self.sing[jj][None, :])))
                    sd[mm] = np.hypot(y[rr, 0], np.min(np.abs(dd), axis=1))
                sing_d[polar_rows] = np.minimum(sing_d[polar_rows], sd)
                near = polar_rows[sd <= tol.sing_radius]
                status[near] = NEAR_SINGULAR
            far = ia[np.abs(zeta[ia] - self.center) > self.rdom]
            status[far] = np.where(status[far] == RUNNING, LEFT_DOMAIN, status[far])
            if self.target is not None:
                self._detect(ia, y_old, zeta_old, z_old, cj_old, zb_old, zc_old, sg_old,
                             ha[acc], ell, zeta, z, y, nhit, hit, node_count, max_len, audit, status)
            hist.append((y.copy(), cj.copy(), zb.copy(), zc.copy(), sg.copy(), ell.copy(),
                         zeta.copy(), z.copy(), np.isin(np.arange(m), ia)))
            node_count[ia] += 1
            run_rows = ia[status[ia] == RUNNING]
            done = run_rows[ell[run_rows] >= max_len[run_rows] * (1 - 1e-14)]
            status[done] = np.where(nhit[done] > 0, HIT_DONE, MAXLEN)
            run_rows = ia[status[ia] == RUNNING]
            self.switch(y, cj, zb, zc, sg, zeta, z, run_rows)
            # update stored copy with post-switch chart (same point, new coordinates)
            hist[-1] = (y.copy(), cj.copy(), zb.copy(), zc.copy(), sg.copy(), ell.copy(),
                        zeta.copy(), z.copy(), hist[-1][8])
        status = np.where((status == MAXLEN) & (nhit > 0), HIT_DONE, status)
        return _TraceResult(hist, status, nhit, hit, sing_d)

    def _detect(self, ia, y_old, zeta_old, z_old, cj_old, zb_old, zc_old, sg_old, hs,
                ell, zeta, z, y, nhit, hit, node_count, max_len, audit, status):
        T = self.target
        tol = self.tol
        m = ia.size
        t = np.full(m, np.inf)
        vg = np.full(m, np.nan)
        orient = np.zeros(m, dtype=int)
        zmask = cj_old == ZETA_CHART
        if np.any(zmask):
            tt, ss, ii = _seg_cross(zeta_old[zmask], zeta[ia[zmask]], T.zeta_half[:-1], T.zeta_half[1:])
            v = T.v_half[ii] + ss * (T.v_half[ii + 1] - T.v_half[ii])
            fin = np.isfinite(tt)
            zc_ = z_old[zmask] + np.where(fin, tt, 0) * (z[ia[zmask]] - z_old[zmask])
            z1 = T.z_fn(np.where(fin, v, 0.0))
            plus = np.abs(zc_ - z1) <= tol.z_compat * np.abs(z1)
            minus = np.abs(zc_ + z1) <= tol.z_compat * np.abs(z1)
            o = np.where(plus, 1, np.where(minus, -1, 0))
            ok = fin & (o != 0)
            t[zmask] = np.where(ok, tt, np.inf)
            vg[zmask] = np.where(ok, o * v, np.nan)
            orient[zmask] = np.where(ok, o, 0)
        pm = ~zmask
        for jj in np.unique(cj_old[~zmask]):
            pm = cj_old == jj
            seg = np.nonzero(T.seg_mask[jj])[0]
            if seg.size == 0:
                continue
            tt, ss, ii = _seg_cross(z_old[pm], z[ia[pm]], T.z_full[seg], T.z_full[seg + 1])
            ii = seg[ii]
            fin = np.isfinite(tt)
            dv = np.mod(T.v_full[ii + 1] - T.v_full[ii] + np.pi, 2 * np.pi) - np.pi
            v = T.v_full[ii] + ss * dv
            v = np.where(v > np.pi, v - 2 * np.pi, v)
            zeta_c = zeta_old[pm] + np.where(fin, tt, 0) * (zeta[ia[pm]] - zeta_old[pm])
            zeta1 = T.zeta_fn(np.where(fin, v, 0.0))
            jroot = np.maximum(cj_old[pm], 0)
            scale = np.abs(zeta_c - self.roots[jroot])
            ok = fin & (np.abs(zeta_c - zeta1) <= tol.z_compat * scale + 1e-12)
            t[pm] = np.where(ok, tt, np.inf)
            vg[pm] = np.where(ok, v, np.nan)
            orient[pm] = np.where(ok, np.where(v >= 0, 1, -1), 0)
        found = np.nonzero(np.isfinite(t))[0]
        if found.size == 0:
            return
        rows = ia[found]
        second = nhit[rows] > 0
        nhit[rows] += 1
        first = found[~second]
        if first.size == 0:
            return
        tau, v, ok = self._refine(y_old[first], cj_old[first], zb_old[first], zc_old[first],
                                  sg_old[first], hs[first], t[first], vg[first])
        ys, zs, zz = self._single(y_old[first], cj_old[first], zb_old[first], zc_old[first],
                                  sg_old[first], tau * hs[first])
        r = ia[first]
        hit["zeta"][r] = zs
        hit["z"][r] = zz
        hit["v"][r] = v
        hit["orient"][r] = orient[first]
        hit["ell"][r] = ell[r] - hs[first] + tau * hs[first]
        hit["J"][r] = ys[:, 2]
        hit["L"][r] = ys[:, 3]
        hit["node"][r] = node_count[r] - 1
        hit["hs"][r] = tau * hs[first]
        hit["newton"][r] = ok
        if audit:
            extra = tol.audit_fraction * hit["ell"][r]
            max_len[r] = np.minimum(max_len[r], hit["ell"][r] + extra)
            status[r] = np.where(ell[r] >= max_len[r], HIT_DONE, status[r])
        else:
            status[r] = HIT_DONE

    def _single(self, y, cj, zb, zc, sg, hs):
        ys, _ = self.step(y, cj, zb, zc, sg, hs)
        zeta, z = self.points(ys, cj, zb, zc)
        return ys, zeta, z

    def _refine(self, y, cj, zb, zc, sg, hs, tau, v):
        """Newton on (tau, v): leaf point after tau*hs equals the target at v."""
        T = self.target
        tau = tau.copy()
        v = v.copy()
        zm = cj == ZETA_CHART
        ok = np.zeros(tau.size, dtype=bool)
        for _ in range(12):
            ys, zeta, z = self._single(y, cj, zb, zc, sg, tau * hs)
            _, _, _, dz, dzeta = self.rhs(ys, cj, zb, zc, sg)
            X = np.where(zm, zeta, z)
            dX = np.where(zm, dzeta, dz) * hs
            C = np.where(zm, T.zeta_fn(v), T.z_fn(v))
            dC = np.where(zm, T.zeta_fn.deriv(v), T.z_fn.deriv(v))
            F = X - C
            ok = np.abs(F) <= 1e-3 * self.tol.hit_tol
            # solve dX*dtau - dC*dv = -F (real 2x2)
            a11, a21 = dX.real, dX.imag
            a12, a22 = -dC.real, -dC.imag
            det = a11 * a22 - a12 * a21
            with np.errstate(divide="ignore", invalid="ignore"):
                dt = (-F.real * a22 + F.imag * a12) / det
                dv = (-a11 * F.imag + a21 * F.real) / det
            dt = np.where(np.isfinite(dt) & ~ok, dt, 0.0)
            dv = np.where(np.isfinite(dv) & ~ok, dv, 0.0)
            tau = tau + dt
            v = v + dv
            if np.all(ok):
                break
        bad = ~np.isfinite(tau) | (tau < -0.5) | (tau > 1.5)
        tau = np.where(bad, 0.5, tau)
        return tau, v, ok & ~bad


@dataclass
class _TraceResult:
    hist: list
    status: np.ndarray
    nhit: np.ndarray
    hit: dict
    sing_d: np.ndarray

    def nodes(self, i):
        """All accepted nodes of leaf i as dict of arrays."""
        keep = [k for k, rec in enumerate(self.hist) if rec[8][i]]
        pick = lambda c: np.array([self.hist[k][c][i] for k in keep])
        return {
            "y": pick(0), "cj": pick(1), "zb": pick(2), "zc": pick(3), "sg": pick(4),
            "ell": pick(5), "zeta": pick(6), "z": pick(7),
        }


# ---------------------------------------------------------------------------
# public tracing API


@dataclass(frozen=True)
class MaxArclength:
    length: float


@dataclass(frozen=True)
class HitCurve:
    target: SymmetricCircle
    max_arclength: float = 20.0
    audit: bool = True


@dataclass
class LeafTrace:
    """A traced leaf.

    Attributes
    ----------
    origin : ChartPoint
    chart : numpy.ndarray of int
        Chart tag per node (-1 zeta chart, j polar over root j).
    zeta, z : numpy.ndarray of complex
    r, theta : numpy.ndarray
        Polar coordinates (NaN in the zeta chart).
    arclength : numpy.ndarray
        Chart-Euclidean arclength at each node.
    area : numpy.ndarray
        Accumulated integral of omega(T, d_Phi) along the leaf.
    direction_sign : int
    termination : str
        'Arclength', 'HitCurve', 'NearSingularity' or 'LeftDomain'.
    hit : dict or None
        zeta, z, v (target parameter), arclength, area at the intersection.
    """

    origin: ChartPoint
    chart: np.ndarray
    zeta: np.ndarray
    z: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    arclength: np.ndarray
    area: np.ndarray
    direction_sign: int
    termination: str
    hit: dict | None = None

    def residual(self, fiber: MilnorFiber) -> float:
        """Largest discrete leaf-condition residual between consecutive nodes."""
        if self.zeta.size < 2:
            return 0.0
        return float(np.max(leaf_residual(fiber, self.z, self.zeta)))

    def to_csv(self) -> str:
        lines = ["chart_tag,re_zeta,im_zeta,re_z,im_z,r,theta,arclength"]
        for k in range(self.zeta.size):
            tag = "zeta" if self.chart[k] == ZETA_CHART else f"polar{self.chart[k]}"
            vals = [self.zeta[k].real, self.zeta[k].imag, self.z[k].real, self.z[k].imag,
                    self.r[k], self.theta[k], self.arclength[k]]
            lines.append(tag + "," + ",".join(repr(float(x)) for x in vals))
        return "\n".join(lines) + "\n"


def _domain(fiber: MilnorFiber, pts) -> tuple:
    pts = np.concatenate([np.atleast_1d(np.asarray(pts, dtype=complex)), np.asarray(fiber.roots)])
    c = complex(np.mean(pts))
    rad = float(np.max(np.abs(pts - c)))
    return c, fiber.tol.domain_factor * rad + 1.0


def _leaf_from_result(res: _TraceResult, i: int, origin: ChartPoint, sign: int) -> LeafTrace:
    nd = res.nodes(i)
    polar = nd["cj"] >= 0
    r = np.where(polar, nd["y"][:, 0], np.nan)
    th = np.where(polar, nd["y"][:, 1], np.nan)
    hit = None
    if res.nhit[i] > 0:
        hit = {k: res.hit[k][i] for k in ("zeta", "z", "v", "ell", "J", "orient")}
        hit["arclength"] = hit.pop("ell")
        hit["area"] = hit.pop("J")
    return LeafTrace(origin, nd["cj"], nd["zeta"], nd["z"], r, th, nd["ell"], nd["y"][:, 2],
                     int(sign), _TERMINATION.get(int(res.status[i]), "Arclength"), hit)


def _start_arrays(fiber: MilnorFiber, pts):
    zeta = np.array([p.zeta for p in pts], dtype=complex)
    z = np.array([p.z for p in pts], dtype=complex)
    for p in pts:
        if p.is_polar:
            d = _sing_distance(fiber, np.array([p.chart]), np.array([p.r]), np.array([p.theta]))[0]
            if d <= fiber.tol.sing_radius:
                raise SingularityApproach("start point lies on the singular set")
        elif p.z == 0:
            raise SingularityApproach("start point lies on a branch point")
    return zeta, z


def trace_leaves(fiber: MilnorFiber, starts, sign, stop) -> list:
    """Trace several leaves at once; see :func:`trace_leaf`."""
    starts = list(starts)
    zeta, z = _start_arrays(fiber, starts)
    sign = np.broadcast_to(np.asarray(sign, dtype=float), (len(starts),))
    target = stop.target if isinstance(stop, HitCurve) else None
    extra = target.zeta if target is not None else zeta
    c, rad = _domain(fiber, np.concatenate([zeta, extra]))
    tr = _Tracer(fiber, target, c, rad)
    length = stop.max_arclength if isinstance(stop, HitCurve) else stop.length
    res = tr.run(zeta, z, sign, length, audit=getattr(stop, "audit", False))
    out = []
    for i, p in enumerate(starts):
        st = int(res.status[i])
        if st == NEAR_SINGULAR:
            raise SingularityApproach(f"leaf {i} came within sing_radius of the singular set")
        if st == COLLAPSED:
            raise StepCollapse(f"leaf {i}: adaptive step fell below {fiber.tol.step_min}")
        if target is not None and res.nhit[i] == 0:
            raise NoIntersection(f"leaf {i} did not meet the target curve")
        if target is not None and res.nhit[i] > 1:
            raise DoubleIntersection(f"leaf {i} meets the target curve twice")
        out.append(_leaf_from_result(res, i, p, int(sign[i])))
    return out


def trace_leaf(fiber: MilnorFiber, start: ChartPoint, sign: int, stop) -> LeafTrace:
    """Integrate the leaf through ``start``.

    Parameters
    ----------
    start : ChartPoint
    sign : {+1, -1}
        Orientation relative to the zeta-chart field i z^{2-n}.
    stop : MaxArclength or HitCurve

    Raises
    ------
    SingularityApproach, NoIntersection, StepCollapse, DoubleIntersection
    """
    return trace_leaves(fiber, [start], [sign], stop)[0]


# ---------------------------------------------------------------------------
# leafwise matching of two cycles


@dataclass
class MatchResult:
    """Leafwise correspondence gamma0(u_k) -> beta1_k on gamma1.

    Attributes
    ----------
    beta_zeta, beta_z : numpy.ndarray
        Matched points on gamma1, k = 0..N0.
    v : numpy.ndarray
        gamma1-parameter of the match, signed (orientation * |v|).
    orientation : int
        +1 when matched points lie on gamma1(v), v in [0, pi]; -1 for the
        mirror half gamma1(-v).
    s_arclength : numpy.ndarray
        Leaf arclength from gamma0(u_k) to beta1_k.
    area : numpy.ndarray
        J_k, the integral of omega(T, d_Phi) along the leaf segment.
    liouville : numpy.ndarray
        Integral of the Liouville form along the leaf segment.
    endpoint_theta : tuple
        arg z'(0), arg z'(pi) of gamma1: blowup coordinates of the matched endpoints.
    leaf_residual : float
    """

    gamma0: SymmetricCircle
    gamma1: SymmetricCircle
    beta_zeta: np.ndarray
    beta_z: np.ndarray
    v: np.ndarray
    orientation: int
    s_arclength: np.ndarray
    area: np.ndarray
    liouville: np.ndarray
    endpoint_theta: tuple
    leaf_residual: float
    sigma: np.ndarray
    _bundle: object = field(default=None, repr=False)

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.orientation * self.v) > 0))

    def points_at(self, frac: float):
        """Points on each leaf segment where the accumulated area is frac*J_k."""
        N = self.gamma0.N
        zeta = self.gamma0.zeta.copy()
        z = self.gamma0.z.copy()
        if frac == 0 or self._bundle is None:
            return zeta, z
        zi, zzi = self._bundle.locate(frac)
        zeta[1:N] = zi
        z[1:N] = zzi
        return zeta, z


class _LeafBundle:
    """Node tables of matched leaf segments for inverting accumulated area."""

    def __init__(self, tracer: _Tracer, sources: list, zeta0: np.ndarray, z0: np.ndarray):
        self.tr = tracer
        self.zeta0 = zeta0
        self.z0 = z0
        self.tables = []
        self.J = np.zeros(len(sources))
        for i, src in enumerate(sources):
            if src is None:
                self.tables.append(None)
                continue
            res, row = src
            nd = res.nodes(row)
            cut = res.hit["node"][row] + 1
            self.tables.append({k: v[:cut] for k, v in nd.items()})
            self.J[i] = res.hit["J"][row]

    def locate(self, frac: float):
        zeta = self.zeta0.copy()
        z = self.z0.copy()
        rows = np.array([i for i, t in enumerate(self.tables) if t is not None], dtype=int)
        if rows.size == 0:
            return zeta, z
        target = frac * self.J[rows]
        y = np.empty((rows.size, 4))
        cj = np.empty(rows.size, dtype=int)
        zb = np.empty(rows.size, dtype=complex)
        zc = np.empty(rows.size, dtype=complex)
        sg = np.empty(rows.size)
        for a, i in enumerate(rows):
            tb = self.tables[i]
            Jn = np.abs(tb["y"][:, 2])
            k = int(np.searchsorted(Jn, abs(target[a]), side="right") - 1)
            k = min(max(k, 0), Jn.size - 1)
            y[a] = tb["y"][k]
            cj[a] = tb["cj"][k]
            zb[a] = tb["zb"][k]
            zc[a] = tb["zc"][k]
            sg[a] = tb["sg"][k]
        tr = self.tr
        d0 = tr.rhs(y, cj, zb, zc, sg)[0][:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            hs = np.where(d0 != 0, (target - y[:, 2]) / d0, 0.0)
        for _ in range(8):
            ys, _ = tr.step(y, cj, zb, zc, sg, hs)
            dj = tr.rhs(ys, cj, zb, zc, sg)[0][:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                corr = np.where(dj != 0, (ys[:, 2] - target) / dj, 0.0)
            hs = hs - corr
            if np.all(np.abs(corr) <= 1e-14 * (1 + np.abs(hs))):
                break
        ys, _ = tr.step(y, cj, zb, zc, sg, hs)
        zz, zzz = tr.points(ys, cj, zb, zc)
        zeta[rows] = zz
        z[rows] = zzz
        return zeta, z


def _check_pair(g0: SymmetricCircle, g1: SymmetricCircle) -> None:
    if not g0.fiber.same_as(g1.fiber):
        raise InvalidInput("cycles live on different fibers")
    if g0.n < 2:
        raise InvalidInput("leafwise matching requires n >= 2")
    if (g0.root_at_0, g0.root_at_pi) != (g1.root_at_0, g1.root_at_pi):
        raise NotIsotopic("cycles do not join the same ordered pair of roots")
    for g in (g0, g1):
        rep = check_positive(g)
        if not rep.is_positive:
            raise NotPositive(f"cycle is not positive (margin {rep.margin:.3e})")


def _guess_sign(fiber: MilnorFiber, zeta0, z0, g1: SymmetricCircle) -> np.ndarray:
    """Leaf orientation (relative to i z^{2-n}) pointing towards gamma1."""
    dense = g1.zeta_interp(np.linspace(0.0, np.pi, 8 * g1.N + 1))
    near = dense[np.argmin(np.abs(zeta0[:, None] - dense[None, :]), axis=1)]
    d = _zeta_dir(fiber.n, z0)
    return np.where((np.conj(d) * (near - zeta0)).real >= 0, 1.0, -1.0)


def horizontal_match(g0: SymmetricCircle, g1: SymmetricCircle, max_arclength: float | None = None,
                     audit: bool = True) -> MatchResult:
    """Match every node of gamma0 with the point of gamma1 on the same leaf.

    The leaf through each interior node is first traced towards gamma1; only
    leaves that miss are traced in the opposite direction.  With ``audit``
    each trace continues 10% past its hit to detect a second intersection.

    Raises
    ------
    NotIsotopic, NotPositive, NoIntersection, DoubleIntersection, InvalidInput
    """
    _check_pair(g0, g1)
    fib = g0.fiber
    N = g0.N
    zeta0 = g0.zeta[1:N]
    z0 = g0.z[1:N]
    identity = np.zeros(N - 1, dtype=bool)
    orient = np.zeros(N - 1, dtype=int)
    if g1.N == N:
        close = np.abs(g1.zeta[1:N] - zeta0) <= 1e-13
        zt = 1e-13 * (1 + np.abs(z0))
        same = close & (np.abs(g1.z[1:N] - z0) <= zt)
        flip = close & (np.abs(g1.z[1:N] + z0) <= zt)
        identity = same | flip
        orient = np.where(same, 1, np.where(flip, -1, 0))
    c, rad = _domain(fib, np.concatenate([g0.zeta, g1.zeta]))
    tr = _Tracer(fib, g1, c, rad)
    if max_arclength is None:
        max_arclength = 10.0 * (1.0 + rad)
    beta_zeta = g0.zeta.copy()
    beta_z = g0.z.copy()
    v = np.zeros(N + 1)
    v[1:N] = orient * g0.u[1:N]
    ell = np.zeros(N + 1)
    J = np.zeros(N + 1)
    L = np.zeros(N + 1)
    sig = np.zeros(N + 1)
    sources: list = [None] * (N - 1)
    todo = np.nonzero(~identity)[0]
    signs = _guess_sign(fib, zeta0[todo], z0[todo], g1) if todo.size else np.zeros(0)
    residual = 0.0
    for attempt in range(2):
        if todo.size == 0:
            break
        res = tr.run(zeta0[todo], z0[todo], signs, max_arclength, audit=audit)
        if np.any(res.nhit > 1):
            bad = todo[np.nonzero(res.nhit > 1)[0][0]] + 1
            raise DoubleIntersection(f"leaf through gamma0(u_{bad}) meets gamma1 twice")
        got = res.nhit == 1
        rows = np.nonzero(got)[0]
        k = todo[rows] + 1
        beta_zeta[k] = res.hit["zeta"][rows]
        beta_z[k] = res.hit["z"][rows]
        v[k] = res.hit["v"][rows]
        orient[todo[rows]] = res.hit["orient"][rows]
        ell[k] = res.hit["ell"][rows]
        J[k] = res.hit["J"][rows]
        L[k] = res.hit["L"][rows]
        sig[k] = signs[rows]
        for r in rows:
            sources[todo[r]] = (res, r)
        for r in rows[:: max(1, rows.size // 16)]:
            nd = res.nodes(r)
            cut = res.hit["node"][r] + 1
            zz_ = np.append(nd["z"][:cut], res.hit["z"][r])
            ze_ = np.append(nd["zeta"][:cut], res.hit["zeta"][r])
            residual = max(residual, float(np.max(leaf_residual(fib, zz_, ze_))))
        miss = np.nonzero(~got)[0]
        if attempt == 1 and miss.size:
            st = _TERMINATION.get(int(res.status[miss[0]]), "")
            raise NoIntersection(
                f"leaf through gamma0(u_{todo[miss[0]] + 1}) does not meet gamma1 ({st})"
            )
        todo = todo[miss]
        signs = -signs[miss]
    if np.any(orient != orient[0]) or orient[0] == 0:
        raise NotIsotopic("matched points do not lie on one consistent sheet of gamma1")
    o = int(orient[0])
    v[N] = o * np.pi
    beta_zeta[0], beta_zeta[N] = g1.zeta[0], g1.zeta[-1]
    beta_z[0] = beta_z[N] = 0.0
    th = (float(np.angle(o * g1.dz[0])), float(np.angle(o * g1.dz[-1])))
    bundle = _LeafBundle(tr, sources, zeta0, z0)
    return MatchResult(g0, g1, beta_zeta, beta_z, v, o, ell, J, L, th, residual, sig, bundle)
