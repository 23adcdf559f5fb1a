"""Geodesics between O(n)-invariant positive matching cycles.

A geodesic starting at gamma0 with velocity dh0 moves each marker gamma0(u)
inside its own leaf, at the speed for which omega(d_t q, d_u q) = h0'(u).
The boundary-value problem is solved by matching gamma0 and gamma1 along
leaves and reading off the velocity from the symplectic area swept between
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from . import _spectral as sp
from .cycle import (
    InvariantFunction,
    SymmetricCircle,
    _even_extrapolate,
    check_positive,
    inner,
    is_mean_zero,
    measure_density,
    norm,
    project_mean_zero,
)
from .errors import (
    CrossCheckFailure,
    HorizonReached,
    InvalidCycle,
    InvalidInput,
    NotPositive,
    StepUnstable,
)
from .fiber import nearest_sqrt
from .foliation import MatchResult, _zeta_dir, chord_potential, horizontal_match, omega


def phi_derivative(circle: SymmetricCircle) -> np.ndarray:
    """d Phi / du = Re(z^{n-2} zeta') along the circle (half grid)."""
    n = circle.n
    out = np.zeros(circle.N + 1)
    zi = circle.z[1:-1]
    out[1:-1] = (zi ** (n - 2) * circle.dzeta[1:-1]).real
    return out


def liouville_primitive(circle: SymmetricCircle) -> sp.TrigInterpolant:
    """u -> integral from 0 to u of (1/2) Im(conj z dz + conj zeta dzeta) along the circle."""
    zf = circle.z_full
    zetaf = circle.zeta_full
    dzf = sp.derivative(zf)
    dzetaf = sp.derivative(zetaf)
    lam = 0.5 * (np.conj(zf) * dzf + np.conj(zetaf) * dzetaf).imag
    return sp.TrigInterpolant(sp.antiderivative(lam))


@dataclass
class GeodesicPath:
    """Time-indexed family of symmetric circles.

    Attributes
    ----------
    times : numpy.ndarray
    snapshots : list of SymmetricCircle
    h : InvariantFunction
        Velocity primitive at t = 0 (mean zero on the first snapshot).
    kind : str
        'ivp', 'bvp' or 'custom'.
    s : numpy.ndarray or None
        Flow-time function s(u_k) of a boundary-value solution.
    match : MatchResult or None
    diagnostics : dict
    horizon_reached : bool
        True when an initial-value integration stopped before the final time.
    """

    times: np.ndarray
    snapshots: list
    h: InvariantFunction
    kind: str = "custom"
    s: np.ndarray | None = None
    match: MatchResult | None = None
    diagnostics: dict = field(default_factory=dict)
    horizon_reached: bool = False
    stop_reason: str = ""

    @property
    def start(self) -> SymmetricCircle:
        return self.snapshots[0]

    @property
    def final(self) -> SymmetricCircle:
        return self.snapshots[-1]

    def snapshot(self, t: float) -> SymmetricCircle:
        """Snapshot at any t (boundary-value paths only)."""
        if self.match is None:
            raise InvalidInput("arbitrary-time snapshots need a boundary-value path")
        zeta, z = self.match.points_at(float(t))
        return SymmetricCircle(self.start.fiber, zeta, z)


# ---------------------------------------------------------------------------
# initial value problem


def _marker_velocity(fib, zeta, z, H):
    n = fib.n
    fp = fib.fprime(zeta)
    w = z ** (n - 2)
    g = 1 + np.abs(fp) ** 2 / (4 * np.abs(z) ** 2)
    dzeta = -1j * H * np.conj(w) / g
    return dzeta, fp / (2 * z) * dzeta


def _stencil_velocity(fib, zeta, z, hp, zeta_ends):
    """lambda_k T_k with lambda = h0' / omega(T, D_u q), D_u q by 4th-order differences."""
    n = fib.n
    N = zeta.size + 1
    zeta_h = np.concatenate([[zeta_ends[0]], zeta, [zeta_ends[1]]])
    z_h = np.concatenate([[0.0], z, [0.0]])
    zf = sp.mirror_odd(z_h)
    zetaf = sp.mirror_even(zeta_h)
    du = np.pi / N

    def d4(a):
        return (-np.roll(a, -2) + 8 * np.roll(a, -1) - 8 * np.roll(a, 1) + np.roll(a, 2)) / (12 * du)

    dzu = d4(zf)[1:N]
    dzetau = d4(zetaf)[1:N]
    fp = fib.fprime(zeta)
    tz = _zeta_dir(n, z)
    tzz = fp / (2 * z) * tz
    lam = hp / omega(tzz, tz, dzu, dzetau)
    return lam * tz, lam * tzz


def _project_to_leaf(fib, zeta_prev, z_prev, zeta, z, drift):
    """Newton in Phi: move each marker back to its leaf; returns new state and drift."""
    n = fib.n
    drift = drift + chord_potential(fib, z_prev, zeta_prev, z, zeta).real
    pre = np.abs(drift) / np.abs(z ** (n - 2))
    for _ in range(2):
        w = z ** (n - 2)
        dzeta = -drift / w
        zeta_new = zeta + dzeta
        z_new = nearest_sqrt(fib.f(zeta_new), z + fib.fprime(zeta) / (2 * z) * dzeta)
        drift = drift + chord_potential(fib, z, zeta, z_new, zeta_new).real
        zeta, z = zeta_new, z_new
    return zeta, z, drift, pre


def ivp_solve(g0: SymmetricCircle, h0: InvariantFunction, T: float = 1.0, dt: float = 1 / 200,
              method: str = "potential", store_every: int = 1) -> GeodesicPath:
    """Geodesic from g0 with initial velocity dh0, by the method of lines.

    Interior markers move along their leaves with classical RK4; after each
    step they are projected back onto their leaves (level sets of Phi).

    Parameters
    ----------
    method : {'potential', 'stencil'}
        'potential' uses the speed law omega(q_t, d_Phi) = h0'/Phi0' per
        marker; 'stencil' uses lambda = h0' / omega(T, D_u q) with fourth
        order centered differences of the current front.

    Raises
    ------
    NotPositive, InvalidInput, StepUnstable
    """
    rep = check_positive(g0)
    if not rep.is_positive:
        raise NotPositive(f"initial cycle is not positive (margin {rep.margin:.3e})")
    if h0.N != g0.N:
        raise InvalidInput(f"velocity has N={h0.N}, cycle has N={g0.N}")
    if not is_mean_zero(g0, h0, tol=1e-8):
        raise InvalidInput("initial velocity must have zero Re Omega mean")
    if not (dt > 0 and T >= 0):
        raise InvalidInput("need dt > 0 and T >= 0")
    if method not in ("potential", "stencil"):
        raise InvalidInput(f"unknown method {method!r}")
    fib = g0.fiber
    tol = fib.tol
    N = g0.N
    steps = max(1, int(round(T / dt))) if T > 0 else 0
    dt = T / steps if steps else dt
    hp = h0.derivative[1:N]
    php = phi_derivative(g0)[1:N]
    H = hp / php
    zeta = g0.zeta[1:N].copy()
    z = g0.z[1:N].copy()
    ends = (g0.zeta[0], g0.zeta[-1])
    drift = np.zeros(N - 1)

    def vel(zeta_, z_):
        if method == "potential":
            return _marker_velocity(fib, zeta_, z_, H)
        return _stencil_velocity(fib, zeta_, z_, hp, ends)

    times = [0.0]
    snaps = [g0]
    margins = [rep.margin]
    pre_drift = []
    theta = [_endpoint_theta(g0, h0)]
    chi = _endpoint_chi(g0, h0)
    horizon = False
    reason = ""
    for step in range(1, steps + 1):
        with np.errstate(all="ignore"):
            k1 = vel(zeta, z)
            k2 = vel(zeta + dt / 2 * k1[0], z + dt / 2 * k1[1])
            k3 = vel(zeta + dt / 2 * k2[0], z + dt / 2 * k2[1])
            k4 = vel(zeta + dt * k3[0], z + dt * k3[1])
        dzeta = dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        dz = dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        if not (np.all(np.isfinite(dzeta)) and np.all(np.isfinite(dz))):
            raise StepUnstable(f"non-finite marker velocity at step {step}")
        if np.any(np.abs(dz) > 0.5 * np.abs(z)):
            raise StepUnstable(f"marker moved by more than half its |z| at step {step}; reduce dt")
        zeta_new = zeta + dzeta
        z_new = nearest_sqrt(fib.f(zeta_new), z + dz)
        zeta_new, z_new, drift, pre = _project_to_leaf(fib, zeta, z, zeta_new, z_new, drift)
        pre_drift.append(float(np.max(pre)))
        zeta, z = zeta_new, z_new
        try:
            snap = SymmetricCircle(fib, np.concatenate([[ends[0]], zeta, [ends[1]]]),
                                   np.concatenate([[0.0], z, [0.0]]))
            rep = check_positive(snap)
        except InvalidCycle as exc:
            horizon, reason = True, f"cycle degenerated at t={step * dt:.6g}: {exc}"
            break
        if not rep.is_positive:
            horizon, reason = True, f"positivity lost at t={step * dt:.6g} (margin {rep.margin:.3e})"
            break
        chi_new = _endpoint_chi(snap, h0)
        theta.append(tuple(th - dt * (c0 + c1) for th, c0, c1 in zip(theta[-1], chi, chi_new)))
        chi = chi_new
        if step % store_every == 0 or step == steps:
            times.append(step * dt)
            snaps.append(snap)
            margins.append(rep.margin)
    diag = {
        "positivity_margin": margins,
        "leaf_drift_pre_projection": max(pre_drift) if pre_drift else 0.0,
        "leaf_confinement": float(np.max(np.abs(drift) / np.abs(z ** (fib.n - 2)))) if N > 1 else 0.0,
        "endpoint_theta": [list(th) for th in theta[:: max(1, store_every)]],
        "dt": dt,
        "method": method,
    }
    return GeodesicPath(np.array(times), snaps, h0, "ivp", None, None, diag, horizon, reason)


def _endpoint_chi(circle: SymmetricCircle, h: InvariantFunction) -> tuple:
    """chi_r = lim d(h o P)/r dr at both endpoints, from h(u_k) - h(u_0) ~ c r_k^2, k = 1, 2."""
    out = []
    for ks, k0 in (((1, 2), 0), ((-2, -3), -1)):
        r2 = np.abs(circle.z[list(ks)]) ** 2
        dh = h.values[list(ks)] - h.values[k0]
        c = float(r2 @ dh / (r2 @ r2))
        out.append(2 * c)
    return tuple(out)


def _endpoint_theta(circle: SymmetricCircle, h: InvariantFunction) -> tuple:
    return (float(np.angle(circle.dz[0])), float(np.angle(circle.dz[-1])))


# ---------------------------------------------------------------------------
# boundary value problem


def bvp_solve(g0: SymmetricCircle, g1: SymmetricCircle, t_samples=(0.0, 0.25, 0.5, 0.75, 1.0),
              cross_check: bool = True) -> GeodesicPath:
    """The geodesic from g0 to g1.

    Pipeline: leafwise matching, flow time s(u) of the pseudo-Hamiltonian
    field of k = cos u, h' = s k', mean-zero normalization, snapshots at the
    requested times, and an independent swept-area audit of h.

    Raises
    ------
    NotIsotopic, NotPositive, NoIntersection, DoubleIntersection, CrossCheckFailure
    """
    m = horizontal_match(g0, g1)
    N = g0.N
    u = g0.u
    php = phi_derivative(g0)
    hp = php * m.area
    hp[0] = hp[-1] = 0.0
    kp = -np.sin(u)
    s = np.empty(N + 1)
    s[1:N] = hp[1:N] / kp[1:N]
    s[0] = _even_extrapolate(u[1:4], s[1:4])
    s[N] = _even_extrapolate(u[1:4], s[N - 1:N - 4:-1])
    hraw = sp.antiderivative(sp.mirror_odd(hp))[: N + 1]
    h = project_mean_zero(g0, InvariantFunction(hraw))
    # swept-area audit: h = -(signed symplectic area of the loop) + const
    L0 = liouville_primitive(g0)
    L1 = liouville_primitive(g1)
    area = L0(u) + m.liouville - L1(m.v)
    area[0] = 0.0
    area[N] = L0(np.pi) + 0.0 - L1(m.v[N])
    d = h.values + area
    mu = measure_density(g0)
    c = float(np.sum(g0.weights * mu * d) / np.sum(g0.weights * mu))
    hmax = float(np.max(np.abs(h.values)))
    cross = float(np.max(np.abs(d - c))) / max(hmax, 1e-300) if hmax > 0 else float(np.max(np.abs(d - c)))
    if cross_check and cross > g0.tol.cross_tol and np.max(np.abs(d - c)) > 1e-10:
        raise CrossCheckFailure(f"swept-area audit failed: relative deviation {cross:.3e}")
    times = np.asarray(list(t_samples), dtype=float)
    snaps = []
    for t in times:
        zeta, z = m.points_at(float(t))
        snaps.append(SymmetricCircle(g0.fiber, zeta, z))
    diag = {
        "cross_check": cross,
        "leaf_residual": m.leaf_residual,
        "orientation": m.orientation,
        "distance": norm(g0, h),
        "v_monotone": m.monotone,
    }
    if snaps:
        diag["positivity_margin"] = [check_positive(c_).margin for c_ in snaps]
        diag["horizontality"] = check_horizontal_family(snaps) if len(snaps) > 1 else 0.0
    if not snaps:
        snaps = [g0]
        times = np.array([0.0])
    return GeodesicPath(times, snaps, h, "bvp", s, m, diag)


def distance(g0: SymmetricCircle, g1: SymmetricCircle) -> float:
    """Upsilon-length of the geodesic from g0 to g1."""
    return norm(g0, bvp_solve(g0, g1, t_samples=()).h)


# ---------------------------------------------------------------------------
# transport


@dataclass
class TransportMap:
    """Leafwise map gamma0 -> gamma1 on the u-grid of gamma0.

    ``v`` is signed: orientation * |v|, with |v| strictly increasing from 0 to pi.
    """

    v: np.ndarray
    orientation: int
    N1: int

    @property
    def abs_v(self) -> np.ndarray:
        return self.orientation * self.v


def transport(g0: SymmetricCircle, g1: SymmetricCircle, match: MatchResult | None = None) -> TransportMap:
    m = horizontal_match(g0, g1) if match is None else match
    return TransportMap(m.v.copy(), m.orientation, g1.N)


def pullback(tm: TransportMap, h: InvariantFunction) -> InvariantFunction:
    """(phi^* h)(u_k) = h(v_k) by periodic cubic interpolation on gamma1's grid."""
    if h.N != tm.N1:
        raise InvalidInput(f"function has N={h.N}, target cycle has N={tm.N1}")
    uf = np.pi * np.arange(2 * h.N + 1) / h.N
    spl = CubicSpline(uf, np.append(h.full, h.full[0]), bc_type="periodic")
    return InvariantFunction(spl(np.abs(tm.v)), h.mean_zero)


def isometry_defect(g0: SymmetricCircle, g1: SymmetricCircle, tm: TransportMap, h: InvariantFunction) -> float:
    a = inner(g0, pullback(tm, h), pullback(tm, h))
    b = inner(g1, h, h)
    return abs(a - b) / max(abs(b), 1e-300)


# ---------------------------------------------------------------------------
# verification


@dataclass
class GeodesicReport:
    residual: float
    per_time: np.ndarray
    speed: np.ndarray
    speed_variation: float


def recover_velocity(path: GeodesicPath) -> list:
    """Velocity primitives h_t at every snapshot from omega(d_t q, d_u q)."""
    snaps = path.snapshots
    t = np.asarray(path.times, dtype=float)
    Z = np.array([c.z for c in snaps])
    ZE = np.array([c.zeta for c in snaps])
    order = 2 if len(snaps) >= 3 else 1
    Zt = np.gradient(Z, t, axis=0, edge_order=order)
    ZEt = np.gradient(ZE, t, axis=0, edge_order=order)
    out = []
    for j, c in enumerate(snaps):
        hp = omega(Zt[j], ZEt[j], c.dz, c.dzeta)
        hp[0] = hp[-1] = 0.0
        hv = sp.antiderivative(sp.mirror_odd(hp))[: c.N + 1]
        out.append(project_mean_zero(c, InvariantFunction(hv)))
    return out


def verify_geodesic(path: GeodesicPath) -> GeodesicReport:
    """Check h_t o Psi_t = h_0 o Psi_0 along a discrete path.

    The residual is max over interior times and nodes of |h_t - h_0|
    divided by the sup norm of h_0 (absolute when h_0 vanishes).
    """
    if len(path.snapshots) < 3:
        raise InvalidInput("verification needs at least 3 snapshots")
    hs = recover_velocity(path)
    h0 = path.h.values
    scale = float(np.max(np.abs(h0)))
    per = np.array([float(np.max(np.abs(h.values - h0))) for h in hs])
    if scale > 0:
        per = per / scale
    interior = per[1:-1]
    speed = np.array([norm(c, h) for c, h in zip(path.snapshots, hs)])
    var = float((speed.max() - speed.min()) / speed.max()) if speed.max() > 0 else 0.0
    return GeodesicReport(float(np.max(interior)), per, speed, var)


def check_horizontal_family(snapshots) -> float:
    """Largest |Re dW| / |dW| between consecutive snapshots at each interior node.

    dW = 2 z^{n-1}/f'(zeta) dz is integrated exactly along the step, so the
    test has no O(dt) bias; steps with |dz| and |dzeta| < 1e-14 count as 0.
    """
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise InvalidInput("need at least two snapshots")
    fib = snaps[0].fiber
    N = snaps[0].N
    worst = 0.0
    for a, b in zip(snaps[:-1], snaps[1:]):
        if b.N != N:
            raise InvalidInput("snapshots must share one grid")
        za, zb = a.z[1:N], b.z[1:N]
        ea, eb = a.zeta[1:N], b.zeta[1:N]
        dw = chord_potential(fib, za, ea, zb, eb)
        small = (np.abs(zb - za) < 1e-14) & (np.abs(eb - ea) < 1e-14)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(small, 0.0, np.abs(dw.real) / np.abs(dw))
        worst = max(worst, float(np.max(np.nan_to_num(r))))
    return worst


def horizontal_reparametrize(family) -> list:
    """Re-mark each member so that markers follow leaves from the first member."""
    fam = list(family)
    for c in fam:
        rep = check_positive(c)
        if not rep.is_positive:
            raise NotPositive(f"family member is not positive (margin {rep.margin:.3e})")
    out = [fam[0]]
    for c in fam[1:]:
        m = horizontal_match(fam[0], c)
        out.append(SymmetricCircle(c.fiber, m.beta_zeta, m.beta_z))
    return out


def triangle_identity(g0, g1, g2) -> float:
    """Relative Upsilon-norm defect of h02 = h01 + phi01^* h12.

    The defect is divided by the largest of the three norms, so that a
    degenerate side (e.g. g2 = g0) is measured against the other two.
    """
    p01 = bvp_solve(g0, g1, t_samples=())
    p02 = bvp_solve(g0, g2, t_samples=())
    p12 = bvp_solve(g1, g2, t_samples=())
    pulled = pullback(transport(g0, g1, p01.match), p12.h)
    diff = p02.h - p01.h - pulled
    scale = max(norm(g0, p02.h), norm(g0, p01.h), norm(g0, pulled))
    return norm(g0, diff) / scale if scale > 0 else 0.0


def exp_map(g0: SymmetricCircle, h: InvariantFunction, dt: float = 1 / 200) -> SymmetricCircle:
    """Endpoint of the geodesic t -> exp(t dh), t in [0, 1]."""
    path = ivp_solve(g0, h, 1.0, dt, store_every=10 ** 9)
    if path.horizon_reached:
        raise HorizonReached(path.stop_reason)
    return path.final


def exp_isometry_check(g0: SymmetricCircle, h1: InvariantFunction, h2: InvariantFunction,
                       dt: float = 1 / 200) -> float:
    """|d(exp h1, exp h2) - |h1 - h2|| / |h1 - h2|."""
    ref = norm(g0, h1 - h2)
    if ref == 0:
        return 0.0
    a = exp_map(g0, h1, dt)
    b = exp_map(g0, h2, dt)
    return abs(distance(a, b) - ref) / ref


# ---------------------------------------------------------------------------
# comparison of cycles


def _point_segment(p, a, b):
    d = b - a
    dd = np.abs(d) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.clip(((np.conj(d)[None, :] * (p[:, None] - a[None, :])).real) / dd[None, :], 0, 1)
    t = np.nan_to_num(t)
    return np.min(np.abs(p[:, None] - (a[None, :] + t * d[None, :])), axis=1)


def hausdorff(a: SymmetricCircle, b: SymmetricCircle) -> float:
    """Hausdorff distance of the zeta-polylines of two circles."""
    pa, pb = a.zeta, b.zeta
    d1 = _point_segment(pa, pb[:-1], pb[1:]).max()
    d2 = _point_segment(pb, pa[:-1], pa[1:]).max()
    return float(max(d1, d2))
