import numpy as np
import pytest
from scipy import integrate as sci

from conftest import parabolic, quad_fiber, random_cycle
from lag_geoflow import (
    GeodesicPath,
    InvariantFunction,
    SymmetricCircle,
    bvp_solve,
    check_horizontal_family,
    distance,
    exp_isometry_check,
    hausdorff,
    horizontal_reparametrize,
    ivp_solve,
    norm,
    project_mean_zero,
    pullback,
    round_cycle,
    transport,
    triangle_identity,
    verify_geodesic,
)
from lag_geoflow.errors import HorizonReached, InvalidInput, NotPositive, StepUnstable
from lag_geoflow.geodesic import exp_map, isometry_defect


def band_area_h0(a):
    """h(0) for round -> parabolic(a), n = 2, from a 2D quadrature of the area form.

    Leaves are vertical, so the band swept up to u is the region between the
    segment and the parabola over Re zeta in [cos u, 1].  h equals this area
    minus its mean against the round measure pi |sin u|.
    """
    dens = lambda y, x: 1 + abs(x + 1j * y) ** 2 / abs(1 - (x + 1j * y) ** 2)
    area = lambda u: sci.dblquad(dens, np.cos(u), 1, 0, lambda x: a * (1 - x * x),
                                 epsabs=1e-12, epsrel=1e-12)[0]
    num = sci.quad(lambda u: area(u) * np.pi * np.sin(u), 0, np.pi, epsabs=1e-11, epsrel=1e-11)[0]
    return -num / (2 * np.pi)


def linear_family(g0, g1, ts):
    out = []
    for t in ts:
        zeta = (1 - t) * g0.zeta + t * g1.zeta
        z = np.empty_like(zeta)
        z[0] = z[-1] = 0.0
        prev = (1 - t) * g0.z + t * g1.z
        r = np.sqrt(g0.fiber.f(zeta[1:-1]))
        z[1:-1] = np.where(np.abs(r - prev[1:-1]) < np.abs(r + prev[1:-1]), r, -r)
        out.append(SymmetricCircle(g0.fiber, zeta, z))
    return out


@pytest.fixture(scope="module")
def path2(round2, par2):
    return bvp_solve(round2, par2)


@pytest.fixture(scope="module")
def path3(round3, par3):
    return bvp_solve(round3, par3)


def test_bvp_identity(par3):
    p = bvp_solve(par3, par3)
    assert np.max(np.abs(p.s)) <= 1e-12
    assert np.max(np.abs(p.h.values)) <= 1e-12
    for c in p.snapshots:
        assert np.max(np.abs(c.zeta - par3.zeta)) <= 1e-12


def test_bvp_vertical_snapshots(path2, round2, par2):
    assert len(path2.snapshots) == 5
    for c in path2.snapshots:
        assert np.max(np.abs(c.zeta.real - np.cos(round2.u))) <= 1e-10
    assert np.max(np.abs(path2.final.zeta - par2.zeta)) <= 1e-10


def test_bvp_h0_band_area(fib2):
    g0 = round_cycle(fib2, 128)
    p = bvp_solve(g0, parabolic(fib2, 0.3, 128), t_samples=())
    assert p.h.values[0] == pytest.approx(band_area_h0(0.3), abs=1e-8)


def test_bvp_h_odd_about_quarter(path2):
    # the configuration is symmetric under zeta -> -zeta
    h = path2.h.values
    assert np.allclose(h, -h[::-1], atol=1e-10)


def test_bvp_diagnostics(path3):
    d = path3.diagnostics
    assert d["cross_check"] <= 1e-4
    assert d["horizontality"] <= 1e-6
    assert path3.match.monotone


def test_bvp_horizontal_family(path2, path3):
    for p in (path2, path3):
        assert check_horizontal_family(p.snapshots) <= 1e-6


def test_linear_family_not_horizontal(round3, par3):
    fam = linear_family(round3, par3, np.linspace(0, 1, 5))
    assert check_horizontal_family(fam) > 1e-2


def test_constant_family_horizontal(par3):
    assert check_horizontal_family([par3, par3, par3]) == 0.0


def test_reparametrize_linear_n2(round2, par2):
    fam = horizontal_reparametrize(linear_family(round2, par2, np.linspace(0, 1, 4)))
    for c in fam:
        assert np.max(np.abs(c.zeta.real - np.cos(round2.u))) <= 1e-10
    assert check_horizontal_family(fam) <= 1e-6


def test_reparametrize_idempotent(path3):
    fam = horizontal_reparametrize(path3.snapshots)
    for a, b in zip(fam, path3.snapshots):
        assert np.max(np.abs(a.zeta - b.zeta)) <= 1e-8


def test_reparametrize_rejects_nonpositive(round2):
    from test_cycle import vertical_segment_cycle

    with pytest.raises(NotPositive):
        horizontal_reparametrize([round2, vertical_segment_cycle(round2.N)])


def test_constant_speed(path3):
    fine = bvp_solve(path3.start, path3.final, np.linspace(0, 1, 41))
    assert verify_geodesic(fine).speed_variation <= 1e-3


def test_bvp_grid_refinement(fib3):
    snaps = {}
    for N in (16, 32, 64, 128):
        p = bvp_solve(round_cycle(fib3, N), parabolic(fib3, 0.3, N), t_samples=(0.5,))
        snaps[N] = p.snapshots[0].zeta
    errs = [np.max(np.abs(snaps[N] - snaps[128][:: 128 // N])) for N in (16, 32, 64)]
    assert errs[1] <= errs[0] / 4 or errs[1] <= 1e-9
    assert errs[2] <= errs[1] / 4 or errs[2] <= 1e-9


def test_ivp_zero_velocity(par3):
    p = ivp_solve(par3, InvariantFunction(np.zeros(par3.N + 1), True), 0.1, 0.02)
    for c in p.snapshots:
        assert np.max(np.abs(c.zeta - par3.zeta)) <= 1e-14


def test_ivp_requires_mean_zero(round2):
    with pytest.raises(InvalidInput):
        ivp_solve(round2, InvariantFunction.from_fourier([1.0], round2.N), 0.1, 0.01)


def test_ivp_requires_positive(fib2):
    from test_cycle import vertical_segment_cycle

    g = vertical_segment_cycle(32)
    with pytest.raises(NotPositive):
        ivp_solve(g, InvariantFunction(np.zeros(33), True), 0.1, 0.01)


def test_ivp_vertical_markers(round2):
    h = InvariantFunction.from_callable(np.cos, round2.N)
    p = ivp_solve(round2, h, 0.3, 0.01)
    for c in p.snapshots:
        assert np.max(np.abs(c.zeta.real - np.cos(round2.u))) <= 1e-10
    assert p.diagnostics["leaf_confinement"] <= 1e-6


def test_ivp_velocity_recovery(round2):
    h = InvariantFunction.from_callable(np.cos, round2.N)
    p = ivp_solve(round2, h, 0.05, 0.005)
    rep = verify_geodesic(p)
    assert rep.per_time[0] <= 1e-3
    assert rep.residual <= 1e-4


def test_ivp_reversal(par3):
    h0 = project_mean_zero(par3, InvariantFunction.from_fourier([0, 0.1, 0.05], par3.N))
    fwd = ivp_solve(par3, h0, 0.5, 1 / 100)
    gT = fwd.final
    hT = project_mean_zero(gT, InvariantFunction(-h0.values))
    back = ivp_solve(gT, hT, 0.5, 1 / 100)
    assert hausdorff(back.final, par3) <= 1e-4


def test_ivp_stencil_agrees(par3):
    h0 = project_mean_zero(par3, InvariantFunction.from_fourier([0, 0.1], par3.N))
    a = ivp_solve(par3, h0, 0.5, 1 / 50)
    b = ivp_solve(par3, h0, 0.5, 1 / 50, method="stencil")
    assert hausdorff(a.final, b.final) <= 1e-3


def test_ivp_horizon(fib3):
    g = round_cycle(fib3, 32)
    h = project_mean_zero(g, InvariantFunction.from_fourier([0, 0, 1.0], 32))
    p = ivp_solve(g, h, 1.0, 1 / 100)
    assert p.horizon_reached
    assert p.times[-1] < 1.0
    with pytest.raises(HorizonReached):
        exp_map(g, h, 1 / 100)


def test_ivp_unstable_step(fib3):
    g = round_cycle(fib3, 32)
    h = project_mean_zero(g, InvariantFunction.from_fourier([0, 0, 10.0], 32))
    with pytest.raises(StepUnstable):
        ivp_solve(g, h, 1.0, 1 / 100)


def test_distance_zero(par3):
    assert distance(par3, par3) <= 1e-12


def test_distance_symmetric_and_mirror(round3, par3):
    d01 = distance(round3, par3)
    assert distance(par3, round3) == pytest.approx(d01, rel=1e-5)
    mirrored = SymmetricCircle(round3.fiber, round3.zeta, -round3.z)
    assert distance(mirrored, par3) == pytest.approx(d01, rel=1e-8)


def test_triangle_inequality_random(fib2, rng):
    g = [random_cycle(fib2, rng, 32) for _ in range(3)]
    assert distance(g[0], g[2]) <= distance(g[0], g[1]) + distance(g[1], g[2]) + 1e-5


def test_transport_identity(par3):
    tm = transport(par3, par3)
    assert np.max(np.abs(tm.abs_v - par3.u)) <= 1e-12
    h = InvariantFunction.from_callable(lambda u: np.cos(2 * u), par3.N)
    assert np.max(np.abs(pullback(tm, h).values - h.values)) <= 1e-12


def test_transport_naturality(fib3):
    N = 64
    g0, g1, g2 = round_cycle(fib3, N), parabolic(fib3, 0.2, N), parabolic(fib3, 0.4, N)
    v01, v12, v02 = transport(g0, g1).abs_v, transport(g1, g2).abs_v, transport(g0, g2).abs_v
    composed = np.interp(v01, g1.u, v12)
    assert np.max(np.abs(composed - v02)) <= 1e-3


def test_transport_isometry(round3, par3):
    tm = transport(round3, par3)
    h = project_mean_zero(par3, InvariantFunction.from_callable(np.cos, par3.N))
    assert isometry_defect(round3, par3, tm, h) <= 1e-4


def test_verify_constant_path(par3):
    p = GeodesicPath(np.linspace(0, 1, 4), [par3] * 4, InvariantFunction(np.zeros(par3.N + 1), True))
    assert verify_geodesic(p).residual <= 1e-14


def test_verify_bvp_path(path3):
    fine = bvp_solve(path3.start, path3.final, np.linspace(0, 1, 41))
    assert verify_geodesic(fine).residual <= 1e-3


def test_verify_corrupted(path3):
    ts = np.linspace(0, 1, 21)
    bad = GeodesicPath(ts, [path3.snapshot(t ** 2) for t in ts], path3.h)
    assert verify_geodesic(bad).residual > 1e-1


def test_triangle_degenerate(round3, par3):
    assert triangle_identity(round3, par3, round3) <= 1e-4
    assert triangle_identity(round3, round3, par3) <= 1e-10


def test_exp_isometry_trivial(round3):
    h = project_mean_zero(round3, InvariantFunction.from_fourier([0, 0.03], round3.N))
    assert exp_isometry_check(round3, h, h) == 0.0
    zero = InvariantFunction(np.zeros(round3.N + 1), True)
    assert exp_isometry_check(round3, h, zero, dt=1 / 50) <= 1e-2
