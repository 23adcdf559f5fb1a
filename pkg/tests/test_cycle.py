import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import parabolic, quad_fiber, random_cycle
from lag_geoflow import (
    InvariantFunction,
    PolynomialArc,
    SymmetricCircle,
    check_positive,
    cycle_from_arc,
    inner,
    integrate,
    is_special,
    make_fiber,
    measure_density,
    project_mean_zero,
    round_cycle,
)
from lag_geoflow.cycle import cycle_from_json, is_mean_zero, sphere_volume, total_mass
from lag_geoflow.errors import (
    ArcEndpointNotRoot,
    ArcThroughRoot,
    DistinctRootsRequired,
    InvalidCycle,
    NotPositive,
)


def vertical_segment_cycle(N=64):
    fib = quad_fiber(2)
    knots = np.array([1.0, 0.5, 0.5 + 0.4j, -1.0])
    ts = np.array([0.0, 0.25, 0.5, 1.0])

    def arc(x):
        x = np.asarray(x, dtype=float)
        return np.interp(x, ts, knots.real) + 1j * np.interp(x, ts, knots.imag)

    return cycle_from_arc(fib, arc, N)


def test_round_closed_form(fib2):
    g = round_cycle(fib2, 64)
    assert np.max(np.abs(g.zeta - np.cos(g.u))) <= 1e-12
    assert np.max(np.abs(g.z - np.sin(g.u))) <= 1e-12


def test_parabolic_closed_form(fib2):
    g = parabolic(fib2, 0.3, 64)
    u = g.u
    assert np.max(np.abs(g.zeta - (np.cos(u) + 0.3j * np.sin(u) ** 2))) <= 1e-13
    assert np.max(np.abs(g.z ** 2 - fib2.f(g.zeta))) <= 1e-12


def test_same_root_twice(fib2):
    with pytest.raises(DistinctRootsRequired):
        cycle_from_arc(fib2, PolynomialArc((1.0, 0.5j, -0.5j)), 32)
    assert issubclass(DistinctRootsRequired, ArcEndpointNotRoot)


def test_endpoint_not_root(fib2):
    with pytest.raises(ArcEndpointNotRoot):
        cycle_from_arc(fib2, PolynomialArc((0.5, -1.5)), 32)


def test_arc_through_root():
    fib = make_fiber([0, 1, 0, -1], 2)
    with pytest.raises(ArcThroughRoot):
        cycle_from_arc(fib, PolynomialArc((1.0, -2.0)), 32)


def test_invalid_cycle_off_fiber(fib2, round2):
    with pytest.raises(InvalidCycle):
        SymmetricCircle(fib2, round2.zeta, 1.01 * round2.z)


def test_round_positive(round2, round3):
    for g in (round2, round3):
        rep = check_positive(g)
        assert rep.is_positive
        assert rep.margin == pytest.approx(1.0, abs=1e-9)


def test_vertical_segment_not_positive():
    rep = check_positive(vertical_segment_cycle())
    assert not rep.is_positive
    assert rep.margin <= 1e-6


def test_density_closed_forms(fib2, fib3):
    g2 = round_cycle(fib2, 64)
    assert np.allclose(measure_density(g2), np.pi * np.sin(g2.u), atol=1e-12)
    g3 = round_cycle(fib3, 64)
    assert np.allclose(measure_density(g3), 2 * np.pi * np.sin(g3.u) ** 2, atol=1e-12)


def test_total_mass(fib2, fib3):
    assert total_mass(round_cycle(fib2, 256)) == pytest.approx(4 * np.pi, rel=1e-8)
    assert total_mass(round_cycle(fib3, 256)) == pytest.approx(2 * np.pi ** 2, rel=1e-8)
    assert sphere_volume(1) == 2


def test_density_requires_positive():
    with pytest.raises(NotPositive):
        measure_density(vertical_segment_cycle())


def test_cos_is_mean_zero(round2):
    h = InvariantFunction.from_callable(np.cos, round2.N)
    assert abs(integrate(round2, h)) <= 1e-13
    assert is_mean_zero(round2, h)


def test_project_constant(par2):
    h = InvariantFunction.from_callable(lambda u: 3.0 + 0 * u, par2.N)
    p = project_mean_zero(par2, h)
    assert np.max(np.abs(p.values)) <= 1e-13
    assert p.mean_zero


def test_special(round2, round3, par2):
    assert is_special(round2)
    assert is_special(round3)
    assert not is_special(par2)


@pytest.mark.parametrize("n,exact", [(2, 4 * np.pi / 3), (3, np.pi ** 2 / 2)])
def test_quadrature_round_closed_form(n, exact):
    # cos^2 u against pi |sin u| (n=2) and 2 pi sin^2 u (n=3) over the circle
    for N in (128, 256):
        g = round_cycle(quad_fiber(n), N)
        got = integrate(g, InvariantFunction.from_callable(lambda u: np.cos(u) ** 2, N))
        assert got == pytest.approx(exact, rel=1e-9)


def test_quadrature_refinement(fib3):
    vals = []
    for N in (16, 32, 64, 128):
        g = parabolic(fib3, 0.3, N)
        vals.append(integrate(g, InvariantFunction.from_callable(lambda u: np.cos(u) ** 3 + np.sin(u) ** 2, N)))
    diffs = np.abs(np.diff(vals))
    for a, b in zip(diffs[:-1], diffs[1:]):
        assert b <= a / 4 + 1e-13


def test_mirror_reverse_positivity(fib3, rng):
    for _ in range(3):
        g = random_cycle(fib3, rng, 64)
        r = SymmetricCircle(g.fiber, g.zeta[::-1], -g.z[::-1])
        assert check_positive(r).is_positive
        assert check_positive(r).margin == pytest.approx(check_positive(g).margin, abs=1e-12)


def test_n2_positivity_matches_transversality(fib2, rng):
    from lag_geoflow import ChartPoint, direction

    for g in [random_cycle(fib2, rng, 64, min_margin=0.0) for _ in range(3)] + [vertical_segment_cycle()]:
        dz = g.dzeta[1:g.N]
        cross = []
        for k in range(1, g.N):
            t = direction(g.fiber, ChartPoint.in_zeta_chart(g.z[k], g.zeta[k]))[1]
            cross.append((np.conj(t) * dz[k - 1]).imag / abs(dz[k - 1]))
        cross = np.array(cross)
        one_sided = np.all(cross > 0) or np.all(cross < 0)
        transversal = one_sided and np.min(np.abs(cross)) > g.tol.positivity_floor
        assert check_positive(g).is_positive == transversal


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_inner_semidefinite(coeffs):
    g = round_cycle(quad_fiber(3), 32)
    h = InvariantFunction.from_fourier(coeffs, 32)
    val = inner(g, h, h)
    assert val >= -1e-12
    if val <= 1e-14:
        assert np.max(np.abs(h.values[1:-1])) <= 1e-5


def test_json_roundtrip(par3):
    obj = json.loads(json.dumps(par3.to_json()))
    g = cycle_from_json(obj)
    assert np.array_equal(g.zeta, par3.zeta)
    assert np.array_equal(g.z, par3.z)


def test_json_arc_form(fib2):
    g = cycle_from_json({"fiber": fib2.to_json(), "arc": [[1, 0], [-2, 1.2], [0, -1.2]], "N": 32})
    assert np.allclose(g.zeta, np.cos(g.u) + 0.3j * np.sin(g.u) ** 2)


def test_csv_columns(round2):
    lines = round2.to_csv().splitlines()
    assert lines[0] == "u,re_zeta,im_zeta,re_z,im_z,mu"
    assert len(lines) == round2.N + 2
