import io
import math

import numpy as np
import pytest

from neutralstab.oracle import (MARGINAL, Region, RootFindingError, char_det,
                                characteristic_roots, curves_to_csv, decay_probe,
                                default_region, roots_to_csv, scalar_d_subdivision,
                                simulate_method_of_steps)
from neutralstab.stability import STABLE, UNSTABLE, full_test
from neutralstab.system import scalar_system


def test_delay_free_root():
    rs = characteristic_roots(scalar_system(-1.5, 0.0, 0.0, 1.0))
    assert len(rs.roots) == 1
    assert abs(rs.roots[0] + 1.5) < 1e-12
    assert rs.verdict == STABLE


def test_classical_boundary_roots():
    h = 0.8
    rs = characteristic_roots(scalar_system(0.0, -math.pi / (2 * h), 0.0, h))
    top = sorted(rs.roots, key=lambda s: -s.real)[:2]
    assert sorted(s.imag for s in top) == pytest.approx([-math.pi / (2 * h), math.pi / (2 * h)])
    assert all(abs(s.real) < 1e-10 for s in top)
    assert rs.verdict == UNSTABLE          # roots on the axis are not stable


def test_example2_region(example2_stable):
    rs = characteristic_roots(example2_stable, region=Region(-20, 2, -200, 200))
    assert rs.roots and all(s.real < 0 for s in rs.roots)
    assert rs.abscissa == pytest.approx(-0.8147, abs=1e-4)


def test_example2_unstable(example2_unstable):
    rs = characteristic_roots(example2_unstable)
    assert rs.verdict == UNSTABLE
    assert rs.abscissa == pytest.approx(1.2103, abs=1e-4)


def test_root_residuals(example1, matrix_system):
    for s in (example1, matrix_system):
        rs = characteristic_roots(s)
        assert max(rs.residuals) <= 1e-10
        for root in rs.roots:
            assert abs(char_det(s, root)) <= 1e-8 * max(1.0, abs(root)) ** s.n


def test_default_region_bound(example1):
    reg = default_region(example1)
    assert reg.re_max == pytest.approx(1.05 * 2 / 0.7 + 0.5)
    assert reg.contains(complex(0, 2.0)) and not reg.contains(complex(0, 10.0))


def test_roots_csv(example1):
    buf = io.StringIO()
    roots_to_csv(characteristic_roots(example1), buf)
    assert buf.getvalue().splitlines()[0].startswith("re,im")


def test_simulation_exponential():
    tr = simulate_method_of_steps(scalar_system(-1.0, 0.0, 0.0, 1.0), lambda t: [1.0], 5.0)
    assert tr.t[-1] == pytest.approx(5.0)
    assert abs(tr.x[-1, 0] - math.exp(-5.0)) <= 1e-8


def test_simulation_growth():
    tr = simulate_method_of_steps(scalar_system(1.0, 0.0, 0.0, 1.0), lambda t: [1.0], 3.0)
    assert tr.x[-1, 0] == pytest.approx(math.exp(3.0), rel=1e-8)


def test_simulation_example1_decays(example1):
    tr = simulate_method_of_steps(example1, lambda t: [1.0], 40.0, dphi=lambda t: [0.0])
    assert tr.norms()[-1] < 1e-3


def test_simulation_pure_delay_exact():
    # x' = -x(t-1), φ = 1: x(t) = 1 - t on [0, 1], 1 - t + (t-1)^2/2 on [1, 2]
    tr = simulate_method_of_steps(scalar_system(0.0, -1.0, 0.0, 1.0), lambda t: [1.0], 2.0,
                                  dphi=lambda t: [0.0])
    expect = np.where(tr.t <= 1, 1 - tr.t, 1 - tr.t + (tr.t - 1) ** 2 / 2)
    assert np.max(np.abs(tr.x[:, 0] - expect)) < 1e-12


def test_difference_operator_continuous():
    s = scalar_system(-1.0, 0.4, 0.5, 1.0)
    tr = simulate_method_of_steps(s, lambda t: [1.0 + t], 4.0, dphi=lambda t: [1.0])
    m = int(round(1.0 / tr.dt))
    # z = x - d x(t-h) recomputed from stored x agrees with the integrated z
    z = tr.x[m:, 0] - 0.5 * tr.x[:-m, 0]
    assert np.max(np.abs(z - tr.z[m:, 0])) < 1e-12
    # x itself jumps in slope at the knots but z is smooth: no jump in z at t = h
    jump = abs((tr.z[m + 1, 0] - tr.z[m, 0]) - (tr.z[m, 0] - tr.z[m - 1, 0]))
    assert jump < 1e-4


def test_step_validation():
    s = scalar_system(-1.0, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        simulate_method_of_steps(s, lambda t: [1.0], 5.0, dt=2.0)
    with pytest.raises(ValueError):
        simulate_method_of_steps(s, lambda t: [1.0], -1.0)


def test_decay_probe_matches_roots_on_random_scalars():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 20:
        s = scalar_system(rng.uniform(-3, 1), rng.uniform(-3, 3), rng.uniform(-0.8, 0.8),
                          rng.uniform(0.2, 2.0))
        alpha = characteristic_roots(s).abscissa
        if abs(alpha) < 0.05:
            continue
        verdict, slope = decay_probe(s)
        assert verdict == ("decay" if alpha < 0 else "growth"), (s, alpha, slope)
        checked += 1


def test_d_subdivision_zero_line():
    curves = scalar_d_subdivision(-0.3, 1.0)
    line = curves[0]
    assert line.kind == "s=0"
    assert np.allclose(line.points[:, 1], -line.points[:, 0])


def test_d_subdivision_classical_point():
    cv = scalar_d_subdivision(0.0, 1.0, omega_grid=[math.pi / 2])[1]
    assert cv.points[0] == pytest.approx([0.0, -math.pi / 2], abs=1e-14)


@pytest.mark.parametrize("omega", [0.7, 2.0, 5.0])
def test_d_subdivision_points_have_axis_roots(omega):
    d, h = -0.3, 1.0
    a0, a1 = scalar_d_subdivision(d, h, omega_grid=[omega])[1].points[0]
    s = scalar_system(a0, a1, d, h)
    assert abs(char_det(s, 1j * omega)) < 1e-12


def test_verdict_flips_across_boundary():
    # x' = a1 x(t-1) is stable iff -pi/2 < a1 < 0
    assert full_test(scalar_system(0.0, -math.pi / 2 + 0.05, 0.0, 1.0),
                     auto_precision=True).verdict == STABLE
    assert full_test(scalar_system(0.0, -math.pi / 2 - 0.05, 0.0, 1.0),
                     auto_precision=True).verdict == UNSTABLE


def test_curves_csv():
    buf = io.StringIO()
    curves_to_csv(scalar_d_subdivision(0.2, 1.0, omega_grid=[1.0, 4.0]), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "branch,kind,omega,a0,a1"
    assert len(lines) == 1 + 400 + 2


def test_d_subdivision_rejects_bad_d():
    with pytest.raises(ValueError):
        scalar_d_subdivision(1.0, 1.0)
