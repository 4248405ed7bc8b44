import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlperim.gridgeom import (GridSet, GridError, from_function, halfspace, ball_set, ball_domain,
                              box_domain, classical_perimeter, axis_face_counts,
                              directional_variation, line_samples, is_nonincreasing, jump_counts,
                              crofton_perimeter, crofton_constant, symmetric_difference_measure,
                              best_halfspace_fit, halfspace_fit_for, direction_grid, unit_angle)


def test_measure_and_complement():
    rng = np.random.default_rng(0)
    E = GridSet(rng.random((7, 9)) < 0.4, 0.5)
    assert E.measure() == 0.25 * E.u.sum()
    C = E.complement()
    assert not np.any(E.u & C.u) and np.all(E.u | C.u)
    assert C.complement() == E


def test_classical_perimeter_simple_sets():
    h = 1 / 16
    sq = from_function((32, 32), h, lambda x: (np.abs(x[..., 0]) < 0.5) & (np.abs(x[..., 1]) < 0.5))
    assert classical_perimeter(sq) == 4.0
    one = np.zeros((5, 5), bool)
    one[2, 2] = True
    assert classical_perimeter(GridSet(one, 0.1)) == pytest.approx(0.4)
    one3 = np.zeros((3, 3, 3), bool)
    one3[1, 1, 1] = True
    assert classical_perimeter(GridSet(one3, 0.1)) == pytest.approx(6 * 0.01)


@pytest.mark.parametrize("rho", [1 / 16, 1 / 32, 1 / 64, 1 / 128])
@pytest.mark.parametrize("shift", [(0.0, 0.0), (0.3, 0.21)])
def test_rotated_square_staircase(rho, shift):
    # the raster is orthogonally convex, so its perimeter is twice the sum of
    # its extents; cell-center sampling clips the tips by up to ~1.3 rho each
    N = int(math.ceil(1.6 / rho))
    a, b = shift[0] * rho, shift[1] * rho
    E = from_function((N, N), rho, lambda x: np.abs(x[..., 0] - a) + np.abs(x[..., 1] - b)
                      <= 0.5 * math.sqrt(2))
    cols = np.flatnonzero(E.u.any(axis=1))
    rows = np.flatnonzero(E.u.any(axis=0))
    assert classical_perimeter(E) == pytest.approx(2 * rho * (len(cols) + len(rows)), rel=1e-12)
    assert abs(classical_perimeter(E) - 4 * math.sqrt(2)) <= 6 * rho


def test_halfplane_directional_variation():
    h = 1 / 32
    E = halfspace((64, 64), h, (0, 1), 0.0)
    B = ball_domain(E, 1.0)
    dv = directional_variation(E, B, np.array([0.0, 1.0]))
    # increasing jumps (0 -> 1 along +v) are I_+; moving up leaves the set
    assert dv.phi_plus == 0.0
    assert dv.phi_minus == pytest.approx(2.0, abs=2 * h)
    dv1 = directional_variation(E, B, np.array([1.0, 0.0]))
    assert dv1.phi_plus == 0.0 and dv1.phi_minus == 0.0


def _brute_axis(u, m, axis, sign):
    up = down = 0
    uu = np.moveaxis(u, axis, -1)
    mm = np.moveaxis(m, axis, -1)
    for line, ml in zip(uu.reshape(-1, uu.shape[-1]), mm.reshape(-1, mm.shape[-1])):
        seq = list(zip(line, ml))
        if sign < 0:
            seq = seq[::-1]
        for (a, va), (b, vb) in zip(seq, seq[1:]):
            if va and vb:
                up += (not a) and b
                down += a and (not b)
    return up, down


def test_random_8x8_against_line_walk():
    rng = np.random.default_rng(5)
    for _ in range(10):
        E = GridSet(rng.random((8, 8)) < 0.5, 1.0)
        m = rng.random((8, 8)) < 0.8
        for axis in (0, 1):
            for sign in (1, -1):
                v = np.zeros(2)
                v[axis] = sign
                dv = directional_variation(E, m, v)
                up, down = _brute_axis(E.u, m, axis, sign)
                assert dv.counts_plus.sum() == up and dv.counts_minus.sum() == down


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0, 2 * math.pi))
def test_phi_reversal_symmetry(seed, ang):
    rng = np.random.default_rng(seed)
    E = GridSet(rng.random((12, 12)) < 0.5, 0.25)
    v = np.array([math.cos(ang), math.sin(ang)])
    a = directional_variation(E, None, v)
    b = directional_variation(E, None, -v)
    assert a.phi_plus == b.phi_minus and a.phi_minus == b.phi_plus


def test_zero_plus_count_means_nonincreasing():
    rng = np.random.default_rng(7)
    E = GridSet(rng.random((16, 16)) < 0.3, 1.0)
    v = np.array([0.6, 0.8])
    vals, valid, _ = line_samples(E, None, v)
    flags = is_nonincreasing(vals, valid)
    for ok, row, vv in zip(flags, vals, valid):
        seq = row[vv]
        if ok and len(seq) > 1:
            # on consecutive valid samples the indicator never increases
            assert all(not ((not a) and b) for a, b, c, d in zip(row, row[1:], vv, vv[1:]) if c and d)


def test_axis_jump_totals_equal_face_counts():
    rng = np.random.default_rng(8)
    E = GridSet(rng.random((10, 11)) < 0.5, 1.0)
    counts = axis_face_counts(E)
    for axis in (0, 1):
        v = np.zeros(2)
        v[axis] = 1
        dv = directional_variation(E, None, v)
        assert dv.counts_plus.sum() + dv.counts_minus.sum() == counts[axis]


def test_direction_must_be_unit():
    E = GridSet(np.zeros((4, 4), bool))
    with pytest.raises(GridError):
        directional_variation(E, None, np.array([1.0, 1.0]))


def test_crofton_constant_2d():
    assert crofton_constant(2) == 0.25


def test_crofton_examples():
    E = GridSet(np.zeros((32, 32), bool), 1 / 32)
    assert crofton_perimeter(E, None, 1000, 0)[0] == 0.0
    h = 1 / 64
    H = halfspace((128, 128), h, (0, 1), 0.0)
    est, se = crofton_perimeter(H, ball_domain(H, 1.0), 100000, 1)
    assert abs(est - 2.0) <= 3 * se + 2 * h


def test_crofton_disk_matches_staircase():
    h = 1 / 128
    D = ball_set((128, 128), h, 0.4)
    est, se = crofton_perimeter(D, None, 100000, 3)
    per = classical_perimeter(D)
    assert abs(est - per) <= 0.02 * per
    assert abs(est - per) <= 3 * se


def test_symmetric_difference():
    rng = np.random.default_rng(9)
    E = GridSet(rng.random((8, 8)) < 0.5, 0.5)
    F = GridSet(rng.random((8, 8)) < 0.5, 0.5)
    assert symmetric_difference_measure(E, E) == 0
    assert symmetric_difference_measure(E, E.complement()) == 64 * 0.25
    assert symmetric_difference_measure(E, F) == 0.25 * np.count_nonzero(E.u ^ F.u)
    with pytest.raises(GridError):
        symmetric_difference_measure(E, GridSet(np.zeros((4, 4), bool)))


def test_best_halfspace_examples():
    h = 1 / 16
    H = halfspace((32, 32), h, (0.6, 0.8), 0.1)
    B = ball_domain(H, 0.9)
    v, t, meas = best_halfspace_fit(H, B, 360, extra_directions=[np.array([0.6, 0.8])])
    assert meas == 0.0
    G = halfspace((32, 32), h, (0, 1), 0.0)
    u = G.u.copy()
    flips = [(3, 5), (20, 25), (16, 16)]
    for f in flips:
        u[f] = ~u[f]
    _, _, meas = best_halfspace_fit(G.like(u), None, 64)
    assert meas <= len(flips) * h * h


def test_best_halfspace_matches_brute_force():
    rng = np.random.default_rng(11)
    E = from_function((12, 12), 1.0, lambda x: (x[..., 0] - 1) ** 2 + x[..., 1] ** 2 < 16)
    u = E.u ^ (rng.random((12, 12)) < 0.05)
    E = E.like(u)
    x = E.centers().reshape(-1, 2)
    e = E.u.ravel()
    best = np.inf
    for v in direction_grid(2, 16):
        p = x @ v
        for t in np.concatenate([np.unique(p), [p.min() - 1]]):
            best = min(best, np.count_nonzero((p <= t) != e))
    _, _, meas = best_halfspace_fit(E, None, 16)
    assert meas == best


def test_unit_angle_axes_exact():
    assert np.array_equal(unit_angle(0, 360), [1.0, 0.0])
    assert np.array_equal(unit_angle(90, 360), [0.0, 1.0])
    assert np.array_equal(unit_angle(270, 360), [0.0, -1.0])


def test_domains():
    W = GridSet(np.zeros((10, 10), bool), 0.2)
    B = ball_domain(W, 0.5, center=(0.1, 0.1))
    x = W.centers()
    assert np.array_equal(B.omega, np.sum((x - 0.1) ** 2, axis=-1) <= 0.25)
    X = box_domain(W, (-0.35, -0.35), (0.35, 0.35))
    assert X.cell_count() == 16
    ext = np.ones((10, 10), bool)
    assert not np.any(B.with_exterior(ext).exterior & B.omega)


def test_jump_counts_bridge_gaps():
    vals = np.array([[False, False, True, True, False]])
    valid = np.array([[True, True, False, True, True]])
    assert tuple(x[0] for x in jump_counts(vals, valid)) == (0, 1)
    assert tuple(x[0] for x in jump_counts(vals, valid, bridge=True)) == (1, 1)
