import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ira_mmc.mesh_fe import GridSpec
from ira_mmc.mmc import (
    Component,
    HeavisideParams,
    as_design,
    combine_max,
    distance_gradient,
    element_moduli,
    field_snapshot,
    heaviside,
    heaviside_derivative,
    read_components,
    tdf,
    tdf_distance,
    tdf_gradient,
    volume,
    write_components,
)

from oracles import central_difference, raster_volume_fraction

components = st.builds(
    Component,
    x0=st.floats(0.2, 1.8),
    y0=st.floats(0.2, 0.8),
    half_length=st.floats(0.1, 0.8),
    t1=st.floats(0.02, 0.2),
    t2=st.floats(0.02, 0.2),
    t3=st.floats(0.02, 0.2),
    theta=st.floats(-math.pi, math.pi),
)


def _phi(c, x, y):
    return tdf(c, x, y)[0]


# ---------------------------------------------------------------- TDF


def test_tdf_examples():
    c = Component(0.7, 0.4, 0.3, 0.05, 0.08, 0.06, 0.4)
    assert _phi(c, 0.7, 0.4)[0] == 1.0
    tip = (0.7 + 0.3 * math.cos(0.4), 0.4 + 0.3 * math.sin(0.4))
    assert _phi(c, *tip)[0] == pytest.approx(0.0, abs=1e-12)
    assert _phi(c, 0.7 + 30.0, 0.4)[0] < 0


def test_tdf_accepts_scalars_and_arrays():
    c = Component(0.5, 0.5, 0.3, 0.05, 0.05, 0.05, 0.0)
    assert tdf(c, 0.5, 0.5).shape == (1, 1)
    assert tdf([c, c], np.zeros(4), np.zeros(4)).shape == (2, 4)


def test_component_validation_and_design():
    with pytest.raises(ValueError):
        Component(0, 0, 0.0, 0.1, 0.1, 0.1, 0)
    with pytest.raises(ValueError):
        Component(0, 0, 1.0, 0.1, -0.1, 0.1, 0)
    c = Component(1, 2, 3, 4, 5, 6, 7)
    assert Component.from_array(c.to_array()) == c
    with pytest.raises(ValueError):
        as_design([])


@given(c=components, dx=st.floats(-5, 5), dy=st.floats(-5, 5), px=st.floats(0, 2), py=st.floats(0, 1))
def test_translation_equivariance(c, dx, dy, px, py):
    moved = Component(c.x0 + dx, c.y0 + dy, c.half_length, c.t1, c.t2, c.t3, c.theta)
    a = _phi(c, px, py)
    b = _phi(moved, px + dx, py + dy)
    assume(abs(a[0]) < 1e6)
    assert b == pytest.approx(a, abs=1e-12 * max(1.0, abs(a[0])) + 1e-10)


@given(c=components, rot=st.floats(-math.pi, math.pi), px=st.floats(0, 2), py=st.floats(0, 1))
def test_rotation_equivariance(c, rot, px, py):
    cr, sr = math.cos(rot), math.sin(rot)

    def turn(x, y):
        return c.x0 + cr * (x - c.x0) - sr * (y - c.y0), c.y0 + sr * (x - c.x0) + cr * (y - c.y0)

    turned = Component(c.x0, c.y0, c.half_length, c.t1, c.t2, c.t3, c.theta + rot)
    a = _phi(c, px, py)[0]
    b = _phi(turned, *turn(px, py))[0]
    assert b == pytest.approx(a, rel=1e-10, abs=1e-10)


def test_combine_max_examples():
    a = Component(0.5, 0.5, 0.3, 0.05, 0.05, 0.05, 0.0)
    b = Component(1.5, 0.5, 0.3, 0.05, 0.05, 0.05, 0.0)
    x = np.linspace(0, 2, 41)
    y = np.full_like(x, 0.5)
    np.testing.assert_array_equal(combine_max([a], x, y), tdf(a, x, y)[0])
    np.testing.assert_array_equal(combine_max([a, a], x, y), combine_max([a], x, y))
    phi, owner = combine_max([a, b], np.array([0.5]), np.array([0.5]), return_owner=True)
    assert phi[0] == tdf(a, 0.5, 0.5)[0, 0] and owner[0] == 0
    with pytest.raises(ValueError):
        combine_max([], x, y)


@settings(max_examples=25)
@given(cs=st.lists(components, min_size=2, max_size=5), seed=st.integers(0, 1000))
def test_combine_max_permutation_invariant(cs, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 2, 50), rng.uniform(0, 1, 50)
    perm = rng.permutation(len(cs))
    np.testing.assert_array_equal(combine_max(cs, x, y), combine_max([cs[i] for i in perm], x, y))


# ---------------------------------------------------------------- derivatives


def _fd_check(fun, grad, p, x, y, tol):
    scale = np.array([1.0, 1.0, p[2], p[3], p[4], p[5], 1.0])
    h = 1e-6 * scale
    fd = np.array([central_difference(lambda q, i=i: fun(q, x[i], y[i]), p, h) for i in range(x.size)]).T
    an = grad(p, x, y)
    ok = np.isfinite(fd).all(axis=0) & (np.abs(fd).max(axis=0) < 1e8)
    # relative error of each point's 7-vector of partials
    err = np.linalg.norm(an[:, ok] - fd[:, ok], axis=0) / np.maximum(np.linalg.norm(fd[:, ok], axis=0), 1e-12)
    return err.max() <= tol


def test_tdf_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    p = np.array([1.0, 0.5, 0.4, 0.05, 0.09, 0.07, 0.6])
    x = 1.0 + rng.uniform(-0.4, 0.4, 20)
    y = 0.5 + rng.uniform(-0.3, 0.3, 20)
    assert _fd_check(lambda q, xi, yi: tdf(q, xi, yi)[0, 0], lambda q, x, y: tdf_gradient(q, x, y), p, x, y, 1e-5)


def test_tdf_gradient_vanishes_at_center():
    c = Component(1.0, 0.5, 0.4, 0.05, 0.05, 0.05, 0.0)
    assert tdf_gradient(c, 1.0, 0.5, param_index=0)[0] == 0.0
    assert tdf_gradient(c, 1.0, 0.5).shape == (7, 1)


@settings(max_examples=30)
@given(
    c=components,
    pinch=st.booleans(),
    seed=st.integers(0, 1000),
)
def test_distance_gradient_matches_finite_differences(c, pinch, seed):
    p = c.to_array()
    if pinch:  # thick ends, thin middle: the floored profile
        p[3], p[4], p[5] = 0.15, 0.02, 0.12
    # the floor min(t1, t2, t3) has no derivative where two thicknesses tie
    t_sorted = np.sort(p[3:6])
    assume(t_sorted[1] - t_sorted[0] > 1e-3)
    rng = np.random.default_rng(seed)
    # points near the boundary, where the Heaviside band lives
    s = rng.uniform(-1.2, 1.2, 20) * p[2]
    off = rng.choice([-1, 1], 20) * rng.uniform(0.5, 1.5, 20) * p[4]
    x = p[0] + s * math.cos(p[6]) - off * math.sin(p[6])
    y = p[1] + s * math.sin(p[6]) + off * math.cos(p[6])

    def d_of(q, xi, yi):
        return tdf_distance(q, xi, yi)[0, 0]

    # stay clear of the profile floor's kink, where one-sided limits differ
    L, t1, t2, t3 = p[2:6]
    X = s
    quad = t2 + (t3 - t1) / (2 * L) * X + (t1 + t3 - 2 * t2) / (2 * L * L) * X**2
    keep = np.abs(quad - min(t1, t2, t3)) > 1e-4
    assume(keep.sum() >= 5)
    assert _fd_check(d_of, lambda q, x, y: distance_gradient(q, x, y), p, x[keep], y[keep], 1e-5)


def test_distance_matches_tdf_sign():
    rng = np.random.default_rng(1)
    c = Component(1.0, 0.5, 0.5, 0.05, 0.1, 0.03, 0.3)
    x, y = rng.uniform(0, 2, 500), rng.uniform(0, 1, 500)
    assert np.array_equal(np.sign(tdf(c, x, y)), np.sign(tdf_distance(c, x, y)))


# ---------------------------------------------------------------- Heaviside


def test_heaviside_examples():
    hp = HeavisideParams(0.1, 1e-3, 2)
    assert heaviside(0.0, hp) == pytest.approx((1 + 1e-3) / 2, abs=1e-15)
    assert heaviside(0.1, hp) == pytest.approx(1.0, abs=1e-15)
    assert heaviside(-0.1, hp) == pytest.approx(1e-3, abs=1e-15)
    assert heaviside(5.0, hp) == 1.0 and heaviside(-5.0, hp) == pytest.approx(1e-3, abs=1e-15)
    assert heaviside_derivative(0.1, hp) == 0.0 and heaviside_derivative(-0.1, hp) == 0.0


@given(a=st.floats(-1, 1), b=st.floats(-1, 1))
def test_heaviside_monotone_in_range(a, b):
    hp = HeavisideParams(0.2, 1e-3, 2)
    lo, hi = sorted((a, b))
    assert hp.alpha - 1e-15 <= heaviside(lo, hp) <= heaviside(hi, hp) <= 1.0 + 1e-15


def test_heaviside_derivative_matches_differences():
    hp = HeavisideParams(0.2, 1e-3, 2)
    phi = np.linspace(-0.19, 0.19, 30)
    fd = (heaviside(phi + 1e-7, hp) - heaviside(phi - 1e-7, hp)) / 2e-7
    np.testing.assert_allclose(heaviside_derivative(phi, hp), fd, rtol=1e-6)


@pytest.mark.parametrize("kw", [dict(epsilon=0.0), dict(epsilon=1, alpha=0.0), dict(epsilon=1, alpha=1.0), dict(epsilon=1, q=1)])
def test_heaviside_params_validation(kw):
    with pytest.raises(ValueError):
        HeavisideParams(**kw)


# ---------------------------------------------------------------- moduli and volume


def test_element_moduli_examples():
    g = GridSpec(1.0, 1.0, 1, 1)
    assert element_moduli(np.ones(4), g, 1.0, 2)[0] == 1.0
    assert element_moduli(np.full(4, 1e-3), g, 1.0, 2)[0] == pytest.approx(1e-6, rel=1e-12)
    # nodes 0 and 1 are the left column (bottom, top); element lists 0, 2, 3, 1
    H = np.array([1.0, 1e-3, 1.0, 1e-3])
    assert element_moduli(H, g, 1.0, 2)[0] == pytest.approx((2 + 2e-6) / 4, rel=1e-12)


def test_element_moduli_passive_elements():
    mask = np.array([True, False, True, True])
    g = GridSpec(1.0, 1.0, 2, 2, mask)
    Ee = element_moduli(np.ones(9), g, 2.0, 2)
    assert Ee.tolist() == [2.0, 2.0 * 1e-6, 2.0, 2.0]


@given(H=st.lists(st.floats(1e-3, 1.0), min_size=4, max_size=4), i=st.integers(0, 3), bump=st.floats(0, 1))
def test_element_moduli_monotone(H, i, bump):
    g = GridSpec(1.0, 1.0, 1, 1)
    H = np.array(H)
    H2 = H.copy()
    H2[i] = min(1.0, H2[i] + bump)
    assert element_moduli(H2, g, 1.0, 2)[0] >= element_moduli(H, g, 1.0, 2)[0]


def test_volume_examples():
    g = GridSpec(2.0, 1.0, 4, 2)
    assert volume(np.ones(g.n_nodes), g, 0.4) == (1.0, pytest.approx(0.6))
    assert volume(np.full(g.n_nodes, 1e-3), g)[0] == pytest.approx(1e-3)


def test_volume_matches_supersampled_raster():
    g = GridSpec(2.0, 1.0, 80, 40)
    hp = HeavisideParams.for_grid(g)
    comp = [1.0, 0.5, 0.9, 0.22, 0.3, 0.25, 0.05]
    frac = field_snapshot(np.array([comp]), g, hp).volume_fraction
    oracle = raster_volume_fraction([comp], 2.0, 1.0, 800, 400)
    assert 0.35 < oracle < 0.65
    assert abs(frac - oracle) <= 0.02 * oracle


# ---------------------------------------------------------------- snapshot


def test_snapshot_invariants():
    rng = np.random.default_rng(2)
    g = GridSpec(2.0, 1.0, 20, 10)
    hp = HeavisideParams.for_grid(g)
    design = np.column_stack([
        rng.uniform(0, 2, 6), rng.uniform(0, 1, 6), rng.uniform(0.2, 0.6, 6),
        rng.uniform(0.02, 0.1, (6, 3)), rng.uniform(-3, 3, 6),
    ])
    snap = field_snapshot(design, g, hp)
    assert hp.alpha - 1e-15 <= snap.H_nodal.min() and snap.H_nodal.max() <= 1.0
    assert hp.alpha**2 - 1e-15 <= snap.element_moduli.min() and snap.element_moduli.max() <= 1.0
    x, y = g.node_coordinates()
    np.testing.assert_allclose(snap.phi_nodal, combine_max(design, x, y), rtol=1e-12)
    assert np.array_equal(np.sign(snap.phi_nodal), np.sign(snap.dist_nodal))
    assert snap.element_density(g).shape == (10, 20)


def test_components_file_round_trip(tmp_path):
    g = GridSpec(2.0, 1.0, 8, 4)
    design = np.array([[0.1, 0.2, 0.3, 0.01, 0.02, 0.03, -1.0], [1 / 3, 2 / 3, 0.5, 0.1, 0.1, 0.1, math.pi]])
    write_components(tmp_path / "c.txt", design, g)
    back, info = read_components(tmp_path / "c.txt")
    np.testing.assert_array_equal(back, design)
    assert info == (8, 4, 2.0, 1.0)
