import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spiralsamp.errors import (
    ClassificationWindowError,
    InsufficientWindowError,
    NormalizationError,
    ParameterDomainError,
)
from spiralsamp.trajectory import (
    QuadratureSet,
    arc_quadrature,
    ball_measure,
    classify_spiraling,
    crossing_deviations,
    extract_separated,
    gap_estimate,
    make_trajectory,
    min_pairwise_distance,
    rate_translate_index,
    read_quadrature_csv,
    speed_and_curvature,
    translated_quadrature,
    weak_limit_deviation,
    write_quadrature_csv,
)


def spiral(eta=1.0, theta0=0.0, **kw):
    return make_trajectory("spiral", eta=eta, theta0=theta0, **kw)


# -- construction -----------------------------------------------------------


@pytest.mark.parametrize(
    "traj, theta, ring, expected",
    [
        (spiral(1.0), 1.0, None, (1.0, 0.0)),
        (spiral(0.75), 0.25, None, (0.0, 0.1875)),
        (make_trajectory("circles", eta=0.5), 0.25, 2, (0.0, 1.0)),
    ],
)
def test_positions(traj, theta, ring, expected):
    assert np.allclose(traj.position(theta, ring), expected, atol=1e-14)


def test_spiral_matches_polar_form():
    th = np.linspace(0, 7, 101)
    p = spiral(0.9).position(th)
    assert np.allclose(p[:, 0], 0.9 * th * np.cos(2 * np.pi * th), atol=1e-13)
    assert np.allclose(p[:, 1], 0.9 * th * np.sin(2 * np.pi * th), atol=1e-13)


def test_rotated_spiral_crosses_axis_at_shifted_radii():
    t = spiral(1.0, 0.3)
    k = np.arange(1, 6)
    p = t.position(k + 0.3)
    assert np.allclose(p[:, 1], 0, atol=1e-12)
    assert np.allclose(p[:, 0], k + 0.3)


def test_circle_points_on_rings():
    t = make_trajectory("circles", eta=0.7, k_max=5)
    q = arc_quadrature(t, math.inf, max_step=0.2)
    r = np.hypot(q.points[:, 0], q.points[:, 1])
    assert np.allclose(r, 0.7 * q.ring, atol=1e-12)


@pytest.mark.parametrize(
    "kwargs, err",
    [
        ({"kind": "spiral", "eta": 0.0}, ParameterDomainError),
        ({"kind": "spiral", "eta": -1.0}, ParameterDomainError),
        ({"kind": "spiral", "theta0": 1.0}, ParameterDomainError),
        ({"kind": "lines", "tau": 0.0}, ParameterDomainError),
        ({"kind": "lines", "direction": (1.0, 1.0)}, NormalizationError),
        ({"kind": "helix"}, ParameterDomainError),
    ],
)
def test_invalid_parameters_rejected(kwargs, err):
    kw = dict(kwargs)
    kind = kw.pop("kind")
    with pytest.raises(err):
        make_trajectory(kind, **kw)


def test_speed_and_curvature_examples():
    s, k = speed_and_curvature(spiral(1.0), 0.0)
    assert k == pytest.approx(2.0)
    s, _ = speed_and_curvature(spiral(1.0), 1.0)
    assert s == pytest.approx(math.sqrt(1 + 4 * math.pi**2))
    _, k = speed_and_curvature(make_trajectory("circles", eta=0.5), 0.3, 4)
    assert k == pytest.approx(0.5)


def test_curvature_formula_along_spiral():
    th = np.linspace(0, 5, 41)
    eta = 0.8
    want = (2 + (2 * np.pi * th) ** 2) / (eta * (1 + (2 * np.pi * th) ** 2) ** 1.5)
    assert np.allclose(spiral(eta).curvature(th), want, rtol=1e-12)


def test_negative_parameter_is_a_domain_error():
    with pytest.raises(ParameterDomainError):
        spiral().position(-0.5)


# -- quadrature ---------------------------------------------------------------


def test_unit_circle_length():
    q = arc_quadrature(make_trajectory("circles", eta=1.0, k_max=1), 2.0)
    assert q.total_weight == pytest.approx(2 * math.pi, abs=1e-8)


def test_spiral_length_against_adaptive_integration():
    q = arc_quadrature(spiral(1.0), math.inf, theta_range=(0.0, 3.0))
    ref, _ = integrate.quad(lambda t: math.sqrt(1 + (2 * math.pi * t) ** 2), 0, 3, epsabs=1e-13, limit=200)
    assert q.total_weight == pytest.approx(ref, rel=1e-10, abs=1e-8)


def test_circles_quadrature_exact_inside_window():
    eta = 0.6
    q = arc_quadrature(make_trajectory("circles", eta=eta), 5.0)
    # rings with eta*k < 5 lie fully inside the square; count their weight only
    inner = q.ring * eta < 5.0
    kmax = int(np.max(q.ring[inner]))
    want = 2 * math.pi * eta * sum(range(1, kmax + 1))
    assert np.sum(q.weights[inner]) == pytest.approx(want, rel=1e-8)


@pytest.mark.parametrize("kind", ["spiral", "circles"])
def test_quadrature_step_halving(kind):
    t = make_trajectory(kind, eta=0.85)
    a = arc_quadrature(t, 6.0, max_step=0.4).total_weight
    b = arc_quadrature(t, 6.0, max_step=0.2).total_weight
    assert abs(a - b) <= 1e-8 * a


def test_clipped_nodes_inside_window_and_nonnegative():
    q = arc_quadrature(spiral(0.7, 0.2), 3.0, max_step=0.3)
    assert np.all(q.weights >= 0)
    assert np.all(np.abs(q.points) < 3.0 + 1e-12)
    # consecutive nodes of one panel are within a step of arc
    d = np.hypot(*np.diff(q.points, axis=0).T)
    assert np.median(d) <= 0.3


def test_empty_window_is_empty_set():
    q = arc_quadrature(make_trajectory("circles", eta=2.0), 0.5)
    assert len(q) == 0 and q.total_weight == 0.0


def test_regularity_lower_bound():
    rng = np.random.default_rng(3)
    t = spiral(0.9)
    q = arc_quadrature(t, 12.0, max_step=0.05)
    idx = rng.choice(len(q), 100, replace=False)
    for r in (0.1, 0.2, 0.5):
        for i in idx[:30]:
            assert ball_measure(q, q.points[i], r) >= r * r / 4


def test_quadrature_csv_roundtrip(tmp_path):
    q = arc_quadrature(spiral(1.0), 2.0, max_step=0.3)
    p = tmp_path / "q.csv"
    write_quadrature_csv(q, p)
    head = p.read_text(encoding="utf-8").splitlines()[0]
    assert head == "theta,x,y,weight"
    back = read_quadrature_csv(p)
    assert np.array_equal(back.points, q.points)
    assert np.array_equal(back.weights, q.weights)


# -- gaps and separated sets -------------------------------------------------


def test_gap_of_lines():
    t = make_trajectory("lines", direction=(0.0, 1.0), tau=1.0)
    g = gap_estimate(t, 20.0, 0.05)
    assert g.gap == pytest.approx(0.5, abs=0.05)


def test_gap_of_circles():
    g = gap_estimate(make_trajectory("circles", eta=0.8), 40.0, 0.008)
    assert g.gap == pytest.approx(0.4, abs=0.02)


def test_gap_needs_crossings():
    with pytest.raises(InsufficientWindowError):
        gap_estimate(spiral(1.0), 1.0)


def _line_nodes(n, step):
    x = np.arange(n) * step
    pts = np.stack([x, np.zeros(n)], axis=1)
    return QuadratureSet(pts, np.full(n, step), math.inf, {"kind": "test"}, x, np.zeros(n, dtype=np.int64))


def test_separated_on_line_lattice():
    s = extract_separated(_line_nodes(41, 0.1), 0.35)
    assert np.allclose(s.points[:, 0], np.arange(0, 4.01, 0.4))
    assert s.separation == pytest.approx(0.4)


def test_single_node_returns_itself():
    s = extract_separated(_line_nodes(1, 0.1), 0.5)
    assert len(s.points) == 1 and np.array_equal(s.points[0], [0.0, 0.0])


def test_separated_spiral_gap():
    q = arc_quadrature(spiral(1.0), 20.0, max_step=0.05)
    s = extract_separated(q, 0.2, probe_mesh=0.02)
    assert s.separation >= 0.2
    assert s.gap <= 0.5 + 0.2 + 0.05


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-3, 3), st.floats(-3, 3)), min_size=2, max_size=200),
    st.floats(0.05, 1.5),
)
def test_separation_brute_force(pts, r):
    P = np.array(pts, float)
    n = len(P)
    q = QuadratureSet(P, np.ones(n), 6.0, {}, np.arange(n, dtype=float), np.zeros(n, dtype=np.int64))
    s = extract_separated(q, r, probe_mesh=0.5)
    D = np.hypot(*(s.points[:, None, :] - s.points[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(D, np.inf)
    assert D.min() >= r
    if len(s.points) > 1:
        assert s.separation == pytest.approx(D.min())
    # maximality: every dropped point is within r of a kept one
    Dall = np.hypot(*(P[:, None, :] - s.points[None, :, :]).transpose(2, 0, 1))
    assert np.all(Dall.min(axis=1) < r + 1e-12)


def test_min_pairwise_distance_matches_brute_force():
    rng = np.random.default_rng(0)
    P = rng.uniform(size=(300, 2))
    D = np.hypot(*(P[:, None] - P[None]).transpose(2, 0, 1))
    np.fill_diagonal(D, np.inf)
    assert min_pairwise_distance(P) == pytest.approx(D.min())


# -- weak limits -------------------------------------------------------------


def test_lines_on_lattice_have_zero_deviation():
    t = make_trajectory("lines", direction=(0.0, 1.0), tau=1.0, eta=1.0)
    assert weak_limit_deviation(t, 17, 3.0) == 0.0


def test_crossing_rate_bound():
    R = 2.0
    k, dev = crossing_deviations(spiral(1.0), 400, R)
    assert len(k) >= 3
    assert np.all(dev <= 33 * R * R / k)


def test_deviation_decreases_with_translate():
    d = [weak_limit_deviation(spiral(1.0), n, 2.0) for n in (100, 200, 400)]
    assert d[0] >= d[1] >= d[2]


def test_rate_translate_index():
    assert rate_translate_index(2.0, 0.01) == 27200


def test_translated_nodes_sit_near_lattice():
    t = spiral(0.9, 0.25)
    q = translated_quadrature(t, 5000, 2.0, max_step=0.1)
    off = q.extras["lattice_offset"]
    worst = weak_limit_deviation(t, 5000, 2.0)
    # nodes are interior Gauss points, the deviation is taken up to the clip
    assert 0.99 * worst <= np.max(np.abs(off)) <= worst * (1 + 1e-9)


def test_translated_circles_rate():
    t = make_trajectory("circles", eta=0.9)
    assert weak_limit_deviation(t, 4000, 2.0) < 33 * 4 / 4000


# -- spiraling classification ------------------------------------------------


def test_offset_limit_on_unrotated_spiral():
    r = classify_spiraling(spiral(1.0), 0.3, 0.05, range(10, 40))
    assert r.rho0 == pytest.approx(0.3, abs=1e-6)


def test_offset_limit_adds_rotation():
    # radius at polar angle psi is eta*(psi + theta0) for the rotated curve
    r = classify_spiraling(spiral(1.0, 0.3), 0.3, 0.05, range(10, 40))
    assert r.rho0 == pytest.approx(0.6, abs=1e-6)


def test_circles_offset_and_separation():
    r = classify_spiraling(make_trajectory("circles", eta=0.5), 0.0, 0.05, range(10, 40))
    assert abs(r.rho0) < 1e-9
    assert r.tau == pytest.approx(0.5, abs=1e-9)
    assert np.linalg.norm(r.velocity) == pytest.approx(1.0, abs=1e-9)


def test_spiral_report_consistency():
    r = classify_spiraling(spiral(0.8), 0.1, 0.05, range(10, 50))
    assert r.eta_fit == pytest.approx(0.8, rel=1e-9)
    assert r.tau == pytest.approx(0.8, rel=1e-6)
    assert r.monotone_from == 10
    tails = [classify_spiraling(spiral(0.8), 0.1, 0.05, range(a, a + 10)).curvature_tail for a in (10, 20, 40)]
    assert tails[0] >= tails[1] >= tails[2]


def test_missing_cone_pieces():
    with pytest.raises(ClassificationWindowError) as exc:
        classify_spiraling(spiral(1.0, theta_max=20.0), 0.0, 0.05, range(10, 30))
    assert 25 in exc.value.details["missing"]
