import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from fundgap.domain import (
    AmbiguousGradientError,
    Disk,
    Ellipse,
    Interval,
    Polygon,
    Rectangle,
    SamplingError,
    domain_from_spec,
)

HEXAGON = np.array([[np.cos(t), 0.8 * np.sin(t)] for t in np.linspace(0, 2 * np.pi, 7)[:-1] + 0.2])

DOMAINS = [Interval(1.0), Disk(1.0), Rectangle(1.0, 0.6), Ellipse(2.0, 1.0), Polygon(HEXAGON)]


def _ids(d):
    return d.kind


# -- documented examples --------------------------------------------------------

def test_contains_examples():
    assert Disk(1.0).contains([0.0, 0.0])
    assert not Disk(1.0).contains([1.0, 0.0])
    assert Rectangle(1, 1).contains([0.5, 0.5])
    assert list(Disk(1.0).contains([[0, 0], [2, 0], [0.5, 0.5]])) == [True, False, True]


def test_boundary_distance_examples():
    assert Disk(1.0).boundary_distance([0.5, 0.0]) == pytest.approx(0.5)
    assert Rectangle(1, 1).boundary_distance([0.2, 0.5]) == pytest.approx(0.2)
    assert Ellipse(2, 1).boundary_distance([0.0, 0.0]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        Disk(1.0).boundary_distance([1.5, 0.0])


def test_gradient_examples():
    np.testing.assert_allclose(Disk(1.0).boundary_distance_gradient([0.5, 0.0]), [-1.0, 0.0])
    np.testing.assert_allclose(Rectangle(1, 1).boundary_distance_gradient([0.2, 0.5]), [1.0, 0.0])
    with pytest.raises(AmbiguousGradientError):
        Disk(1.0).boundary_distance_gradient([0.0, 0.0])
    with pytest.raises(AmbiguousGradientError):
        Rectangle(1, 1).boundary_distance_gradient([0.5, 0.5])


@pytest.mark.parametrize("domain, expected", [
    (Disk(1.0), 2.0),
    (Rectangle(1, 1), np.sqrt(2)),
    (Ellipse(2, 1), 4.0),
    (Interval(0.7), 0.7),
])
def test_diameter(domain, expected):
    assert domain.diameter == pytest.approx(expected, rel=1e-15)


def test_sample_interior_examples():
    pts = Disk(1.0).sample_interior(0.0, 100, rng=1)
    assert pts.shape == (100, 2)
    assert np.all(np.hypot(pts[:, 0], pts[:, 1]) < 1)
    sq = Rectangle(1, 1).sample_interior(0.4, 10, rng=2)
    assert len(sq) == 10
    assert np.all((sq >= 0.4) & (sq <= 0.6))
    with pytest.raises(SamplingError):
        Disk(1.0).sample_interior(1.5, 10, rng=3)
    with pytest.raises(ValueError):
        Disk(1.0).sample_interior(-0.1, 10)


def test_sample_interior_reproducible():
    a = Ellipse(2, 1).sample_interior(0.1, 50, rng=42)
    b = Ellipse(2, 1).sample_interior(0.1, 50, rng=42)
    np.testing.assert_array_equal(a, b)


# -- construction -----------------------------------------------------------

@pytest.mark.parametrize("bad", [
    lambda: Interval(0.0),
    lambda: Disk(-1.0),
    lambda: Rectangle(1.0, 0.0),
    lambda: Ellipse(1.0, 2.0),
    lambda: Polygon([[0, 0], [1, 0]]),
    lambda: Polygon([[0, 0], [0, 1], [1, 0]]),  # clockwise
    lambda: Polygon([[0, 0], [1, 0], [2, 0], [1, 1]]),  # collinear
])
def test_invalid_domains(bad):
    with pytest.raises(ValueError):
        bad()


@pytest.mark.parametrize("domain", DOMAINS, ids=_ids)
def test_spec_round_trip(domain):
    again = domain_from_spec(domain.to_spec())
    assert again.kind == domain.kind
    assert again.diameter == pytest.approx(domain.diameter)
    pts = domain.sample_interior(0.0, 20, rng=0)
    np.testing.assert_allclose(again.boundary_distance(pts), domain.boundary_distance(pts))


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown domain kind"):
        domain_from_spec({"kind": "torus"})


def test_polygon_inradius_square():
    sq = Polygon([[0, 0], [2, 0], [2, 2], [0, 2]])
    assert sq.inradius == pytest.approx(1.0)


# -- ellipse projection against a brute-force oracle ------------------------

def _ellipse_distance_oracle(a, b, p):
    f = lambda t: np.hypot(a * np.cos(t) - p[0], b * np.sin(t) - p[1])
    ts = np.linspace(0, 2 * np.pi, 4001)
    t0 = ts[np.argmin(f(ts))]
    res = minimize_scalar(f, bounds=(t0 - 0.01, t0 + 0.01), method="bounded",
                          options={"xatol": 1e-13})
    return res.fun


@settings(max_examples=60, deadline=None)
@given(st.floats(1.0, 4.0), st.floats(0.2, 1.0), st.floats(0.0, 0.999), st.floats(0, 2 * np.pi))
def test_ellipse_distance_matches_brute_force(a, ratio, s, theta):
    b = a * ratio
    p = s * np.array([a * np.cos(theta), b * np.sin(theta)])
    e = Ellipse(a, b)
    assert e.boundary_distance(p) == pytest.approx(_ellipse_distance_oracle(a, b, p), abs=1e-9)


@pytest.mark.parametrize("p", [[5e-324, 5e-324], [0.0, -5e-324], [1e-310, 2e-320]])
def test_ellipse_subnormal_points(p):
    # the centre lies on the minor-axis chord, so its distance is b
    assert Ellipse(1.0, 0.75).boundary_distance(p) == pytest.approx(0.75, abs=1e-12)


def test_ellipse_closed_form_cases():
    e = Ellipse(2.0, 1.0)
    # on the major axis inside the evolute the foot point leaves the axis
    x0 = 0.5
    xc = 4 * x0 / 3
    expected = np.hypot(xc - x0, np.sqrt(1 - (xc / 2) ** 2))
    assert e.boundary_distance([x0, 0.0]) == pytest.approx(expected, rel=1e-13)
    assert e.boundary_distance([1.9, 0.0]) == pytest.approx(0.1)
    with pytest.raises(AmbiguousGradientError):
        e.boundary_distance_gradient([x0, 0.0])


# -- properties --------------------------------------------------------------

@pytest.mark.parametrize("domain", DOMAINS, ids=_ids)
def test_gradient_is_unit_and_unit_slope(domain):
    pts = domain.sample_interior(0.05 * domain.inradius, 200, rng=5)
    rho, normal = domain.distance_and_normal(pts)
    # stay off the medial axis: the two closest sides must differ noticeably for polygons
    step = 1e-4 * domain.inradius
    safe = rho < 0.5 * domain.inradius
    pts, rho, normal = pts[safe], rho[safe], normal[safe]
    np.testing.assert_allclose(np.linalg.norm(normal, axis=1), 1.0, atol=1e-12)
    moved = domain.boundary_distance(pts + step * normal)
    np.testing.assert_allclose(moved, rho + step, atol=50 * step**2 / domain.inradius + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12), st.integers(0, 2**32 - 1))
def test_polygon_diameter_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    if np.min(np.diff(np.r_[angles, angles[0] + 2 * np.pi])) < 1e-3:
        return
    radii = rng.uniform(0.5, 2.0)
    v = radii * np.stack([np.cos(angles), rng.uniform(0.3, 1.0) * np.sin(angles)], axis=1)
    poly = Polygon(v)
    brute = max(np.linalg.norm(p - q) for p, q in itertools.combinations(v, 2))
    assert poly.diameter == pytest.approx(brute, rel=1e-14)


@pytest.mark.parametrize("domain", DOMAINS[1:], ids=_ids)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0.0, 1.0))
def test_convexity_of_samples(domain, seed, s):
    x, y = domain.sample_interior(0.0, 2, rng=seed)
    assert domain.contains((1 - s) * x + s * y)


@pytest.mark.parametrize("domain", DOMAINS[1:], ids=_ids)
def test_distance_lower_bound(domain):
    pts = domain.sample_interior(0.0, 500, rng=9)
    assert np.all(domain.distance_lower_bound(pts) <= domain.boundary_distance(pts) + 1e-12)
