import numpy as np
import pytest

from sdaeman.errors import (
    ChartDomainError,
    DegenerateRetractionError,
    InvalidPointError,
    UnsupportedMetricError,
)
from sdaeman.geometry import (
    Euclidean,
    ImplicitManifold,
    ManifoldPoint,
    Sphere,
    TangentVector,
    chart_roundtrip,
    geodesic_distance,
    get_manifold,
    project_tangent,
    retract,
    riemannian_gradient,
    stereographic_chart,
)

S2 = Sphere(2)
R = Euclidean(1)
r2 = np.sqrt(2.0)


@pytest.mark.parametrize("x, v, expected", [
    ((1, 0, 0), (1, 1, 0), (0, 1, 0)),
    ((1, 0, 0), (0, 0, 1), (0, 0, 1)),
    ((1 / r2, 0, 1 / r2), (0, 0, 1), (-0.5, 0, 0.5)),
])
def test_project_tangent_examples(x, v, expected):
    t = project_tangent(S2, np.array(x), np.array(v, dtype=float))
    assert np.allclose(t.vec, expected, atol=1e-15)


def test_projection_matches_normal_basis_oracle():
    # oracle: remove the component along the numerically computed normal
    x = np.array([1 / r2, 0, 1 / r2])
    eps = 1e-6
    normal = np.array([(S2.residual(x + eps * e)[0] - S2.residual(x - eps * e)[0]) / (2 * eps)
                       for e in np.eye(3)])
    normal /= np.linalg.norm(normal)
    v = np.array([0.0, 0.0, 1.0])
    assert np.allclose(S2.project(x, v), v - (v @ normal) * normal, atol=1e-9)


def test_project_rejects_off_manifold_point():
    with pytest.raises(InvalidPointError):
        project_tangent(S2, np.array([1.1, 0, 0]), np.zeros(3))


def test_retract_examples():
    assert np.array_equal(retract(S2, np.array([2.0, 0, 0])).coords, [1, 0, 0])
    assert np.array_equal(retract(S2, np.array([1.0, 0, 0])).coords, [1, 0, 0])
    with pytest.raises(DegenerateRetractionError):
        retract(S2, np.zeros(3))


def test_retract_residual_near_manifold(rng):
    x = S2.random_points(rng, 200)
    y = x + 0.1 * rng.uniform(-1, 1, x.shape) / np.sqrt(3)
    assert np.max(np.abs(S2.residual(S2.retract(y)))) <= 1e-12


def test_geodesic_distance_examples():
    assert geodesic_distance(S2, np.array([1.0, 0, 0]), np.array([0.0, 1, 0])) == pytest.approx(np.pi / 2, abs=1e-15)
    assert geodesic_distance(S2, np.array([1.0, 0, 0]), np.array([1.0, 0, 0])) == 0.0
    assert geodesic_distance(R, np.array([0.3]), np.array([-0.2])) == pytest.approx(0.5, abs=1e-15)


def test_distance_unsupported_for_implicit_manifold_without_metric():
    cyl = ImplicitManifold("cylinder", 2, 3, lambda x: x[..., :1] ** 2 + x[..., 1:2] ** 2 - 1.0)
    x = np.array([1.0, 0.0, 0.0])
    with pytest.raises(UnsupportedMetricError):
        geodesic_distance(cyl, x, x)


def test_implicit_manifold_matches_sphere(rng):
    ball = ImplicitManifold("sphere-implicit", 2, 3, lambda x: (x * x).sum(-1, keepdims=True) - 1.0)
    x = S2.random_points(rng, 20)
    v = rng.standard_normal(x.shape)
    assert np.allclose(ball.project(x, v), S2.project(x, v), atol=1e-12)
    y = x * 1.05
    assert np.allclose(ball.retract(y), x, atol=1e-12)


def test_riemannian_gradient_examples():
    x = np.array([1.0, 0, 0])
    assert np.allclose(riemannian_gradient(S2, x, np.array([0.0, 0, 1])).vec, [0, 0, 1])
    assert np.allclose(riemannian_gradient(S2, x, np.array([1.0, 0, 0])).vec, 0.0)
    r2m = Euclidean(2)
    assert np.allclose(riemannian_gradient(r2m, np.zeros(2), np.array([3.0, 4.0])).vec, [3, 4])


def test_riemannian_gradient_represents_covector(rng):
    x = S2.random_points(rng, 1)[0]
    w = rng.standard_normal(3)
    df = lambda v: float(w @ v)
    g = riemannian_gradient(S2, x, df).vec
    for e in S2.tangent_basis(x):
        assert abs(g @ e - df(e)) <= 1e-10


def test_chart_roundtrip_examples():
    north = stereographic_chart(2, from_north=True)
    xi, back = chart_roundtrip(north, np.array([1.0, 0, 0]))
    assert np.allclose(xi, [1, 0]) and np.allclose(back, [1, 0, 0], atol=1e-15)
    xi, back = chart_roundtrip(north, np.array([0.0, -1, 0]))
    assert np.allclose(xi, [0, -1]) and np.allclose(back, [0, -1, 0], atol=1e-15)
    with pytest.raises(ChartDomainError):
        north.to_coords(np.array([0.0, 0, 1]))


def test_chart_jacobians_match_finite_differences(rng):
    for chart in (stereographic_chart(2, True), stereographic_chart(2, False)):
        x = S2.random_points(rng, 30)
        x = x[np.abs(x[:, 2]) < 0.9]
        for xx in x:
            xi = chart.to_coords(xx)
            eps = 1e-6
            fd = np.stack([(chart.from_coords(xi + eps * e) - chart.from_coords(xi - eps * e)) / (2 * eps)
                           for e in np.eye(2)], axis=-1)
            assert np.allclose(chart.from_jacobian(xi), fd, rtol=1e-6, atol=1e-8)
            # forward jacobian restricted to tangent directions inverts the backward one
            assert np.allclose(chart.to_jacobian(xx) @ chart.from_jacobian(xi), np.eye(2), atol=1e-8)


def test_manifold_point_and_tangent_vector_validation():
    p = ManifoldPoint(S2, [1.0, 0, 0])
    with pytest.raises(ValueError):
        p.coords[0] = 2.0
    TangentVector(p, [0.0, 1.0, 0.0])
    with pytest.raises(InvalidPointError):
        TangentVector(p, [1.0, 0.0, 0.0])
    with pytest.raises(InvalidPointError):
        ManifoldPoint(S2, [1.0, 1e-8, 1e-8 + 1e-3])


def test_registry_and_injectivity():
    assert get_manifold("S2").injectivity_radius() == pytest.approx(np.pi)
    assert np.isinf(get_manifold("R").injectivity_radius())


def test_sphere_second_fundamental_form(rng):
    x = S2.random_points(rng, 10)
    v = S2.project(x, rng.standard_normal(x.shape))
    w = S2.project(x, rng.standard_normal(x.shape))
    expected = -(v * w).sum(-1, keepdims=True) * x
    assert np.allclose(S2.sff(x, v, w), expected, atol=1e-14)
