import numpy as np
import pytest

from sdaeman.diffusion import (
    ITO,
    STRATONOVICH,
    CustomGenerator,
    Diffusor,
    apply_diffusor,
    covariant_derivative,
    generator_correction,
    get_generator,
    hat,
    hat_identity,
    hat_pair,
    ito_generator,
    pushforward_diffusor,
    register_generator,
    stratonovich_generator,
)
from sdaeman.errors import GeneratorError, UnsupportedMetricError
from sdaeman.fields import Constant, ProjectedConstant
from sdaeman.geometry import Euclidean, ImplicitManifold, Sphere, identity_chart

S2 = Sphere(2)
R2 = Euclidean(2)
r2 = np.sqrt(2.0)
X45 = np.array([1 / r2, 0.0, 1 / r2])
K1 = ProjectedConstant(S2, [0.0, 0.0, 1.0], name="K1")
K2 = ProjectedConstant(S2, [0.0, 1.0, 0.0], name="K2")
x3 = lambda y: y[2]


def _flow(field, x, t, n=40):
    """RK4 flow of a sphere vector field, used as an independent oracle."""
    h = t / n
    f = lambda y: field(y, None)
    for _ in range(n):
        k1 = f(x)
        k2 = f(S2.retract(x + 0.5 * h * k1))
        k3 = f(S2.retract(x + 0.5 * h * k2))
        k4 = f(S2.retract(x + h * k3))
        x = S2.retract(x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    return x


def test_apply_diffusor_flat_examples():
    c = identity_chart(2)
    L = Diffusor(np.array([3.0, 0.0]), c, [1.0, 0.0], np.zeros((2, 2)))
    assert apply_diffusor(L, lambda y: y[0] ** 2) == pytest.approx(6.0, rel=1e-8)
    L = Diffusor(np.array([0.7, -0.2]), c, [0.0, 0.0], np.eye(2))
    assert apply_diffusor(L, lambda y: y[0] ** 2 + y[1] ** 2) == pytest.approx(4.0, rel=1e-6)


def test_stratonovich_generator_on_sphere_against_flow_oracle():
    L = stratonovich_generator(S2, K1, X45)
    value = apply_diffusor(L, x3)
    h = 1e-3
    oracle = (x3(_flow(K1, X45, h)) - 2 * x3(X45) + x3(_flow(K1, X45, -h))) / h ** 2
    assert value == pytest.approx(-1 / r2, abs=1e-5)
    assert value == pytest.approx(oracle, abs=1e-5)


def test_hat_examples(rng):
    c = identity_chart(2)
    assert np.array_equal(hat(Diffusor(np.zeros(2), c, [1.0, 2.0], np.zeros((2, 2)))), np.zeros((2, 2)))
    L = Diffusor(np.zeros(2), c, [0.0, 0.0], np.eye(2))
    assert hat_pair(L, lambda y: y[0], lambda y: y[1]) == pytest.approx(0.0, abs=1e-10)
    for _ in range(20):
        a = rng.standard_normal(2)
        b = rng.standard_normal((2, 2))
        L = Diffusor(rng.standard_normal(2), c, a, b @ b.T)
        cf, cg = rng.standard_normal(6), rng.standard_normal(6)
        poly = lambda y, k: k[0] + k[1] * y[0] + k[2] * y[1] + k[3] * y[0] ** 2 + k[4] * y[0] * y[1] + k[5] * y[1] ** 2
        f = lambda y: poly(y, cf)
        g = lambda y: poly(y, cg)
        assert hat_pair(L, f, g) == pytest.approx(hat_identity(L, f, g), rel=1e-6, abs=1e-6)


def test_diffusor_rejects_asymmetric_second_order():
    with pytest.raises(ValueError):
        Diffusor(np.zeros(2), identity_chart(2), [0, 0], [[1.0, 1.0], [0.0, 1.0]])


def test_pushforward_examples():
    c = identity_chart(2)
    L = Diffusor(np.array([2.0, 3.0]), c, [1.0, 1.0], np.eye(2))
    same = pushforward_diffusor(lambda y: y, L)
    assert np.allclose(same.a, L.a, atol=1e-6) and np.allclose(same.b, L.b, atol=1e-8)
    A = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 3.0]])
    lin = pushforward_diffusor(lambda y: A @ y, L)
    assert np.allclose(lin.a, A @ L.a, atol=1e-6) and np.allclose(lin.b, A @ L.b @ A.T, atol=1e-7)
    prod = pushforward_diffusor(lambda y: np.array([y[0] * y[1]]), L)
    assert prod.a[0] == pytest.approx(5.0, abs=1e-6)
    assert prod.b[0, 0] == pytest.approx(13.0, abs=1e-7)


def test_pushforward_symbol_is_schwartz_morphism(rng):
    c = identity_chart(2)
    for _ in range(10):
        b = rng.standard_normal((2, 2))
        L = Diffusor(rng.standard_normal(2), c, rng.standard_normal(2), b @ b.T)
        phi = lambda y: np.array([np.sin(y[0]) * y[1], y[0] ** 2 + y[1]])
        out = pushforward_diffusor(phi, L)
        J = np.array([[np.cos(L.base[0]) * L.base[1], np.sin(L.base[0])], [2 * L.base[0], 1.0]])
        assert np.allclose(out.b, J @ L.b @ J.T, atol=1e-8)


def test_covariant_derivative_examples():
    assert np.allclose(covariant_derivative(S2, K2, np.array([1.0, 0, 0])).vec, 0.0, atol=1e-15)
    v = covariant_derivative(S2, K1, X45).vec
    assert np.allclose(v, [1 / (2 * r2), 0, -1 / (2 * r2)], atol=1e-14)
    flat = Constant(R2, [0.4, -1.0])
    assert np.allclose(covariant_derivative(R2, flat, np.array([1.0, 2.0])).vec, 0.0)


def test_covariant_derivative_matches_finite_differences():
    eps = 1e-6
    ds = (K1(X45 + eps * K1(X45)) - K1(X45 - eps * K1(X45))) / (2 * eps)
    assert np.allclose(covariant_derivative(S2, K1, X45).vec, S2.project(X45, ds), atol=1e-9)


def test_ito_generator_example():
    L = ito_generator(S2, K1, X45)
    assert apply_diffusor(L, x3) == pytest.approx(-1 / (2 * r2), abs=1e-5)
    flat = Constant(R2, [0.4, -1.0])
    x = np.array([0.3, 0.1])
    f = lambda y: np.sin(y[0]) * y[1] ** 2
    assert apply_diffusor(ito_generator(R2, flat, x), f) == pytest.approx(
        apply_diffusor(stratonovich_generator(R2, flat, x), f), abs=1e-9)


def test_ito_generator_requires_connection():
    cyl = ImplicitManifold("cyl", 2, 3, lambda x: x[..., :1] ** 2 + x[..., 1:2] ** 2 - 1.0)
    cyl.has_connection = False
    field = ProjectedConstant(cyl, [0.0, 0.0, 1.0])
    with pytest.raises(UnsupportedMetricError):
        ito_generator(cyl, field, np.array([1.0, 0.0, 0.0]))


def test_generator_correction_examples():
    assert np.allclose(generator_correction(STRATONOVICH, S2, K1, X45).vec, 0.0, atol=1e-9)
    v = generator_correction(ITO, S2, K1, X45).vec
    assert np.allclose(v, [-1 / (2 * r2), 0, 1 / (2 * r2)], atol=1e-6)
    flat = Constant(R2, [0.4, -1.0])
    assert np.allclose(generator_correction(ITO, R2, flat, np.array([1.0, 2.0])).vec, 0.0, atol=1e-9)


def test_extrinsic_and_chart_corrections_agree(rng):
    x = S2.random_points(rng, 20)
    x = x[np.abs(x[:, 2]) < 0.95]
    for xx in x:
        chart_route = generator_correction(ITO, S2, K1, xx).vec
        extrinsic = ITO.strat_correction(S2, K1, xx, np.zeros(0))
        assert np.allclose(chart_route, extrinsic, atol=1e-6)


def _shift(m, x, y):
    w = np.array([0.3, -0.2, 0.5])
    return (y @ w)[..., None] * y if y.ndim > 1 else (y @ w) * y


def test_custom_generator_self_test():
    gen = CustomGenerator.from_shift("shifted", _shift, manifolds=(S2, Euclidean(3)))
    register_generator(gen)
    assert get_generator("shifted") is gen
    bad = lambda m, x, y: (m.sff(x, y, y), 2.0 * y[..., :, None] * y[..., None, :])
    with pytest.raises(GeneratorError):
        CustomGenerator("bad-symbol", bad, manifolds=(S2,))
    off = lambda m, x, y: (m.sff(x, y, y) + x, y[..., :, None] * y[..., None, :])
    with pytest.raises(GeneratorError):
        CustomGenerator("bad-first-order", off, manifolds=(S2,))


def test_zero_field_has_zero_symbol():
    zero = Constant(S2, [0.0, 0.0, 0.0])
    L = ITO.diffusor(S2, zero, X45)
    assert np.array_equal(hat(L), np.zeros((2, 2)))
