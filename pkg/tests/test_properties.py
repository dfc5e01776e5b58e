import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sdaeman.diffusion import ITO, STRATONOVICH
from sdaeman.examples import get_problem
from sdaeman.fields import VectorField
from sdaeman.geometry import Euclidean, Sphere, stereographic_chart
from sdaeman.problem import ReducedFields
from sdaeman.solver import SolverConfig, run_paths, wiener_path

S2 = Sphere(2)
R3 = Euclidean(3)
coord = st.floats(-3.0, 3.0, allow_nan=False)
vec3 = st.tuples(coord, coord, coord).map(np.array)


def on_sphere(v):
    n = np.linalg.norm(v)
    assume(n > 1e-3)
    return v / n


@given(vec3, vec3)
def test_projector_is_idempotent_and_orthogonal(p, v):
    x = on_sphere(p)
    pv = S2.project(x, v)
    assert np.allclose(S2.project(x, pv), pv, atol=1e-12)
    assert abs(pv @ x) <= 1e-12 * max(1.0, np.linalg.norm(v))
    assert np.allclose(S2.normal_project(x, v) + pv, v, atol=1e-12)


@given(vec3)
def test_retraction_is_a_projection(p):
    assume(np.linalg.norm(p) > 1e-3)
    x = S2.retract(p)
    assert abs(np.linalg.norm(x) - 1.0) <= 1e-14
    assert np.allclose(S2.retract(x), x, atol=1e-15)


@given(vec3, vec3, vec3)
def test_distance_triangle_inequality(a, b, c):
    x, y, z = on_sphere(a), on_sphere(b), on_sphere(c)
    assert S2.distance(x, z) <= S2.distance(x, y) + S2.distance(y, z) + 1e-12
    assert abs(S2.distance(x, y) - S2.distance(y, x)) <= 1e-14


@given(st.floats(-4.0, 4.0), st.floats(-4.0, 4.0))
def test_chart_roundtrip_and_inverse_jacobian(a, b):
    chart = stereographic_chart(2, True)
    xi = np.array([a, b])
    x = chart.from_coords(xi)
    assert np.allclose(chart.to_coords(x), xi, atol=1e-12 * (1 + xi @ xi))
    prod = chart.to_jacobian(x) @ chart.from_jacobian(xi)
    assert np.allclose(prod, np.eye(2), atol=1e-10)


@given(vec3, vec3, st.sampled_from(["ito", "stratonovich"]))
def test_generator_symbol_is_outer_product(p, w, name):
    # G(s)[f g] - f G(s)[g] - g G(s)[f] = 2 (s.df)(s.dg) for linear f, g
    gen = {"ito": ITO, "stratonovich": STRATONOVICH}[name]
    x = on_sphere(p)
    field = VectorField(S2, lambda y, u: S2.project(y, np.broadcast_to(w, np.shape(y))), depends_on_u=False)
    s = field(x, np.zeros(0))
    df, dg = np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    zero = np.zeros((3, 3))
    hess_fg = np.outer(df, dg) + np.outer(dg, df)
    f, g = x @ df, x @ dg
    apply = lambda grad, hess: gen.apply(S2, field, x, np.zeros(0), grad, hess)
    lhs = apply(g * df + f * dg, hess_fg) - f * apply(dg, zero) - g * apply(df, zero)
    assert abs(lhs - 2.0 * (s @ df) * (s @ dg)) <= 1e-10 * max(1.0, s @ s)


@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_reduced_fields_stay_in_constraint_kernel(x0, u0):
    p = get_problem("euclidean_index1")
    red = ReducedFields(p)
    x, u = np.array([x0]), np.array([u0])
    fx, fu = red.drift(x, u)
    sx, su = red.diffusions(x, u)
    c = p.constraint
    assert abs((c.jac_x(x, u) @ fx + c.jac_u(x, u) @ fu)[0]) <= 1e-12
    for a, b in zip(sx, su):
        assert abs((c.jac_x(x, u) @ a + c.jac_u(x, u) @ b)[0]) <= 1e-12


@settings(max_examples=10)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 3))
def test_paths_do_not_depend_on_batch(seed, k):
    p = get_problem("sphere_example")
    c = SolverConfig(algorithm="closed-form", t_final=0.02, seed=seed)
    paths = [wiener_path(seed, i, 2, c.n_steps, c.dt) for i in range(4)]
    batch = run_paths(p, c, paths)
    single = run_paths(p, c, [paths[k]])[0]
    assert np.array_equal(batch[k].X, single.X)


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 1000))
def test_wiener_increment_moments(seed, index):
    w = wiener_path(seed, index, 2, 4000, 0.01)
    z = w.increments / 0.1
    assert abs(z.mean()) < 0.1
    assert abs(z.var() - 1.0) < 0.1
