"""Property-based checks of the invariants with randomly drawn inputs."""

import numpy as np
from hypothesis import HealthCheck, given, settings, strategies as st

from liao.dichotomy import DichotomyProblem, bounded_solution, epsilon_bound
from liao.field import VectorFieldSpec, integrate_flow
from liao.frame import orthonormal_complement, positive_qr, random_block_rotation
from liao.reduced import triangular_log
from liao.report import dumps
from liao.standard import bump

XYZ = ("x", "y", "z")
coef = st.floats(-2.0, 2.0, allow_nan=False).map(lambda v: round(v, 3))
power = st.integers(0, 2)
var = st.sampled_from(XYZ)


@st.composite
def terms(draw):
    c = draw(coef)
    mono = "*".join(f"{v}^{draw(power)}" for v in XYZ)
    if draw(st.booleans()):
        fn = draw(st.sampled_from(["sin", "cos"]))
        a, b = draw(coef), draw(coef)
        return f"{c}*{mono}*{fn}({a}*{draw(var)} + {b})"
    return f"{c}*{mono}"


@st.composite
def fields(draw):
    comps = [" + ".join(draw(st.lists(terms(), min_size=1, max_size=3))).replace("+ -", "- ")
             for _ in range(3)]
    return VectorFieldSpec.from_strings(comps, XYZ)


points = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=3, max_size=3).map(np.array)
slow = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@settings(max_examples=100, deadline=None)
@given(fields(), points)
def test_jacobian_matches_central_differences(spec, w):
    _, J = spec.evaluate(w)
    step = 1e-5
    fd = np.column_stack([(spec(w + e) - spec(w - e)) / (2 * step) for e in np.eye(3) * step])
    assert np.linalg.norm(J - fd) <= 1e-6 * (1 + np.linalg.norm(J))


@settings(max_examples=50, deadline=None)
@given(fields())
def test_component_strings_round_trip(spec):
    again = VectorFieldSpec.from_strings(spec.component_strings(), XYZ)
    W = np.random.default_rng(0).uniform(-1, 1, (8, 3))
    np.testing.assert_allclose(again(W), spec(W), rtol=1e-12, atol=1e-12)


def _damped(spec):
    # keep orbits bounded so the group law is tested on a well-posed span
    return spec + VectorFieldSpec.from_strings(["-3*x", "-3*y", "-3*z"], XYZ)


@slow
@given(fields(), st.floats(0.1, 0.6), st.floats(0.1, 0.6))
def test_flow_group_law_and_chain_rule(spec, s, t):
    spec = _damped(spec)
    tol = 1e-10
    w0 = np.array([0.1, -0.2, 0.3])
    a = integrate_flow(spec, w0, (0.0, s + t), tol=tol, with_variational=True, t_eval=[s, s + t])
    b = integrate_flow(spec, a.state_at(s), (0.0, t), tol=tol, with_variational=True,
                       t_eval=[t])
    assert np.linalg.norm(a.state_at(s + t) - b.state_at(t)) <= 50 * tol
    chain = b.fundamental_at(t) @ a.fundamental_at(s)
    assert np.linalg.norm(a.fundamental_at(s + t) - chain) <= 100 * tol * max(
        1.0, np.linalg.norm(chain))


@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=6).filter(
    lambda v: np.linalg.norm(v) > 1e-3))
def test_complement_is_orthonormal_and_transversal(v):
    g = orthonormal_complement(v).columns
    assert np.max(np.abs(g.T @ g - np.eye(len(v) - 1))) <= 1e-12
    assert np.max(np.abs(np.asarray(v) @ g)) <= 1e-12 * np.linalg.norm(v)


@given(st.integers(1, 5), st.data())
def test_block_rotation_is_orthogonal_and_block_diagonal(p, data):
    pm = data.draw(st.integers(0, p))
    B = random_block_rotation(p, pm, np.random.default_rng(data.draw(st.integers(0, 99))))
    np.testing.assert_allclose(B.T @ B, np.eye(p), atol=1e-12)
    assert not B[:pm, pm:].any() and not B[pm:, :pm].any()


@given(st.integers(0, 10_000))
def test_positive_qr_reconstructs(seed):
    P = np.random.default_rng(seed).normal(size=(4, 3))
    Q, R = positive_qr(P)
    np.testing.assert_allclose(Q @ R, P, atol=1e-12)
    assert np.all(np.diag(R) > 0) and not np.tril(R, -1).any()


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_triangular_log_inverts_exponential(seed, p):
    from scipy.linalg import expm
    rng = np.random.default_rng(seed)
    L = np.triu(rng.uniform(-0.05, 0.05, (p, p)))
    np.testing.assert_allclose(triangular_log(expm(L)[None])[0], L, atol=1e-13)


@given(st.floats(0, 10), st.floats(0.01, 10), st.floats(0, 1), st.integers(1, 6))
def test_epsilon_bound_is_linear_in_forcing(eta_A, xi_A, eta_f, p):
    e1, t1 = epsilon_bound(eta_A, xi_A, eta_f, p)
    e2, t2 = epsilon_bound(eta_A, xi_A, 2 * eta_f, p)
    assert abs(e2 - 2 * e1) <= 1e-12 * max(1.0, e2) and t1 == t2


@given(st.floats(0, 3))
def test_bump_bounds(r):
    b = float(bump(r))
    assert 0.0 <= b <= 1.0
    assert b == 1.0 if r <= 0.5 else True
    assert b == 0.0 if r >= 1.0 else True


def _problem(a, b):
    return DichotomyProblem(
        p=2, p_minus=1, A=lambda t: np.broadcast_to(np.diag([-1.0, 1.0]), (len(t), 2, 2)),
        f=lambda t, z: np.column_stack([a * np.cos(t), b * np.sin(2 * t)]),
        eta_A=2.0, xi_A=2.0, eta_f=abs(a) + abs(b), horizon=20.0, state_independent=True)


@slow
@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_bounded_solution_is_additive(a1, b1, a2, b2):
    z = bounded_solution(_problem(a1, b1)).z + bounded_solution(_problem(a2, b2)).z
    assert np.max(np.abs(bounded_solution(_problem(a1 + a2, b1 + b2)).z - z)) <= 1e-10


@slow
@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
def test_bounded_solution_respects_green_bound(a, b):
    prob = _problem(a, b)
    assert bounded_solution(prob).sup_norm <= prob.eta_f * prob.green_norm + 1e-15


@given(st.recursive(st.none() | st.booleans() | st.floats(allow_nan=True) | st.integers()
                    | st.text(max_size=5),
                    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=3), c,
                                                                        max_size=3),
                    max_leaves=10))
def test_json_writer_is_deterministic_and_parseable(obj):
    import json
    text = dumps(obj)
    assert text == dumps(obj)
    json.loads(text)
