import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm, logm

from liao.errors import InconsistencyError, InsufficientWindowError, PreconditionError
from liao.field import VectorFieldSpec, integrate_flow
from liao.frame import FramePath, frame_transport, orthonormal_complement, \
    stable_first_frame_path, transversal_propagator
from liao.reduced import certify_hyperbolic, dichotomy_constants, reduced_cocycle, \
    triangular_log
from liao.report import omega_csv

from conftest import field


def cocycle_for(spec, span, h=0.01, p_minus=1, w0=None):
    w0 = np.zeros(spec.dimension) if w0 is None else w0
    path = stable_first_frame_path(spec, w0, span, h)
    return reduced_cocycle(path, p_minus=p_minus, spec=spec)


def test_saddle_exponents_are_constant(saddle_cocycle):
    assert np.max(np.abs(saddle_cocycle.omega - [-1.0, 1.0])) <= 1e-10
    Rg = saddle_cocycle.generator_at_grid()
    # the stable column settles at rate exp(-2 t) during the burn-in
    assert np.max(np.abs(Rg - np.diag([-1.0, 1.0]))) <= 1e-8


def test_single_identity_step():
    path = FramePath(np.array([0.0, 0.1]), np.zeros((2, 3)), np.tile([1.0, 0, 0], (2, 1)),
                     np.tile(np.eye(3)[:, 1:], (2, 1, 1)), np.eye(2)[None], 0.1)
    cc = reduced_cocycle(path)
    assert not cc.R_samples.any()
    np.testing.assert_array_equal(cc.C_accum, np.tile(np.eye(2), (2, 1, 1)))


def test_triangular_log_matches_matrix_log():
    rng = np.random.default_rng(0)
    F = np.triu(rng.uniform(-0.1, 0.1, size=(20, 3, 3)), 1) + np.eye(3) * np.exp(
        rng.uniform(-0.2, 0.2, size=(20, 1, 3)))
    L = triangular_log(F)
    for Fk, Lk in zip(F, L):
        np.testing.assert_allclose(Lk, logm(Fk).real, atol=1e-13)
        np.testing.assert_allclose(expm(Lk), Fk, atol=1e-13)


def test_triangular_log_rejects_large_steps():
    with pytest.raises(PreconditionError):
        triangular_log(np.array([[[1.0, 5.0], [0.0, 1.0]]]))


def test_lower_triangular_factor_rejected():
    path = FramePath(np.array([0.0, 0.1]), np.zeros((2, 3)), np.tile([1.0, 0, 0], (2, 1)),
                     np.tile(np.eye(3)[:, 1:], (2, 1, 1)),
                     np.array([[[1.0, 0.0], [0.1, 1.0]]]), 0.1)
    with pytest.raises(InconsistencyError):
        reduced_cocycle(path)


# the x-axis stays invariant, while the linearization along it is time dependent
NONLINEAR = ("1", "y + 0.2*y*sin(x) + 0.1*z^2", "-z + 0.3*y*cos(x)")


def test_cocycle_composition_against_step_products():
    spec = field(*NONLINEAR)
    cc = cocycle_for(spec, (-2.0, 2.0))
    k0 = cc.index0
    rng = np.random.default_rng(2)
    for _ in range(5):
        k1 = int(rng.integers(k0, k0 + 150))
        k2 = int(rng.integers(1, 50))
        prod = np.eye(2)
        for F in cc.step_factors[k1:k1 + k2]:
            prod = F @ prod
        lhs = cc.C_accum[k1 + k2]
        assert np.linalg.norm(lhs - prod @ cc.C_accum[k1]) <= 1e-8 * np.linalg.norm(lhs)


def test_products_agree_with_variational_propagator():
    spec = field(*NONLINEAR)
    w0 = np.array([0.0, 0.05, -0.05])
    path = frame_transport(spec, w0, orthonormal_complement(spec(w0), w0), (0.0, 2.0), 0.01)
    traj = integrate_flow(spec, w0, (0.0, 2.0), tol=1e-12, with_variational=True,
                          t_eval=path.times)
    props = transversal_propagator(traj, path)
    cc = reduced_cocycle(path, props, consistency_tol=1e-8)
    assert np.max(np.abs(np.tril(cc.R_samples, -1))) <= 1e-10


def test_reduced_equation_reproduces_projected_flow(saddle_cocycle, saddle_path, saddle):
    k0 = saddle_path.index0
    sub = saddle_path.window(k0, k0 + 300)
    traj = integrate_flow(saddle, np.zeros(3), (0.0, 3.0), tol=1e-12, with_variational=True,
                          t_eval=sub.times)
    C = transversal_propagator(traj, sub)
    Rg = saddle_cocycle.generator_at_grid()[k0:k0 + 301]
    rng = np.random.default_rng(5)
    for _ in range(3):
        y0 = rng.normal(size=2)
        sol = solve_ivp(lambda t, y: Rg[min(int(round(t / 0.01)), 300)] @ y, (0.0, 3.0), y0,
                        t_eval=sub.times, rtol=1e-11, atol=1e-12)
        ref = np.einsum("kij,j->ki", C.matrices, y0)
        assert np.max(np.abs(sol.y.T - ref) / (1 + np.abs(ref))) <= 1e-7


def test_generator_bound_stable_under_refinement():
    spec = field(*NONLINEAR)
    a = cocycle_for(spec, (-2.0, 2.0), h=0.01)
    b = cocycle_for(spec, (-2.0, 2.0), h=0.005)
    na = np.max(np.sum(np.abs(a.generator_at_grid()), axis=(1, 2)))
    nb = np.max(np.sum(np.abs(b.generator_at_grid()), axis=(1, 2)))
    assert np.isfinite(na) and abs(na - nb) <= 1e-3 * na


def test_certificate_on_saddle(saddle_cocycle):
    cert = certify_hyperbolic(saddle_cocycle, (1.0, 2.0, 5.0, 10.0), window_T=10.0)
    assert cert.pass_ and abs(cert.eta_hat - 1.0) <= 1e-6 and cert.d_hat == 1.0
    assert cert.to_dict()["pass"] is True


def test_certificate_binding_rate():
    cc = cocycle_for(field("1", "2*y", "-3*z"), (-10.0, 10.0))
    cert = certify_hyperbolic(cc, (1.0, 2.0, 5.0, 10.0), window_T=10.0)
    assert cert.passed and abs(cert.eta_hat - 2.0) <= 1e-6


def test_neutral_direction_fails():
    cc = cocycle_for(field("1", "0", "-z"), (-10.0, 10.0))
    cert = certify_hyperbolic(cc, (1.0, 2.0, 5.0, 10.0), window_T=10.0)
    assert not cert.passed and cert.eta_hat == 0.0
    with pytest.raises(PreconditionError):
        dichotomy_constants(cc, cert)


def test_window_longer_than_cocycle(saddle_cocycle):
    with pytest.raises(InsufficientWindowError):
        certify_hyperbolic(saddle_cocycle, (1.0, 20.0), window_T=20.0)


@pytest.fixture(scope="module")
def saddle_constants(saddle):
    cc = cocycle_for(saddle, (-40.0, 40.0))
    cert = certify_hyperbolic(cc, window_T=10.0)
    return dichotomy_constants(cc, cert, horizon=40.0)


def test_saddle_dichotomy_constants(saddle_constants):
    assert abs(saddle_constants.eta_A - 2.0) <= 1e-6
    assert abs(saddle_constants.xi_A - 2.0) <= 1e-4
    assert saddle_constants.tail_bound <= 1e-10


def test_unstable_only_plane():
    cc = cocycle_for(VectorFieldSpec.from_strings(["1", "y"], ["x", "y"]), (-20.0, 20.0),
                     p_minus=0)
    cert = certify_hyperbolic(cc, window_T=10.0)
    const = dichotomy_constants(cc, cert, horizon=20.0)
    assert abs(const.xi_A - 1.0) <= 1e-6


def test_doubled_rates_halve_xi(saddle_constants):
    cc = cocycle_for(field("1", "2*y", "-2*z"), (-20.0, 20.0))
    const = dichotomy_constants(cc, certify_hyperbolic(cc, window_T=10.0), horizon=20.0)
    assert abs(const.xi_A - saddle_constants.xi_A / 2) <= 1e-6


def test_xi_decreases_with_certified_rate(saddle_constants):
    cc = cocycle_for(field("1", "2*y", "-3*z"), (-20.0, 20.0))
    cert = certify_hyperbolic(cc, window_T=10.0)
    const = dichotomy_constants(cc, cert, horizon=20.0)
    assert cert.eta_hat > 1.0 and const.xi_A < saddle_constants.xi_A
    assert abs(const.xi_A - (1 / 2 + 1 / 3)) <= 1e-6


def test_omega_csv_header(tmp_path, saddle_cocycle):
    p = tmp_path / "omega.csv"
    omega_csv(p, saddle_cocycle)
    lines = p.read_bytes().split(b"\n")
    assert lines[0] == b"t,omega_1,omega_2"
    assert b"\r" not in p.read_bytes()
