import numpy as np
import pytest

from liao.conjugacy import ConjugacyConfig, conjugacy_map, conjugacy_offset, \
    verify_equivariance, verify_injectivity_and_frame_independence
from liao.errors import ValidationError

from conftest import field

DELTA = 0.01
T_GRID = [-10.0, -5.0, 0.0, 5.0, 10.0]


def trig_offset(x0, delta=DELTA):
    s = np.sin(x0) + np.cos(x0)
    return np.array([0.0, -delta * s / 2, delta * s / 2])


@pytest.fixture(scope="module")
def config():
    return ConjugacyConfig(epsilon=0.1, xi=0.05)


@pytest.fixture(scope="module")
def constant_result(saddle, config):
    V = field("1", f"y + {DELTA}", "-z")
    samples = [[x, 0.0, 0.0] for x in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    return conjugacy_map(saddle, V, samples, config, t_grid=T_GRID)


@pytest.fixture(scope="module")
def trig_result(saddle, config):
    V = field("1", f"y + {DELTA}*sin(x)", f"-z + {DELTA}*cos(x)")
    samples = [[x, 0.0, 0.0] for x in (0.0, 0.7, 2.5)]
    return conjugacy_map(saddle, V, samples, config, t_grid=T_GRID)


def test_config_constants():
    cfg = ConjugacyConfig(epsilon=0.1, xi=0.05, eta_lambda=2.0, xi_lambda=2.0)
    assert cfg.kappa == pytest.approx(1 / 648, rel=1e-15)
    assert cfg.rho_xi == pytest.approx(0.05 / 648, rel=1e-15)


@pytest.mark.parametrize("kw", [dict(epsilon=0.0, xi=0.05), dict(epsilon=0.1, xi=1.5),
                                dict(epsilon=0.1, xi=0.2, chart_radius=0.1)])
def test_config_validation(kw):
    with pytest.raises(ValidationError):
        ConjugacyConfig(**kw)


def test_constant_offsets(constant_result):
    assert not constant_result.failures
    for off in constant_result.offsets:
        assert np.max(np.abs(off.h - [0.0, -DELTA, 0.0])) <= 1e-8
    assert constant_result.max_offset == pytest.approx(DELTA, abs=1e-8)
    assert constant_result.max_offset <= min(0.1, 0.05) / 4


def test_constant_images_keep_spacing(constant_result):
    rep = constant_result.injectivity
    assert rep["injective"]
    assert rep["min_image_separation"] == pytest.approx(1.0, abs=1e-8)


def test_offsets_lie_in_sections(saddle, constant_result, trig_result):
    for res in (constant_result, trig_result):
        for off in res.offsets:
            assert abs(saddle(off.w) @ off.h) <= 1e-10


def test_constant_equivariance(constant_result):
    for t, r in constant_result.residuals:
        assert np.max(r) <= 1e-7


def test_trig_offsets_match_closed_form(trig_result):
    for off in trig_result.offsets:
        assert np.max(np.abs(off.h - trig_offset(off.w[0]))) <= 1e-7


def test_trig_equivariance(trig_result):
    for t, r in trig_result.residuals:
        assert np.all(r <= 1e-6 * (1 + np.abs(t)))


def test_remainder_lipschitz_below_kappa(constant_result, trig_result):
    for res in (constant_result, trig_result):
        for off in res.offsets:
            assert off.check.lipschitz <= res.config.kappa


def test_frame_independence_random(constant_result, trig_result):
    assert constant_result.frame_independence["max_difference"] <= 1e-8
    assert trig_result.frame_independence["max_difference"] <= 1e-8


def test_frame_independence_sign_flip(trig_result):
    flip = [np.diag([-1.0, 1.0])] * 3
    rep = verify_injectivity_and_frame_independence(trig_result, rotations=flip, count=3)
    assert rep["frame_independence"]["max_difference"] <= 1e-8


def test_unperturbed_field_gives_identity(saddle, config):
    res = conjugacy_map(saddle, saddle, [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]], config)
    np.testing.assert_array_equal(res.images(), [[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    r = verify_equivariance(saddle, saddle, [0.0, 0.0, 0.0], np.zeros(3), [-2.0, 0.0, 2.0],
                            res.config)
    assert np.max(r) <= 1e-12


def test_single_offset_and_linear_scaling(saddle, config):
    w = [0.4, 0.0, 0.0]
    x1, h1, sol = conjugacy_offset(saddle, field("1", f"y + {DELTA}*sin(x)", "-z"), w,
                                   config=config)
    _, h2, _ = conjugacy_offset(saddle, field("1", f"y + {2 * DELTA}*sin(x)", "-z"), w,
                                config=config)
    assert np.max(np.abs(h2 - 2 * h1)) <= 1e-9
    assert sol.iterations <= 30 and x1.shape == (2,)


def test_single_sample_is_injective(saddle, config):
    res = conjugacy_map(saddle, field("1", f"y + {DELTA}", "-z"), [[0.0, 0.0, 0.0]], config)
    assert res.injectivity["injective"] and res.injectivity["pairs_checked"] == 0


def test_result_serialisation(tmp_path, constant_result):
    d = constant_result.to_dict()
    assert {"samples", "offsets", "residuals", "config", "certificate_ref"} <= set(d)
    constant_result.write_residual_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "sample,w_1,w_2,w_3,t,residual"
    assert len(lines) == 1 + 5 * len(T_GRID)
