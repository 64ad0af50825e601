import numpy as np
import pytest

from tsobserver import model
from tsobserver.lipschitz import (LipschitzBounds, UnsupportedSpec, check_hypothesis, estimate_constants,
                                  _jacobian_norms)
from tsobserver.model import Box, Complement, Constant, TanhSector


def _model(h_specs, n=1):
    r = len(h_specs)
    return model.TsDescriptorModel(E=[np.eye(n)], A=[-np.eye(n)] * r, B=[np.ones((n, 1))] * r,
                                   C=np.eye(n)[:1], h_specs=h_specs, v_specs=[Constant(1.0)],
                                   premise_measured=False)


def _tanh_model(n=1):
    return _model([TanhSector(0, sign=-1), Complement(0)], n)


def test_tanh_n_is_half_times_safety():
    for safety in (1.0, 1.05, 1.3):
        b = estimate_constants(_tanh_model(), Box.uniform(-2, 2, 1), safety=safety)
        np.testing.assert_allclose(b.n, [0.5 * safety] * 2, atol=1e-9)


def test_constant_membership():
    b = estimate_constants(_model([Constant(1.0)], n=2), Box.uniform(-1, 1, 2), safety=1.05)
    np.testing.assert_allclose(b.n, [0.0], atol=0)
    np.testing.assert_allclose(b.m, [1.05], atol=1e-12)


def test_example2_regression_and_svd_oracle(ex2):
    box = Box.uniform(-2, 2, 3)
    b = estimate_constants(ex2, box, density=41, safety=1.05)
    np.testing.assert_allclose(b.m, [1.70076124] * 2, atol=1e-7)
    np.testing.assert_allclose(b.n, [0.525] * 2, atol=1e-9)
    # independent oracle: brute-force SVD of the Jacobian h I + x grad^T
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(20000, 3))
    x[:4] = [[-2, 2, 2], [-2, -2, -2], [2, 2, 2], [-1.5, 2, 2]]
    h = model.eval_specs(ex2.h_specs, x)
    worst = 0.0
    for i, s in enumerate(ex2.h_specs):
        g = s.gradient(x, ex2.h_specs)
        J = h[:, i, None, None] * np.eye(3) + x[:, :, None] * g[:, None, :]
        worst = max(worst, np.linalg.norm(J, 2, axis=(1, 2)).max())
    assert worst <= b.m[0] / 1.05 * (1 + 1e-9)
    assert worst >= b.m[0] / 1.05 * 0.99


def test_jacobian_norm_formula_matches_svd():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3, 5):
        x = rng.standard_normal((200, n))
        g = rng.standard_normal((200, n))
        h = rng.uniform(0, 1, 200)
        J = h[:, None, None] * np.eye(n) + x[:, :, None] * g[:, None, :]
        np.testing.assert_allclose(_jacobian_norms(h, g, x), np.linalg.norm(J, 2, axis=(1, 2)), rtol=1e-12)


def test_safety_scales_exactly(ex2):
    box = Box.uniform(-1, 1, 3)
    a = estimate_constants(ex2, box, density=11, safety=1.0)
    b = estimate_constants(ex2, box, density=11, safety=2.0)
    np.testing.assert_allclose(b.m, 2.0 * a.m, rtol=1e-15)
    np.testing.assert_allclose(b.n, 2.0 * a.n, rtol=1e-15)


def test_monotone_in_box(ex2):
    small = estimate_constants(ex2, Box.uniform(-1, 1, 3), density=11)
    big = estimate_constants(ex2, Box.uniform(-2, 2, 3), density=11)
    assert np.all(big.m >= small.m) and np.all(big.n >= small.n)


def test_hypothesis_check_1e5_pairs(ex2, bounds2):
    rep = check_hypothesis(ex2, bounds2, pairs=100_000, seed=0)
    assert rep.passed
    assert np.all(rep.worst_m_ratio <= 1 + 1e-9) and np.all(rep.worst_n_ratio <= 1 + 1e-9)


def test_hypothesis_tanh_safety_one():
    m = _tanh_model(2)
    b = estimate_constants(m, Box.uniform(-2, 2, 2), safety=1.0)
    assert check_hypothesis(m, b, pairs=20_000, seed=3).passed


def test_hypothesis_constant_membership():
    m = _model([Constant(1.0)])
    b = LipschitzBounds(m=[1.0], n=[0.0], box=Box.uniform(-1, 1, 1))
    rep = check_hypothesis(m, b, pairs=1000)
    assert rep.passed
    assert rep.worst_n_ratio[0] == 0.0
    assert rep.worst_m_ratio[0] <= 1.0 + 1e-12


def test_halved_m_is_caught(ex2):
    b = estimate_constants(ex2, Box.uniform(-2, 2, 3), safety=1.0)
    halved = LipschitzBounds(m=b.m / 2, n=b.n, box=b.box)
    rep = check_hypothesis(ex2, halved, pairs=20_000, seed=1)
    assert not rep.passed
    assert rep.worst_m_ratio.max() > 1


def test_sampled_method_close_to_analytic(ex2):
    box = Box.uniform(-2, 2, 3)
    a = estimate_constants(ex2, box, density=11)
    s = estimate_constants(ex2, box, density=11, method="sampled")
    np.testing.assert_allclose(s.m, a.m, rtol=1e-6)
    np.testing.assert_allclose(s.n, a.n, rtol=1e-6)
    assert s.method == "sampled"


def test_argument_checks(ex2):
    with pytest.raises(ValueError):
        estimate_constants(ex2, Box.uniform(-1, 1, 2))
    with pytest.raises(ValueError):
        estimate_constants(ex2, Box.uniform(-1, 1, 3), density=1)
    with pytest.raises(ValueError):
        estimate_constants(ex2, Box.uniform(-1, 1, 3), safety=0.5)
    with pytest.raises(ValueError):
        LipschitzBounds(m=[-1.0], n=[0.0], box=Box.uniform(-1, 1, 1))
    with pytest.raises(ValueError):
        LipschitzBounds(m=[1.0], n=[0.0], box=Box.uniform(-1, 1, 1), beta1=0.0)


def test_unsupported_spec():
    class Opaque:
        def value(self, x, siblings=()):
            return np.ones(np.asarray(x).shape[:-1])

        def critical_points(self, axis):
            return []

    with pytest.raises(UnsupportedSpec):
        estimate_constants(_model([Opaque()]), Box.uniform(-1, 1, 1))


def test_bounds_round_trip(bounds2):
    back = LipschitzBounds.from_dict(bounds2.to_dict())
    np.testing.assert_array_equal(back.m, bounds2.m)
    assert back.beta1 == 0.5 and back.safety == 1.05
