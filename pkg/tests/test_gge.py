import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rawenhance.gge import (
    GAMMA_MAX,
    GAMMA_MIN,
    GammaParams,
    dgamma_dalpha,
    gamma_of_alpha,
    gge_backward,
    gge_forward,
    param_count,
)

from conftest import max_rel_error, numeric_grad


def _params_with_gamma(g):
    # bounds centered on g, so alpha = 0 lands on it exactly
    return GammaParams.create(g - 0.25, g + 0.25, dtype=np.float64)


def test_alpha_zero_is_midpoint():
    assert gamma_of_alpha(0.0) == pytest.approx(0.1190476, abs=1e-6)


def test_alpha_one():
    expect = 1 / 10.5 + (1 / 7 - 1 / 10.5) * (math.tanh(1.0) + 1) / 2
    assert gamma_of_alpha(1.0) == pytest.approx(expect, rel=1e-12)
    assert gamma_of_alpha(1.0) == pytest.approx(0.13718, abs=1e-5)


def test_large_alpha_approaches_max():
    assert gamma_of_alpha(40.0) == pytest.approx(1 / 7, rel=1e-12)
    assert dgamma_dalpha(40.0) == 0.0


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_alpha(bad):
    with pytest.raises(ValueError):
        gamma_of_alpha(bad)


def test_ten_thousand_alphas_strictly_inside():
    a = np.random.default_rng(5).normal(0, 3, size=10_000)
    g = gamma_of_alpha(a)
    assert np.all((g > GAMMA_MIN) & (g < GAMMA_MAX))


@given(a=st.floats(-15, 15), b=st.floats(-15, 15))
def test_gamma_monotone(a, b):
    if a < b:
        assert gamma_of_alpha(a) <= gamma_of_alpha(b)


@given(a=st.floats(-1e6, 1e6))
def test_doubled_alpha_still_bounded(a):
    assert GAMMA_MIN <= gamma_of_alpha(2 * a) <= GAMMA_MAX


def test_four_params():
    assert param_count(GammaParams.create()) == 4


def test_forward_anchors():
    p = _params_with_gamma(0.5)
    out, _ = gge_forward(np.full((4, 1, 2), [[0.25, 1.0]]), p)
    np.testing.assert_allclose(out[:, 0, 0], 127.5, atol=1e-4)
    assert np.all(out[:, 0, 1] == 255.0)


def test_forward_clamps_zero():
    p = GammaParams.create(dtype=np.float64)
    out, _ = gge_forward(np.zeros((4, 1, 1)), p)
    g = gamma_of_alpha(0.0)
    np.testing.assert_allclose(out.ravel(), 255 * math.exp(g * math.log(1e-6)))
    assert np.all(out > 0)


def test_dx_dgamma_by_finite_difference():
    # oracle: central difference on the exponent itself, independent of the backward code
    def f(g):
        return 255 * 0.25 ** g

    h = 1e-5
    fd = (f(0.5 + h) - f(0.5 - h)) / (2 * h)
    assert fd == pytest.approx(-176.76, abs=0.01)
    p = _params_with_gamma(0.5)
    out, cache = gge_forward(np.full((4, 1, 1), 0.25), p)
    gge_backward(cache, np.ones_like(out))
    chain = dgamma_dalpha(p.alpha.value, p.gamma_min, p.gamma_max)
    np.testing.assert_allclose(p.alpha.grad / chain, fd, rtol=1e-6)


def test_alpha_and_input_grads_match_finite_differences(rng):
    p = GammaParams.create(alpha=rng.normal(0, 0.5, 4), dtype=np.float64)
    x = rng.uniform(0.05, 1.0, size=(2, 4, 8, 8))
    proj = rng.normal(size=x.shape) / x.size

    def loss():
        return float((gge_forward(x, p)[0] * proj).sum())

    _, cache = gge_forward(x, p)
    gx = gge_backward(cache, proj)
    assert max_rel_error(p.alpha.grad, numeric_grad(loss, p.alpha.value)) <= 1e-4
    assert max_rel_error(gx, numeric_grad(loss, x, h=1e-5)) <= 1e-4


@given(seed=st.integers(0, 2 ** 16))
def test_forward_order_preserving(seed):
    r = np.random.default_rng(seed)
    x = np.sort(r.uniform(0, 1, size=(4, 1, 50)), axis=-1)
    out, _ = gge_forward(x, GammaParams.create(alpha=r.normal(size=4), dtype=np.float64))
    assert np.all(np.diff(out, axis=-1) >= 0)
    assert np.all((out > 0) & (out <= 255))


def test_serialization_roundtrip():
    p = GammaParams.create(alpha=[0.1, -0.2, 0.3, 0.0], gamma_min=0.09, gamma_max=0.13)
    q = GammaParams.from_dict(p.to_dict())
    np.testing.assert_array_equal(p.alpha.value, q.alpha.value)
    assert (q.gamma_min, q.gamma_max) == (p.gamma_min, p.gamma_max)
