import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.utils.estimator_checks import check_transformer_general

from wtamem.activation import (GroupedWTA, TemperatureSchedule, combination_count, fixed_c,
                               fixed_l, sigma_t, sigma_wta, softmax_gate, temperature_at)
from wtamem.autodiff import Tensor, default_dtype
from wtamem.gradcheck import grad_check

E = np.exp(1.0)


def t64(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


# -- schedule -----------------------------------------------------------------
def test_schedule_endpoints():
    s = TemperatureSchedule(1.0, 1000.0, 370)
    assert temperature_at(s, 0) == 1.0
    assert temperature_at(s, 370) == 1000.0


def test_schedule_geometric_midpoint():
    s = TemperatureSchedule(10.0, 1000.0, 100)
    assert temperature_at(s, 50) == pytest.approx(100.0, rel=1e-12)


@given(st.floats(0.01, 100), st.floats(0.01, 1e4), st.integers(1, 1000), st.data())
def test_schedule_is_geometric(t0, t1, total, data):
    s = TemperatureSchedule(t0, t1, total)
    k = data.draw(st.integers(0, total - 1))
    assert temperature_at(s, k + 1) / temperature_at(s, k) == pytest.approx((t1 / t0) ** (1 / total), rel=1e-9)


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError):
        TemperatureSchedule(0.0, 1.0, 10)
    with pytest.raises(ValueError):
        temperature_at(TemperatureSchedule(1.0, 2.0, 10), 11)


# -- sigma_t ------------------------------------------------------------------
def test_sigma_t_scalar_example():
    with default_dtype(np.float64):
        out = sigma_t(t64([[2.0, 1.0]]), fixed_l(2), t=1.0).data
    # gate of the runner-up is exp(1 * (1 - 2)); its own value sigma(1) = 1
    np.testing.assert_allclose(out, [[2.0, 1.0 / E]], rtol=1e-12)
    assert out[0, 1] == pytest.approx(0.367879, abs=1e-6)


def test_sigma_t_scalar_gradient():
    with default_dtype(np.float64):
        x = t64([[2.0, 1.0]], grad=True)
        sigma_t(x, fixed_l(2), t=1.0).sum().backward()
    np.testing.assert_allclose(x.grad, [[1.0, 1 / E]], rtol=1e-12)
    assert x.grad[0, 1] == pytest.approx(0.367879, abs=1e-6)


def test_sigma_t_high_temperature_is_wta():
    with default_dtype(np.float64):
        out = sigma_t(t64([[2.0, 1.0]]), fixed_l(2), t=100.0).data
    np.testing.assert_allclose(out, [[2.0, 0.0]], atol=1e-6)


def test_sigma_t_small_temperature_gradient_is_plain():
    with default_dtype(np.float64):
        x = t64([[2.0, -1.0, 0.5, 3.0]], grad=True)
        sigma_t(x, fixed_l(2), t=1e-9).sum().backward()
    np.testing.assert_allclose(x.grad, [[1.0, 0.0, 1.0, 1.0]], atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 8, 2), elements=st.floats(-5, 5)), st.sampled_from([1, 2, 4, 8]))
def test_low_temperature_limit(x, ell):
    with default_dtype(np.float64):
        out = sigma_t(t64(x), fixed_l(ell), t=1e-6).data
    assert np.abs(out - np.maximum(x, 0)).max() < 1e-4


def _separated(x, ell):
    g = np.sort(np.maximum(x, 0).reshape(x.shape[0], -1, ell, *x.shape[2:]), axis=2)
    top = g[:, :, -1]
    return bool(((top - g[:, :, -2] >= 1e-3) | (top == 0)).all())


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 8, 3), elements=st.floats(-5, 5)), st.sampled_from([2, 4, 8]))
def test_high_temperature_limit(x, ell):
    assume(_separated(x, ell))
    with default_dtype(np.float64):
        hot = sigma_t(t64(x), fixed_l(ell), t=1e6).data
        hard = sigma_wta(t64(x), fixed_l(ell)).data
    assert np.abs(hot - hard).max() < 1e-4


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 6), elements=st.floats(-5, 5)), st.floats(1e-3, 1e3))
def test_winner_keeps_its_value(x, t):
    with default_dtype(np.float64):
        out = sigma_t(t64(x), fixed_l(3), t=t).data
    s = np.maximum(x, 0).reshape(2, 2, 3)
    o = out.reshape(2, 2, 3)
    idx = s.argmax(axis=2)[..., None]
    np.testing.assert_array_equal(np.take_along_axis(o, idx, 2), np.take_along_axis(s, idx, 2))
    assert (o.argmax(axis=2)[..., None] == idx).all() or np.all(s.max(axis=2) == 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (1, 4), elements=st.floats(0, 5)), st.floats(1e-3, 1e2))
def test_gate_is_monotone(s, t):
    g = softmax_gate(s, 4, t)
    order = np.argsort(s[0], kind="stable")
    assert np.all(np.diff(g[0, order]) >= 0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4, 3), elements=st.floats(-5, 5)), st.floats(1e-3, 1e3))
def test_ell_one_is_base_activation(x, t):
    with default_dtype(np.float64):
        a = sigma_t(t64(x), fixed_l(1), t=t).data
        b = sigma_wta(t64(x), fixed_l(1)).data
    np.testing.assert_array_equal(a, np.maximum(x, 0))
    np.testing.assert_array_equal(b, np.maximum(x, 0))


def test_sigma_t_gradient_matches_frozen_gate_surrogate():
    spec = fixed_l(4)
    frozen = {}

    def sample(rng):
        x = rng.normal(size=(2, 8, 3, 3))
        frozen["g"] = softmax_gate(np.maximum(x, 0), 4, 2.5)
        return [x]

    def f(ts):
        w = Tensor(np.linspace(-1, 1, 144).reshape(2, 8, 3, 3))
        return (sigma_t(ts[0], spec, 2.5, frozen_gate=frozen["g"]) * w).sum()

    err = grad_check(f, sample, probes=50, signature=lambda p: [p[0] > 0])
    assert err < 1e-4


def test_sigma_t_ad_uses_gate_as_constant():
    # the AD gradient equals the frozen-gate gradient, not the full derivative
    x = np.array([[2.0, 1.0]])
    with default_dtype(np.float64):
        xt = t64(x, grad=True)
        sigma_t(xt, fixed_l(2), t=1.0).sum().backward()
        full = []
        for j in range(2):
            d = np.zeros_like(x)
            d[0, j] = 1e-6
            up = sigma_t(t64(x + d), fixed_l(2), 1.0).data.sum()
            down = sigma_t(t64(x - d), fixed_l(2), 1.0).data.sum()
            full.append((up - down) / 2e-6)
    assert not np.allclose(xt.grad[0], full, atol=1e-3)


def test_sigma_t_rejects_bad_group():
    with pytest.raises(ValueError):
        sigma_t(t64(np.ones((1, 6))), fixed_l(4), 1.0)
    with pytest.raises(ValueError):
        sigma_t(t64(np.ones((1, 4))), fixed_l(2), 0.0)


# -- sigma_wta ----------------------------------------------------------------
def test_wta_examples():
    assert sigma_wta(t64([[0.5, 3.2, 1.1]]), fixed_l(3)).data.tolist() == [[0.0, 3.2, 0.0]]
    assert sigma_wta(t64([[-1.0, -3.0]]), fixed_l(2)).data.tolist() == [[0.0, 0.0]]
    assert sigma_wta(t64([[2.0, 2.0]]), fixed_l(2)).data.tolist() == [[2.0, 0.0]]


def test_wta_binary():
    out = sigma_wta(t64([[0.5, 3.2, 1.1, -1, -2, -3]]), fixed_l(3), binary=True).data
    assert out.tolist() == [[0, 1, 0, 0, 0, 0]]


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, (2, 8, 3), elements=st.integers(-3, 3)), st.sampled_from([1, 2, 4, 8]))
def test_wta_tie_break_is_lowest_index(x, ell):
    out = sigma_wta(t64(x), fixed_l(ell)).data.reshape(2, 8 // ell, ell, 3)
    s = np.maximum(x, 0).reshape(2, 8 // ell, ell, 3)
    first = s.argmax(axis=2)
    for idx in np.ndindex(first.shape):
        b, g, p = idx
        grp = out[b, g, :, p]
        if s[b, g, :, p].max() > 0:
            assert np.flatnonzero(grp).tolist() == [first[idx]]
        else:
            assert not grp.any()


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([1, 2, 4, 16]), st.integers(0, 2 ** 32 - 1))
def test_wta_sparsity(ell, seed):
    x = np.random.default_rng(seed).normal(size=(3, 16, 4, 4))
    out = sigma_wta(t64(np.abs(x) + 0.1), fixed_l(ell)).data
    assert ((out != 0).sum(axis=1) == 16 // ell).all()
    out = sigma_wta(t64(x), fixed_l(ell)).data
    assert ((out != 0).sum(axis=1) <= 16 // ell).all()


def test_fixed_c_group_length():
    assert fixed_c(4).group_length(64) == 16
    assert fixed_l(4).group_length(64) == 4
    with pytest.raises(ValueError):
        fixed_c(3).group_length(64)
    assert str(fixed_c(1)) == "FixedC(1)"


# -- combinations -------------------------------------------------------------
def test_combination_count():
    assert combination_count(fixed_l(2), 64) == 4294967296 == 2 ** 32
    assert combination_count(fixed_l(1), 64) == 1
    assert combination_count(fixed_c(1), 64) == 64


# -- transformer wrapper ------------------------------------------------------
def test_grouped_wta_transformer():
    X = np.array([[0.5, 3.2, 1.0, -2.0]])
    assert GroupedWTA(ell=2).fit_transform(X).tolist() == [[0.0, 3.2, 1.0, 0.0]]
    np.testing.assert_allclose(GroupedWTA(c=1, temperature=1.0).fit_transform(X),
                               np.maximum(X, 0) * np.exp(np.maximum(X, 0) - 3.2))
    assert GroupedWTA(ell=3).get_params()["ell"] == 3
    with pytest.raises(ValueError):
        GroupedWTA(ell=3).fit(X)


def test_grouped_wta_sklearn_contract():
    check_transformer_general("GroupedWTA", GroupedWTA(ell=1))
