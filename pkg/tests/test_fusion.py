import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from contrag.fusion import GateParams, fuse, fuse_backward, gate, main_weight

unit = st.floats(0, 1)


def test_gate_examples():
    m = np.random.default_rng(0).normal(size=(2, 5, 3))
    a = np.random.default_rng(1).normal(size=(2, 5, 3))
    assert gate(m, a, GateParams()) == 0.5
    assert gate(m, a, GateParams(g=np.array(20.0))) >= 1 - 1e-8
    dyn = gate(m, a, GateParams(mode="dynamic", n_channels=3))
    assert dyn.shape == (2, 1, 3)
    np.testing.assert_array_equal(dyn, 0.5)


def test_fuse_examples():
    rng = np.random.default_rng(2)
    m, a = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    assert fuse(m, a, 0.3, 1.0) is m or np.array_equal(fuse(m, a, 0.3, 1.0), m)
    np.testing.assert_array_equal(fuse(m, a, 0.0, 0.0), a)
    assert fuse(np.array(1.0), np.array(0.0), 0.5, 0.75) == 0.875


def test_alpha_out_of_range():
    with pytest.raises(ValueError):
        fuse(np.zeros(2), np.zeros(2), 0.5, 1.5)
    with pytest.raises(ValueError):
        GateParams(alpha=-0.1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1), unit, unit)
def test_convexity_and_main_weight(seed, alpha, gamma):
    rng = np.random.default_rng(seed)
    m, a = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    out = fuse(m, a, gamma, alpha)
    tol = 1e-12
    assert (out >= np.minimum(m, a) - tol).all() and (out <= np.maximum(m, a) + tol).all()
    w = main_weight(gamma, alpha)
    assert alpha - 1e-15 <= w <= 1 + 1e-15
    np.testing.assert_allclose(out, w * m + (1 - w) * a, atol=1e-12)
    np.testing.assert_array_equal(fuse(m, m.copy(), gamma, alpha), m)


def _num_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def _rel(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


@pytest.mark.parametrize("mode", ["static", "dynamic"])
def test_fuse_backward_matches_finite_differences(mode):
    rng = np.random.default_rng(3)
    C = 2
    m, a = rng.normal(size=(3, 8, C)), rng.normal(size=(3, 8, C))
    up = rng.normal(size=m.shape)
    p = GateParams(mode=mode, alpha=0.4, n_channels=C, g=np.array(0.3))
    if mode == "dynamic":
        p.phi_W[...] = rng.normal(size=p.phi_W.shape)
        p.phi_b[...] = rng.normal(size=C)

    def obj():
        return float(np.sum(up * fuse(m, a, gate(m, a, p), p.alpha)))

    grads = fuse_backward(up, m, a, gate(m, a, p), p)
    assert _rel(grads["main"], _num_grad(obj, m)) <= 1e-5
    assert _rel(grads["aux"], _num_grad(obj, a)) <= 1e-5
    for k, arr in p.arrays().items():
        assert _rel(np.asarray(grads[k]), _num_grad(obj, arr)) <= 1e-5


def test_static_gate_is_sigmoid():
    for g in (-3.0, 0.0, 2.5):
        assert float(gate(np.zeros((2, 1)), np.zeros((2, 1)), GateParams(g=np.array(g)))) == pytest.approx(expit(g))
