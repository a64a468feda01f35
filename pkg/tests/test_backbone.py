import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contrag.backbone import CheckpointError, LinearBackbone, decompose, load_checkpoint, save_checkpoint


def test_decompose_examples():
    ramp = np.arange(5.0)[:, None]
    s, t = decompose(ramp, 3)
    np.testing.assert_allclose(t[:, 0], [1 / 3, 1, 2, 3, 11 / 3], atol=1e-15)
    np.testing.assert_array_equal(s, ramp - t)
    s, t = decompose(ramp, 1)
    np.testing.assert_array_equal(t, ramp)
    np.testing.assert_array_equal(s, 0.0)
    s, t = decompose(np.full((30, 2), 3.5), 25)
    np.testing.assert_allclose(t, 3.5, atol=1e-15)
    np.testing.assert_allclose(s, 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        decompose(ramp, 4)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5, 25]))
def test_decompose_additive(seed, k):
    X = np.random.default_rng(seed).normal(size=(2, 30, 3)) * 10
    s, t = decompose(X, k)
    np.testing.assert_allclose(s + t, X, atol=1e-12, rtol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([3, 5, 7, 25]), st.integers(1, 40))
def test_decompose_matches_padded_mean(seed, k, L):
    X = np.random.default_rng(seed).normal(size=(2, L, 3))
    pad = k // 2
    padded = np.concatenate([np.repeat(X[:, :1], pad, axis=1), X, np.repeat(X[:, -1:], pad, axis=1)], axis=1)
    expected = np.stack([padded[:, i : i + k].mean(axis=1) for i in range(L)], axis=1)
    _, t = decompose(X, k)
    np.testing.assert_allclose(t, expected, atol=1e-12, rtol=0)


def _model(**kw):
    defaults = dict(seq_len=8, pred_len=4, n_channels=2, kernel=3, seed=1)
    defaults.update(kw)
    return LinearBackbone(**defaults)


def test_zero_weights_predict_zero():
    m = _model()
    for v in m.params.values():
        v[...] = 0
    np.testing.assert_array_equal(m.forward(np.random.default_rng(0).normal(size=(3, 8, 2))), 0.0)


@pytest.mark.parametrize("gate", ["static", "dynamic"])
def test_alpha_one_and_aux_equal_main(gate):
    rng = np.random.default_rng(1)
    X, Z = rng.normal(size=(5, 8, 2)), rng.normal(size=(5, 8, 2))
    base = _model()
    aug = _model(gate=gate, alpha=1.0)
    for k in ("W_s", "b_s", "W_t", "b_t"):
        aug.params[k][...] = base.params[k]
    for k in aug.params:
        if k.startswith("gate"):
            aug.params[k][...] = rng.normal(size=aug.params[k].shape)
    assert aug.forward(X, Z).tobytes() == base.forward(X).tobytes()
    aug.set_alpha(0.3)
    assert aug.forward(X, X.copy()).tobytes() == base.forward(X).tobytes()


def test_channel_permutation_equivariance():
    m = _model(n_channels=3)
    X = np.random.default_rng(2).normal(size=(4, 8, 3))
    perm = [2, 0, 1]
    np.testing.assert_allclose(m.forward(X[..., perm]), m.forward(X)[..., perm], atol=1e-14)


def test_linearity_without_bias():
    m = _model()
    rng = np.random.default_rng(3)
    X1, X2 = rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 2))
    np.testing.assert_allclose(m.forward(2 * X1 - 3 * X2), 2 * m.forward(X1) - 3 * m.forward(X2), atol=1e-12)


def test_shape_validation():
    m = _model(gate="static")
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 7, 2)), np.zeros((2, 7, 2)))
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 8, 2)))
    with pytest.raises(ValueError):
        _model().forward(np.zeros((2, 8, 2)), np.zeros((2, 8, 2)))


def _fd_check(model, X, Y, Z=None, h=1e-6):
    _, grads = model.loss_and_grads(X, Y, Z)
    worst = 0.0
    for k, arr in model.params.items():
        num = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = model.loss_and_grads(X, Y, Z)
            flat[i] = old - h
            lm, _ = model.loss_and_grads(X, Y, Z)
            flat[i] = old
            nflat[i] = (lp - lm) / (2 * h)
        rel = np.max(np.abs(grads[k] - num)) / max(np.max(np.abs(num)), 1e-3)
        worst = max(worst, rel)
    return worst


@pytest.mark.parametrize("kw", [
    {},
    {"individual": True},
    {"gate": "static", "alpha": 0.6},
    {"gate": "dynamic", "alpha": 0.2},
    {"gate": "static", "alpha": 0.5, "gate_per_stream": True},
    {"gate": "dynamic", "alpha": 0.0, "individual": True},
])
def test_gradients_match_finite_differences(kw):
    rng = np.random.default_rng(4)
    m = _model(**kw)
    for k, v in m.params.items():
        v[...] = rng.normal(size=v.shape) * 0.3
    X, Y = rng.normal(size=(3, 8, 2)), rng.normal(size=(3, 4, 2))
    Z = rng.normal(size=(3, 8, 2)) if m.augmented else None
    assert _fd_check(m, X, Y, Z) <= 1e-5


def test_gradients_vanish_at_minimum_and_scale():
    m = _model(gate="static")
    rng = np.random.default_rng(5)
    X, Z = rng.normal(size=(1, 8, 2)), rng.normal(size=(1, 8, 2))
    Y = m.forward(X, Z)
    loss, grads = m.loss_and_grads(X, Y, Z)
    assert loss == 0.0
    assert all(not np.any(g) for g in grads.values())
    Y2 = rng.normal(size=Y.shape)
    _, g1 = m.loss_and_grads(X, Y2, Z)
    _, g2 = m.loss_and_grads(X, Y2, Z, scale=2.0)
    for k in g1:
        np.testing.assert_allclose(g2[k], 2 * g1[k], rtol=1e-15, atol=0)


@pytest.mark.parametrize("kw", [{}, {"gate": "dynamic", "alpha": 0.35}, {"gate": "static", "gate_per_stream": True, "individual": True}])
def test_checkpoint_roundtrip(tmp_path, kw):
    m = _model(**kw)
    rng = np.random.default_rng(6)
    for v in m.params.values():
        v[...] = rng.normal(size=v.shape)
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.params.keys() == m.params.keys()
    for k in m.params:
        assert back.params[k].tobytes() == m.params[k].tobytes()
    X = rng.normal(size=(2, 8, 2))
    Z = X[::-1].copy() if m.augmented else None
    assert back.forward(X, Z).tobytes() == m.forward(X, Z).tobytes()
    assert back.alpha == m.alpha


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_bytes(b"JUNK" + bytes(60))
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
    save_checkpoint(_model(), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)
