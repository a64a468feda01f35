import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from contrag.data import Chain, extract_chains
from contrag.library import (
    LibraryFormatError, build_library, invert_ratio, load_library, offset_last_step, ratio,
    residual_descriptor, save_library,
)


def test_ratio_examples():
    H = np.array([[1.0], [2.0], [4.0]])
    np.testing.assert_allclose(ratio(H, 2 * H, 1e-9), 1.0, atol=1e-6)
    np.testing.assert_array_equal(ratio(H, H, 1e-4), 0.0)
    assert ratio(np.array([[0.0]]), np.array([[1.0]]), 1e-4)[0, 0] == pytest.approx(1e4)


def test_residual_examples():
    np.testing.assert_array_equal(residual_descriptor(np.array([[1.0], [2.0]]), np.array([[3.0], [5.0]])), [[2], [3]])
    np.testing.assert_array_equal(residual_descriptor(np.array([[0.0], [0.0]]), np.array([[1.0], [-1.0]])), [[1], [-1]])


def test_offset_last_step():
    W = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(offset_last_step(W), [[-2], [-1], [0]])
    np.testing.assert_array_equal(offset_last_step(np.full((4, 2), 7.0)), 0.0)
    np.testing.assert_array_equal(offset_last_step(offset_last_step(W)), offset_last_step(W))


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (6, 2), elements=finite), arrays(np.float64, (6, 2), elements=finite))
def test_ratio_inverts(H, F):
    R = ratio(H, F, 1e-4)
    back = invert_ratio(H, R, 1e-4)
    np.testing.assert_allclose(back, F, rtol=1e-9, atol=1e-9 * (1 + np.abs(H).max()))


def _chains(n=30, L=5, T=3, C=2, seed=0):
    v = np.random.default_rng(seed).normal(size=(n, C))
    return extract_chains(v, L, T)


def test_build_library_invariants():
    chains = _chains()
    lib = build_library(chains)
    assert len(lib) == 30 - (2 * 5 + 3) + 1
    np.testing.assert_array_equal(lib.keys[:, -1, :], 0.0)
    again = build_library(list(reversed(chains)))
    assert again.fingerprint == lib.fingerprint
    np.testing.assert_array_equal(again.keys, lib.keys)
    np.testing.assert_array_equal(again.values, lib.values)
    for i, ch in enumerate(chains):
        np.testing.assert_allclose(invert_ratio(ch.H, lib.values[i], lib.epsilon), ch.F, rtol=1e-9, atol=1e-12)


def test_single_chain_with_F_equal_H():
    H = np.random.default_rng(1).normal(size=(4, 2))
    lib = build_library([Chain(H, np.zeros((2, 2)), H.copy(), 0)])
    np.testing.assert_array_equal(lib.values, 0.0)
    np.testing.assert_array_equal(lib.keys[0, -1], 0.0)


def test_build_library_rejects_bad_input():
    with pytest.raises(ValueError):
        build_library([])
    with pytest.raises(ValueError):
        build_library(_chains(), descriptor="nope")


def test_fingerprint_depends_on_epsilon_and_descriptor():
    c = _chains()
    fps = {build_library(c, 1e-4).fingerprint, build_library(c, 1e-3).fingerprint,
           build_library(c, 1e-4, "residual").fingerprint}
    assert len(fps) == 3


@pytest.mark.parametrize("descriptor", ["ratio", "residual"])
def test_roundtrip_bit_identical(tmp_path, descriptor):
    lib = build_library(_chains(seed=4), descriptor=descriptor)
    p = tmp_path / "lib.bin"
    save_library(lib, p)
    back = load_library(p)
    assert back.fingerprint == lib.fingerprint and back.descriptor == descriptor
    assert back.epsilon == lib.epsilon
    for a, b in [(back.keys, lib.keys), (back.values, lib.values), (back.source_start, lib.source_start)]:
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes()


def test_float32_payload(tmp_path):
    lib = build_library(_chains(seed=5))
    p = tmp_path / "lib32.bin"
    save_library(lib, p, float32=True)
    back = load_library(p)
    np.testing.assert_allclose(back.values, lib.values, rtol=1e-6)


def test_bad_magic(tmp_path):
    p = tmp_path / "lib.bin"
    save_library(build_library(_chains()), p)
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(LibraryFormatError, match="magic"):
        load_library(p)


def test_bad_version(tmp_path):
    p = tmp_path / "lib.bin"
    save_library(build_library(_chains()), p)
    raw = bytearray(p.read_bytes())
    raw[4] = 99
    p.write_bytes(bytes(raw))
    with pytest.raises(LibraryFormatError, match="version"):
        load_library(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "lib.bin"
    save_library(build_library(_chains()), p)
    p.write_bytes(p.read_bytes()[:-100])
    with pytest.raises(LibraryFormatError, match="truncated"):
        load_library(p)


def test_library_arrays_are_read_only():
    lib = build_library(_chains())
    with pytest.raises(ValueError):
        lib.keys[0, 0, 0] = 1.0
