import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfwtrace.linalg import (
    ZERO_EPS,
    Rank1Atom,
    ZeroVectorError,
    matrix_power_method,
    normalize,
    numerical_rank,
    power_method,
    power_method_until,
    rank1_update,
    svd_oracle,
    trace_norm,
    unit_sphere_sample,
)
from oracles import serial_power, top_singular

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def unit(x):
    return x / np.linalg.norm(x)


@given(arrays(np.float64, st.integers(1, 30), elements=finite), st.floats(1e-3, 1e3))
def test_normalize_unit_and_scale_invariant(x, c):
    peak = np.max(np.abs(x))
    if peak == 0 or peak * np.linalg.norm(x / peak) <= ZERO_EPS:
        with pytest.raises(ZeroVectorError):
            normalize(x)
        return
    y = normalize(x)
    assert abs(np.linalg.norm(y) - 1) <= 1e-12
    np.testing.assert_allclose(normalize(c * x), y, atol=1e-12)


def test_normalize_examples():
    np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)
    np.testing.assert_array_equal(normalize([1e-200, 0.0]), [1.0, 0.0])
    with pytest.raises(ZeroVectorError):
        normalize(np.zeros(3))


def test_unit_sphere_sample_deterministic():
    a = unit_sphere_sample(17, 5)
    assert abs(np.linalg.norm(a) - 1) < 1e-12
    np.testing.assert_array_equal(a, unit_sphere_sample(17, 5))
    assert not np.array_equal(a, unit_sphere_sample(17, 6))
    with pytest.raises(ValueError):
        unit_sphere_sample(0, 1)


def test_unit_sphere_sample_is_isotropic():
    pts = np.array([unit_sphere_sample(3, s) for s in range(4000)])
    np.testing.assert_allclose(pts.mean(axis=0), 0, atol=0.05)
    np.testing.assert_allclose(pts.T @ pts / len(pts), np.eye(3) / 3, atol=0.03)


def test_atom_rejects_non_unit():
    with pytest.raises(ValueError):
        Rank1Atom(np.array([1.0, 1.0]), np.array([1.0]), 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_rank1_update_matches_dense(d, m, seed, gamma):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, m))
    atom = Rank1Atom(unit(rng.standard_normal(d)), unit(rng.standard_normal(m)), -2.5)
    out = rank1_update(W, gamma, atom)
    assert out.shape == (d, m)
    np.testing.assert_allclose(out, (1 - gamma) * W + gamma * atom.to_dense(), atol=1e-12)


def test_rank1_update_shape_mismatch():
    atom = Rank1Atom(np.array([1.0, 0.0]), np.array([1.0]), 1.0)
    with pytest.raises(ValueError):
        rank1_update(np.zeros((3, 1)), 0.5, atom)


def test_rank_grows_at_most_one_per_atom():
    rng = np.random.default_rng(0)
    W = np.zeros((10, 7))
    for t in range(12):
        atom = Rank1Atom(unit(rng.standard_normal(10)), unit(rng.standard_normal(7)), 1.0)
        W = rank1_update(W, 2 / (t + 2), atom)
        assert numerical_rank(W) <= t + 1


def test_power_method_rank_one_exact():
    u, v = unit(np.arange(1.0, 5.0)), unit(np.array([1.0, -2.0, 0.5]))
    st_ = matrix_power_method(3.0 * np.outer(u, v), unit(np.ones(3)), 2)
    # the pair is only defined up to a joint sign
    np.testing.assert_allclose(np.outer(st_.u, st_.v), np.outer(u, v), atol=1e-14)
    assert st_.sigma == pytest.approx(3.0, rel=1e-14)


def test_power_method_matches_oracle_and_is_deterministic():
    rng = np.random.default_rng(3)
    G = rng.standard_normal((20, 15))
    v0 = unit_sphere_sample(15, 9)
    a = matrix_power_method(G, v0, 7)
    b = matrix_power_method(G, v0, 7)
    np.testing.assert_array_equal(a.u, b.u)
    u, v = serial_power(G, v0, 7)
    np.testing.assert_allclose(a.u, u, atol=1e-13)
    np.testing.assert_allclose(a.v, v, atol=1e-13)
    assert a.iterations_done == 7


def test_power_method_converges_to_top_singular_pair():
    rng = np.random.default_rng(4)
    G = rng.standard_normal((30, 20))
    s, u1, v1 = top_singular(G)
    st_ = power_method_until(G.dot, G.T.dot, unit_sphere_sample(20, 0), 1e-14, 5000)
    assert st_.sigma == pytest.approx(s[0], rel=1e-10)
    assert abs(abs(st_.u @ u1) - 1) < 1e-6
    assert abs(abs(st_.v @ v1) - 1) < 1e-6


def test_power_method_zero_operator():
    with pytest.raises(ZeroVectorError):
        matrix_power_method(np.zeros((3, 2)), unit(np.ones(2)), 2)
    with pytest.raises(ValueError):
        matrix_power_method(np.eye(2), unit(np.ones(2)), 0)


def test_svd_and_trace_norm():
    assert trace_norm(np.diag([3.0, 4.0])) == pytest.approx(7.0)
    u, v = unit(np.ones(4)), unit(np.array([1.0, 2.0]))
    assert trace_norm(2.5 * np.outer(u, v)) == pytest.approx(2.5)
    rng = np.random.default_rng(1)
    A = rng.standard_normal((9, 6))
    s, U, V = svd_oracle(A)
    assert np.all(np.diff(s) <= 0)
    assert np.linalg.norm((U * s) @ V.T - A) <= 1e-8 * np.linalg.norm(A)


def test_power_method_callable_interface():
    G = np.array([[2.0, 0.0], [0.0, 1.0]])
    st_ = power_method(lambda x: G @ x, lambda y: G.T @ y, unit(np.ones(2)), 60)
    assert abs(st_.v[0]) == pytest.approx(1.0, abs=1e-12)
