import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lbfgs_admm.lbfgs import (
    CURVATURE_GUARD, CurvaturePair, LbfgsMemory, curvature_ok, dense_hessian, dense_inverse, two_loop,
)


def random_pairs(rng, d, c):
    """Pairs from a random SPD curvature so every pair passes the guard."""
    A = rng.standard_normal((d, d))
    spd = A @ A.T + 0.5 * np.eye(d)
    pairs = []
    for _ in range(c):
        s = rng.standard_normal(d)
        pairs.append(CurvaturePair.from_vectors(s, spd @ s))
    return pairs


def test_single_pair_by_hand():
    # s = e1, q = 2 e1, seed I: V = I - rho q s' = diag(0, 1), H^-1 = V'V + rho s s' = diag(1/2, 1)
    p = CurvaturePair.from_vectors([1.0, 0.0], [2.0, 0.0])
    np.testing.assert_allclose(two_loop([p], np.array([1.0, 1.0]), 1.0), [0.5, 1.0])
    np.testing.assert_allclose(dense_hessian([p], 1.0, 2), np.diag([2.0, 1.0]))


def test_empty_memory_is_scaled_identity():
    h = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(two_loop([], h, 0.25), 0.25 * h)
    np.testing.assert_allclose(dense_hessian([], 0.25, 3), 4 * np.eye(3))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.integers(0, 8), st.integers(0, 2**31), st.floats(0.05, 20.0))
def test_two_loop_matches_dense_inverse(d, c, seed, scale):
    rng = np.random.default_rng(seed)
    pairs = random_pairs(rng, d, c)
    h = rng.standard_normal(d)
    dense = dense_inverse(pairs, scale, d) @ h
    np.testing.assert_allclose(two_loop(pairs, h, scale), dense, atol=1e-10 * max(1.0, np.abs(dense).max()))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 10), st.integers(1, 6), st.integers(0, 2**31))
def test_secant_and_inverse_consistency(d, c, seed):
    rng = np.random.default_rng(seed)
    pairs = random_pairs(rng, d, c)
    hinv = dense_inverse(pairs, 0.7, d)
    hess = dense_hessian(pairs, 0.7, d)
    newest = pairs[-1]
    np.testing.assert_allclose(hinv @ newest.q, newest.s, rtol=1e-8, atol=1e-8 * np.abs(newest.s).max())
    np.testing.assert_allclose(hess @ hinv, np.eye(d), atol=1e-6)
    np.testing.assert_allclose(hinv, hinv.T, atol=1e-8 * np.abs(hinv).max())
    assert np.linalg.eigvalsh(0.5 * (hinv + hinv.T)).min() > 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(0, 5), st.integers(0, 2**31), st.floats(-5, 5))
def test_two_loop_is_linear(d, c, seed, a):
    rng = np.random.default_rng(seed)
    pairs = random_pairs(rng, d, c)
    h = rng.standard_normal(d)
    np.testing.assert_allclose(two_loop(pairs, a * h, 1.3), a * two_loop(pairs, h, 1.3), atol=1e-10)


def test_guard_rejects_nonpositive_curvature():
    assert not curvature_ok(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert not curvature_ok(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    assert curvature_ok(np.array([1.0, 0.0]), np.array([1.0, 1e6]))
    # barely positive but below kappa * |s| |q|
    s, q = np.array([1.0, 0.0]), np.array([0.1 * CURVATURE_GUARD, 1.0])
    assert not curvature_ok(s, q)


def test_memory_evicts_oldest_and_counts_skips():
    mem = LbfgsMemory(2)
    for k in range(1, 4):
        assert mem.push(np.array([float(k), 0.0]), np.array([1.0, 0.0]))
    assert [p.s[0] for p in mem.pairs] == [2.0, 3.0]
    assert not mem.push(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert mem.skipped == 1 and len(mem) == 2


def test_zero_capacity_memory_keeps_nothing():
    mem = LbfgsMemory(0)
    assert mem.push(np.ones(2), np.ones(2))
    assert len(mem) == 0
    np.testing.assert_allclose(mem.two_loop(np.ones(2), 0.5), [0.5, 0.5])


def test_adaptive_scale_uses_newest_pair():
    mem = LbfgsMemory(3)
    assert mem.adaptive_scale(0.1) == 0.1
    mem.push(np.array([1.0, 0.0]), np.array([4.0, 0.0]))
    mem.push(np.array([0.0, 2.0]), np.array([0.0, 1.0]))
    assert mem.adaptive_scale(0.1) == pytest.approx(2.0)


def test_bad_inputs():
    with pytest.raises(ValueError):
        LbfgsMemory(-1)
    with pytest.raises(ValueError, match="shapes"):
        LbfgsMemory(1).push(np.ones(2), np.ones(3))
    with pytest.raises(ValueError, match="init_scale"):
        LbfgsMemory(1).two_loop(np.ones(2), 0.0)
