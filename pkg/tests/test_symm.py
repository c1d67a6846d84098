from itertools import combinations, permutations
from math import comb, prod

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow import symm

from conftest import cone_samples


def brute_e(lam, j):
    return sum(prod(c) for c in combinations(lam, j)) if j else 1.0


def test_e0_is_one():
    assert symm.elementary_sym([3.0, -1.0, 2.0], 0) == 1.0


def test_e2_of_123():
    assert symm.elementary_sym([1, 2, 3], 2) == pytest.approx(brute_e([1, 2, 3], 2)) == pytest.approx(11)


def test_e3_constant_vector():
    assert symm.elementary_sym([2, 2, 2], 3) == pytest.approx(8)


def test_index_out_of_range():
    with pytest.raises(ValueError):
        symm.elementary_sym([1.0, 2.0], 3)
    with pytest.raises(ValueError):
        symm.sigma([1.0, 2.0], -1)
    with pytest.raises(ValueError):
        symm.sigma_gradient([1.0, 2.0], 0)


@pytest.mark.parametrize("n", range(1, 7))
def test_recurrence_matches_subset_enumeration(n, rng):
    lam = rng.normal(size=n)
    e = symm.elementary_all(lam)
    for j in range(n + 1):
        assert e[j] == pytest.approx(brute_e(lam, j), rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("n,k", [(1, 1), (3, 2), (4, 4), (5, 3)])
def test_sigma_of_scaled_identity(n, k):
    assert symm.sigma(np.full(n, 1.7), k) == pytest.approx(1.7**k)


def test_sigma1_is_mean(rng):
    lam = rng.normal(size=5)
    assert symm.sigma(lam, 1) == pytest.approx(lam.mean())


def test_sigma2_of_123():
    assert symm.sigma([1, 2, 3], 2) == pytest.approx(11 / 3)


def test_gradient_examples():
    np.testing.assert_allclose(symm.sigma_gradient([1.0, 2.0, 3.0, 4.0], 1), np.full(4, 0.25))
    np.testing.assert_allclose(symm.sigma_gradient(np.ones(4), 4), np.ones(4))
    np.testing.assert_allclose(symm.sigma_gradient([1, 2, 3], 2), [5 / 3, 4 / 3, 3 / 3])


def test_in_cone_examples():
    assert symm.in_cone([1, 1, 1], 2)
    assert symm.in_cone([3, 3, -1], 2)
    assert not symm.in_cone([5, -1, -1], 2)
    with pytest.raises(ValueError):
        symm.in_cone([1, 1], 1, margin=-1.0)


def test_sort_desc():
    np.testing.assert_array_equal(symm.sort_desc([1, 3, 2]), [3, 2, 1])


def test_batched_shapes(rng):
    lam = rng.normal(size=(4, 5, 3))
    assert symm.sigmas(lam).shape == (4, 5, 4)
    assert symm.sigma_jacobian(lam).shape == (4, 5, 4, 3)


lam_strategy = st.integers(1, 6).flatmap(
    lambda n: st.lists(st.floats(-3, 3, allow_nan=False), min_size=n, max_size=n))


@given(lam_strategy, st.randoms(use_true_random=False))
def test_permutation_invariance(lam, r):
    lam = np.array(lam)
    perm = list(range(len(lam)))
    r.shuffle(perm)
    np.testing.assert_allclose(symm.sigmas(lam[perm]), symm.sigmas(lam), rtol=1e-12, atol=1e-12)


@given(lam_strategy)
def test_gradient_matches_central_differences(lam):
    lam = np.array(lam)
    n = lam.size
    h = 1e-6
    for j in range(1, n + 1):
        g = symm.sigma_gradient(lam, j)
        fd = np.array([(symm.sigma(lam + h * e, j) - symm.sigma(lam - h * e, j)) / (2 * h)
                       for e in np.eye(n)])
        scale = max(1.0, np.abs(g).max())
        assert np.abs(g - fd).max() <= 1e-7 * scale


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_cone_nesting(n, seed):
    lam = np.random.default_rng(seed).uniform(0.01, 3, size=n)
    assert all(symm.in_cone(lam, k) for k in range(1, n + 1))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_maclaurin(n, rng):
    for k in range(1, n + 1):
        lam = cone_samples(rng, n, k, 300)
        s = symm.sigmas(lam)
        for ell in range(1, k + 1):
            lhs = s[:, k] ** (1 / k)
            rhs = s[:, ell] ** (1 / ell)
            assert np.all(lhs <= rhs * (1 + 1e-12))


def test_small_permutation_exhaustive():
    lam = np.array([0.3, -1.2, 2.5, 0.7])
    ref = symm.sigmas(lam)
    for p in permutations(range(4)):
        np.testing.assert_allclose(symm.sigmas(lam[list(p)]), ref, rtol=1e-13)
    assert ref[2] == pytest.approx(brute_e(lam, 2) / comb(4, 2))
