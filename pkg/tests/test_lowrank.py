import math

import numpy as np
import pytest

from ppp_cpd.core.errors import DimensionMismatchError, DomainError, NumericalError
from ppp_cpd.engines.lowrank import (
    frobenius,
    operator_norm,
    rank_r_norms,
    restricted_svd_score,
    restricted_svd_scores,
    svd,
    trim_masks,
    trim_size,
    truncated_svd,
)


def test_truncated_svd_of_diagonal():
    D = np.diag([3.0, 2.0, 1.0])
    np.testing.assert_allclose(truncated_svd(D, 2), np.diag([3.0, 2.0, 0.0]), atol=1e-12)


def test_truncated_svd_full_rank_is_identity_map(rng):
    D = rng.normal(size=(6, 4))
    np.testing.assert_allclose(truncated_svd(D, 4), D, atol=1e-10 * frobenius(D))
    np.testing.assert_allclose(truncated_svd(D, 10), D, atol=1e-10 * frobenius(D))


def test_truncated_svd_rejects_rank_zero():
    with pytest.raises(DomainError):
        truncated_svd(np.eye(2), 0)


def test_singular_values_match_characteristic_polynomial(rng):
    u = rng.normal(size=3)
    v = rng.normal(size=2)
    D = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]) + 0.1 * np.outer(u, v)
    gram = D.T @ D
    # det(gram - t I) = t^2 - tr t + det
    roots = np.roots([1.0, -np.trace(gram), np.linalg.det(gram)])
    expected = np.sqrt(np.sort(roots.real)[::-1])
    np.testing.assert_allclose(svd(D).singular_values, expected, atol=1e-8)


def test_eckart_young_residual(rng):
    D = rng.normal(size=(8, 5))
    sigma = svd(D).singular_values
    for r in range(1, 5):
        residual = frobenius(D - truncated_svd(D, r))
        assert residual == pytest.approx(math.sqrt(np.sum(sigma[r:] ** 2)), rel=1e-10)


def test_weyl_perturbation_bound(rng):
    A = rng.normal(size=(6, 6))
    E = 0.01 * rng.normal(size=(6, 6))
    gap = np.abs(svd(A + E).singular_values - svd(A).singular_values)
    assert np.all(gap <= operator_norm(E) + 1e-12)


@pytest.mark.parametrize(
    "D,op,fro",
    [(np.eye(3), 1.0, math.sqrt(3.0)), (np.diag([3.0, 2.0, 1.0]), 3.0, math.sqrt(14.0))],
)
def test_norms(D, op, fro):
    assert operator_norm(D) == pytest.approx(op)
    assert frobenius(D) == pytest.approx(fro)


def test_rank_one_norms_coincide(rng):
    u = rng.normal(size=5)
    v = rng.normal(size=4)
    D = np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
    assert operator_norm(D) == pytest.approx(1.0, abs=1e-10)
    assert frobenius(D) == pytest.approx(1.0, abs=1e-10)


def test_non_finite_matrix_is_rejected():
    with pytest.raises(NumericalError):
        frobenius(np.array([[1.0, np.nan]]))


@pytest.mark.parametrize(
    "n2,r,gamma,pq_max,M,expected",
    [(64, 1, 2.0, 2, 10, 2), (500, 2, 2.0, 2, 10, 3), (10 ** 6, 1, 2.0, 2, 3, 3), (1, 1, 2.0, 2, 5, 1)],
)
def test_trim_size(n2, r, gamma, pq_max, M, expected):
    assert trim_size(n2, r, gamma, pq_max, M) == expected


def test_trim_masks_keep_small_multi_indices():
    rows, cols = trim_masks(3, 2, 1, 2)
    assert rows.tolist() == [True, True, False, True, True, False, False, False, False]
    assert cols.tolist() == [True, True, False]


def test_restricted_score_of_zero_matrix():
    assert restricted_svd_score(np.zeros((9, 3)), 1, 50, 2, 1, 2.0) == 0.0


def test_restricted_score_without_trimming_is_top_r_norm(rng):
    D = rng.normal(size=(4, 4))
    # n2 large enough that the cut reaches M = 2
    score = restricted_svd_score(D, 2, 10 ** 4, 2, 2, 2.0)
    sigma = svd(D).singular_values
    assert score == pytest.approx(math.sqrt(sigma[0] ** 2 + sigma[1] ** 2))


def test_restricted_score_only_sees_kept_block():
    D = np.zeros((9, 3))
    D[2, 2] = 100.0  # multi-index entries above the cut
    D[0, 0] = 1.0
    # m = ceil(64 ** (1 / 6)) = 2
    assert restricted_svd_score(D, 1, 64, 2, 1, 2.0) == pytest.approx(1.0)


def test_restricted_score_rejects_bad_shape():
    with pytest.raises(DimensionMismatchError):
        restricted_svd_score(np.zeros((5, 2)), 1, 10, 2, 1, 2.0)


def test_batched_scores_match_scalar(rng):
    stack = rng.normal(size=(12, 9, 3))
    n2s = np.arange(12, 0, -1) * 20
    batched = restricted_svd_scores(stack, 1, n2s, 2, 1, 2.0)
    scalar = [restricted_svd_score(stack[i], 1, int(n2s[i]), 2, 1, 2.0) for i in range(12)]
    np.testing.assert_allclose(batched, scalar, rtol=1e-10, atol=1e-12)


def test_batched_scores_reject_mismatched_lengths():
    with pytest.raises(DimensionMismatchError):
        restricted_svd_scores(np.zeros((3, 4, 2)), 1, [1, 2], 2, 1, 2.0)


def test_batched_scores_accept_leading_axes(rng):
    stack = rng.normal(size=(3, 5, 9, 3))
    n2s = [1, 8, 64, 300, 5000]
    batched = restricted_svd_scores(stack, 1, n2s, 2, 1, 2.0)
    assert batched.shape == (3, 5)
    for i in range(3):
        for k, n2 in enumerate(n2s):
            expected = restricted_svd_score(stack[i, k], 1, n2, 2, 1, 2.0)
            assert batched[i, k] == pytest.approx(expected, rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("shape", [(4, 2), (2, 4), (9, 3), (3, 9), (9, 9), (1, 5)])
@pytest.mark.parametrize("r", [1, 2])
def test_rank_r_norms_match_singular_values(shape, r, rng):
    blocks = rng.normal(size=(7,) + shape)
    expected = [math.sqrt(np.sum(svd(b).singular_values[:r] ** 2)) for b in blocks]
    np.testing.assert_allclose(rank_r_norms(blocks, r), expected, rtol=1e-10)


def test_rank_r_norms_of_zero_blocks():
    np.testing.assert_array_equal(rank_r_norms(np.zeros((3, 4, 2)), 1), np.zeros(3))
    np.testing.assert_array_equal(rank_r_norms(np.zeros((3, 9, 9)), 2), np.zeros(3))


def test_eckart_young_against_random_rank_one_candidates():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        D = rng.normal(size=(3, 3))
        best = frobenius(D - truncated_svd(D, 1))
        u = rng.normal(size=(10 ** 4, 3))
        v = rng.normal(size=(10 ** 4, 3))
        candidates = u[:, :, None] * v[:, None, :]
        assert best <= np.linalg.norm(D - candidates, axis=(1, 2)).min() + 1e-12


def test_mirsky_inequality():
    rng = np.random.default_rng(31)
    for _ in range(50):
        A = rng.normal(size=(5, 4))
        B = A + rng.uniform(0.01, 2.0) * rng.normal(size=(5, 4))
        gap = svd(A).singular_values - svd(B).singular_values
        assert np.sum(gap ** 2) <= frobenius(A - B) ** 2 + 1e-8


def test_truncation_error_bound_under_noise():
    rng = np.random.default_rng(47)
    for _ in range(50):
        r = int(rng.integers(1, 4))
        X = rng.normal(size=(6, r)) @ rng.normal(size=(r, 5)) + 0.05 * rng.normal(size=(6, 5))
        Z = rng.uniform(0.01, 1.0) * rng.normal(size=(6, 5))
        tail = math.sqrt(np.sum(svd(X).singular_values[r:] ** 2))
        bound = (2.0 + math.sqrt(2.0)) * (tail + math.sqrt(r) * operator_norm(Z))
        assert frobenius(truncated_svd(X + Z, r) - X) <= bound


def test_restricted_score_grows_with_the_kept_block():
    rng = np.random.default_rng(8)
    for _ in range(20):
        D = rng.normal(size=(9, 9))
        for r in (1, 2):
            # cuts m = 1, 2 and the full M = 3
            scores = [restricted_svd_score(D, r, n2, 2, 2, 2.0) for n2 in (r, 64 * r, 10 ** 6)]
            assert np.all(np.diff(scores) >= -1e-12)
