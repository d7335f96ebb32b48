import math

import numpy as np
import pytest
from conftest import central_diff, rel_err
from hypothesis import given, settings
from hypothesis import strategies as st

from cvq.losses import codebook_loss_grad, commitment_grad, contrastive_loss, sample_negatives, straight_through, vq_loss
from cvq.numeric import Rng, pairwise_sq_dist


def test_vq_loss_zero_cases():
    x = np.arange(6.0).reshape(2, 3)
    z = np.ones((4, 2))
    out = vq_loss(x, x, z, z)
    assert out.reconstruction == 0 and out.codebook_term == 0 and out.commitment_term == 0


def test_vq_loss_mean_reduction_example():
    out = vq_loss(np.zeros(1), np.zeros(1), [[1.0, 0.0]], [[0.0, 0.0]], beta=0.25)
    assert out.codebook_term == pytest.approx(0.5)
    assert out.commitment_term == pytest.approx(0.125)
    assert out.total == pytest.approx(0.625)


@settings(max_examples=30)
@given(st.integers(0, 2**31), st.floats(0.01, 2.0))
def test_vq_loss_permutation_invariant_and_commitment_ratio(seed, beta):
    rng = np.random.default_rng(seed)
    x, xh = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    ze, zq = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    perm = rng.permutation(7)
    a = vq_loss(x, xh, ze, zq, beta)
    b = vq_loss(x, xh, ze[perm], zq[perm], beta)
    assert a.total == pytest.approx(b.total, rel=1e-12)
    assert a.commitment_term == pytest.approx(beta * a.codebook_term, rel=1e-15)


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_latent_term_gradients(metric):
    rng = np.random.default_rng(1)
    ze, zq = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    beta = 0.25
    fd_e = central_diff(lambda: vq_loss(0, 0, ze, zq, beta, metric).commitment_term, ze)
    assert rel_err(commitment_grad(ze, zq, beta, metric), fd_e) < 1e-4
    fd_q = central_diff(lambda: vq_loss(0, 0, ze, zq, beta, metric).codebook_term, zq)
    assert rel_err(codebook_loss_grad(ze, zq, metric), fd_q) < 1e-4


def test_straight_through():
    ze = np.array([[0.3, -1.2], [2.0, 0.5]])
    zq = np.array([[0.0, -1.0], [2.0, 1.0]])
    fwd, backward = straight_through(ze, zq)
    np.testing.assert_array_equal(fwd, zq)
    # L = sum z_q^2 -> dL/dz_q = 2 z_q, passed straight to z_e
    np.testing.assert_array_equal(backward(2 * fwd), 2 * zq)
    same, _ = straight_through(ze, ze)
    np.testing.assert_array_equal(same, ze)


def _instance(seed, K=4, n=12, d=3):
    rng = np.random.default_rng(seed)
    E, Z = rng.normal(size=(K, d)), rng.normal(size=(n, d))
    return E, Z, pairwise_sq_dist(Z, E)


def test_contrastive_symmetric_pair_is_ln2():
    E = np.array([[1.0, 0.0]])
    Z = np.array([[1.0, 0.0], [2.0, 0.0]])
    val, _ = contrastive_loss(E, Z, [[0.0], [1.0]], tau=0.1, n_neg=1, negatives=np.array([[1]]))
    assert val == pytest.approx(math.log(2), abs=1e-12)


def test_contrastive_perfect_separation_near_zero():
    E = np.array([[1.0, 0.0]])
    Z = np.array([[1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    val, _ = contrastive_loss(E, Z, [[0.0], [4.0], [4.0], [4.0]], tau=0.1, n_neg=3, rng=Rng(0))
    assert 0 <= val < 1e-7


def test_contrastive_equal_similarities():
    E = np.array([[0.0, 1.0], [1.0, 1.0]])
    Z = np.arange(1.0, 7.0)[:, None] * np.array([[1.0, 1.0]])
    D = pairwise_sq_dist(Z, E)
    val, _ = contrastive_loss(E, Z, D, tau=0.5, n_neg=4, rng=Rng(1))
    # every feature is parallel, so each entry sees identical similarities
    assert val == pytest.approx(math.log(5), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 2.0), st.integers(1, 6))
def test_contrastive_nonnegative(seed, tau, n_neg):
    E, Z, D = _instance(seed)
    val, grad = contrastive_loss(E, Z, D, tau=tau, n_neg=n_neg, rng=Rng(seed))
    assert val >= 0 and grad.shape == E.shape


@pytest.mark.parametrize("negatives_only", [False, True])
def test_contrastive_gradient_finite_differences(negatives_only):
    E, Z, D = _instance(7)
    negs = sample_negatives(D, D.argmin(axis=0), 5, Rng(3))
    _, grad = contrastive_loss(E, Z, D, tau=0.2, n_neg=5, negatives=negs, negatives_only=negatives_only)
    fd = central_diff(lambda: contrastive_loss(E, Z, D, tau=0.2, n_neg=5, negatives=negs,
                                               negatives_only=negatives_only)[0], E)
    assert rel_err(grad, fd) < 1e-4


def test_negatives_exclude_positive_and_are_distinct():
    E, Z, D = _instance(2, K=3, n=20)
    pos = D.argmin(axis=0)
    negs = sample_negatives(D, pos, 8, Rng(0))
    for k in range(3):
        assert pos[k] not in negs[k]
        assert len(set(negs[k].tolist())) == 8


def test_contrastive_argument_errors():
    E, Z, D = _instance(0)
    with pytest.raises(ValueError):
        contrastive_loss(E, Z, D, tau=0.0, rng=Rng(0))
    with pytest.raises(ValueError):
        contrastive_loss(E, Z, D, n_neg=12, rng=Rng(0))
    with pytest.raises(ValueError):
        contrastive_loss(E, Z, D.T, n_neg=2, rng=Rng(0))
