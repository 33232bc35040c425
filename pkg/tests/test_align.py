"""Contrastive alignment loss: closed-form oracles and training behavior."""

import math

import numpy as np
import pytest

from tpunet import align
from tpunet import tensor as T
from tpunet.align import AlignmentBatch, contrastive_loss, loss_i2t, loss_t2i
from tpunet.gradcheck import grad_check
from tpunet.optim import AdamState, adam_step
from tpunet.tensor import DomainError, Tensor


def _batch(img, txt, **kw):
    return AlignmentBatch(Tensor(np.asarray(img, float), requires_grad=True),
                          Tensor(np.asarray(txt, float), requires_grad=True), **kw)


def test_single_pair_loss_is_zero():
    b = _batch([[1.0, 0.0]], [[0.6, 0.8]], tau=1.0)
    assert loss_i2t(b).item() == pytest.approx(0.0, abs=1e-12)
    assert loss_t2i(b).item() == pytest.approx(0.0, abs=1e-12)


def test_identity_similarity_two_pairs_oracle():
    # S = I at tau=1: per-row softmax diag = e/(e+1), so loss = ln(1 + 1/e)
    b = _batch(np.eye(2), np.eye(2), tau=1.0)
    expected = math.log(1.0 + math.exp(-1.0))  # 0.313261...
    assert loss_i2t(b).item() == pytest.approx(0.31326, abs=1e-5)
    assert loss_i2t(b).item() == pytest.approx(expected, abs=1e-12)
    assert loss_t2i(b).item() == pytest.approx(expected, abs=1e-12)


def test_lambda_collapses_to_single_direction(rng):
    img, txt = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    full = contrastive_loss(_batch(img, txt, lam=1.0)).item()
    T.reset_tape()
    assert full == pytest.approx(loss_i2t(_batch(img, txt)).item(), abs=1e-12)
    T.reset_tape()
    zero = contrastive_loss(_batch(img, txt, lam=0.0)).item()
    T.reset_tape()
    assert zero == pytest.approx(loss_t2i(_batch(img, txt)).item(), abs=1e-12)


def test_lambda_interpolates(rng):
    img, txt = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    parts = []
    for lam in (1.0, 0.0, 0.3):
        parts.append(contrastive_loss(_batch(img, txt, lam=lam)).item())
        T.reset_tape()
    assert parts[2] == pytest.approx(0.3 * parts[0] + 0.7 * parts[1], abs=1e-12)


def test_sharper_temperature_lowers_loss_when_diagonal_wins():
    loose = contrastive_loss(_batch(np.eye(3), np.eye(3), tau=1.0)).item()
    T.reset_tape()
    sharp = contrastive_loss(_batch(np.eye(3), np.eye(3), tau=0.1)).item()
    assert sharp < loose


def test_symmetric_inputs_make_directions_agree(rng):
    v = rng.normal(size=(4, 6))
    b = _batch(v, v, tau=0.5)
    assert loss_i2t(b).item() == pytest.approx(loss_t2i(b).item(), abs=1e-12)


def test_similarity_matrix_is_cosine(rng):
    img = rng.normal(size=(3, 5))
    txt = rng.normal(size=(3, 5))
    S = align.similarity_matrix(_batch(img, txt)).data
    for i in range(3):
        for k in range(3):
            ref = img[i] @ txt[k] / (np.linalg.norm(img[i]) * np.linalg.norm(txt[k]))
            assert S[i, k] == pytest.approx(ref, abs=1e-12)
    assert np.all(np.abs(S) <= 1.0 + 1e-12)


def test_cosine_sim_endpoints():
    u = Tensor(np.array([1.0, 0.0]))
    assert align.cosine_sim(u, Tensor(np.array([2.0, 0.0]))).item() == pytest.approx(1.0)
    assert align.cosine_sim(u, Tensor(np.array([-3.0, 0.0]))).item() == pytest.approx(-1.0)
    assert align.cosine_sim(u, Tensor(np.array([0.0, 5.0]))).item() == pytest.approx(0.0)


def test_zero_vector_does_not_blow_up():
    u = Tensor(np.zeros(3))
    v = Tensor(np.ones(3))
    assert align.cosine_sim(u, v).item() == pytest.approx(0.0, abs=1e-6)


def test_pool_image_is_spatial_mean(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_allclose(
        align.pool_image(Tensor(x)).data, x.mean(axis=(2, 3)), atol=1e-15
    )


def test_batch_validation():
    with pytest.raises(DomainError):
        _batch(np.eye(2), np.eye(2), tau=0.0)
    with pytest.raises(DomainError):
        _batch(np.eye(2), np.eye(2), lam=1.5)


def test_gradcheck_contrastive(rng):
    img = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    txt = Tensor(rng.normal(size=(4, 5)), requires_grad=True)

    def f():
        return contrastive_loss(AlignmentBatch(img, txt, tau=0.5, lam=0.4))

    report = grad_check(f, [img, txt], names=["img", "txt"])
    assert report.passed, report.summary()


def test_alignment_separates_random_embeddings(rng):
    """200 Adam steps on the loss alone must pull matched pairs together.

    Separation = mean matched cosine minus mean mismatched cosine.
    """
    img = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    txt = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    params = {"img": img, "txt": txt}
    state = AdamState(params)

    def separation():
        S = align.similarity_matrix(AlignmentBatch(img, txt)).data
        off = S[~np.eye(4, dtype=bool)]
        return float(np.diag(S).mean() - off.mean())

    before = separation()
    T.reset_tape()
    for _ in range(200):
        loss = contrastive_loss(AlignmentBatch(img, txt))
        T.backward(loss)
        adam_step(params, state, lr=1e-2)
        img.zero_grad(), txt.zero_grad()
        T.reset_tape()
    after = separation()
    assert after - before >= 0.2, f"separation moved {before:.3f} -> {after:.3f}"
