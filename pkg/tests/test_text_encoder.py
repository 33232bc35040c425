"""Text encoder: masking semantics, pooling, gradient correctness."""

import numpy as np
import pytest

from tpunet import tensor as T
from tpunet import text_encoder
from tpunet.gradcheck import grad_check
from tpunet.prompt import PAD_ID
from tpunet.text_encoder import TextEncoderError, encode_text, pad_mask_of, pool_text


@pytest.fixture
def params(rng):
    return text_encoder.make_params(rng, V=9, D=4, L=6)


def _pooled(ids, params):
    feats = encode_text(ids, params)
    return pool_text(feats, pad_mask_of(ids))


def test_output_shape(params):
    ids = np.array([[2, 3, 4, 0, 0, 0], [5, 6, 7, 8, 2, 3]])
    feats = encode_text(ids, params)
    assert feats.shape == (2, 6, 4)
    assert _pooled(ids, params).shape == (2, 4)


def test_pad_positions_are_invisible(params):
    """Pooled features must not change when the PAD embedding row changes.

    PAD keys carry zero attention weight and PAD outputs are excluded
    from pooling, so row 0 of the embedding table is dead weight.
    """
    ids = np.array([[2, 3, 4, 0, 0, 0]])
    base = _pooled(ids, params).data.copy()
    T.reset_tape()
    params["embed"].data[PAD_ID] += 100.0
    np.testing.assert_array_equal(_pooled(ids, params).data, base)


def test_pad_attention_weight_exactly_zero(params, rng):
    # probe the masked softmax directly through a minimal encoder pass
    ids = np.array([[2, 3, 0, 0, 0, 0]])
    x = T.embed_lookup(params["embed"], ids) + params["pos"]
    scores = T.matmul(T.matmul(x, params["wq"]),
                      T.transpose(T.matmul(x, params["wk"]), (0, 2, 1)))
    attn = T.softmax(scores, axis=-1, mask=pad_mask_of(ids)[:, None, :])
    assert np.all(attn.data[0, :, 2:] == 0.0)
    np.testing.assert_allclose(attn.data.sum(axis=-1), 1.0, atol=1e-12)


def test_pooling_is_mean_over_real_positions(params):
    ids = np.array([[2, 3, 4, 0, 0, 0]])
    feats = encode_text(ids, params)
    pooled = pool_text(feats, pad_mask_of(ids))
    np.testing.assert_allclose(
        pooled.data[0], feats.data[0, :3].mean(axis=0), atol=1e-15
    )


def test_all_pad_sample_rejected_by_pooling(params):
    ids = np.array([[0, 0, 0, 0, 0, 0]])
    feats = encode_text(ids, params)  # encoder itself survives via fallback
    assert np.all(np.isfinite(feats.data))
    with pytest.raises(TextEncoderError, match="all-PAD"):
        pool_text(feats, pad_mask_of(ids))


def test_id_range_checked(params):
    with pytest.raises(TextEncoderError):
        encode_text(np.array([[9, 0, 0, 0, 0, 0]]), params)
    with pytest.raises(TextEncoderError):
        encode_text(np.array([2, 3]), params)  # must be [B, L]


def test_gradients_flow_to_every_parameter(params):
    ids = np.array([[2, 3, 4, 0, 0, 0], [5, 6, 7, 8, 2, 0]])
    loss = T.reduce_sum(T.square(_pooled(ids, params)))
    T.backward(loss)
    for name, p in params.items():
        assert p.grad is not None, f"no grad for {name}"
        assert np.any(p.grad != 0.0), f"zero grad for {name}"


def test_gradcheck_full_encoder(params):
    ids = np.array([[2, 3, 4, 0, 0, 0]])
    names = list(params)

    def f():
        return T.reduce_sum(T.square(_pooled(ids, params)))

    report = grad_check(f, [params[n] for n in names], tol=1e-3, names=names)
    assert report.passed, report.summary()
