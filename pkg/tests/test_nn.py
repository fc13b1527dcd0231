import math

import numpy as np
import pytest

from src.core.errors import ConfigError, InvalidInputError, InvalidShapeError
from src.core.nn import (
    CharLMParams, EncoderParams, HeadParams, MainModel,
    charlm_nll, charlm_nll_batch, head_forward, lstm_encode, lstm_encode_batch, pad_batch,
)
from src.core.tensor import Tensor, grad_check, tsum

TOL = 1e-4
FLOOR = 1e-6


def _encoder(seed, vocab=7, d=3, embed=3):
    return EncoderParams(vocab, d, embed, rng=np.random.default_rng(seed))


@pytest.mark.parametrize("seed", range(100))
def test_encoder_gradients_through_padded_batch(seed):
    enc = _encoder(seed)
    w = np.random.default_rng(50 + seed).normal(size=(2, 3))
    seqs = [[1, 2, 3, 6], [4, 5]]
    err = grad_check(lambda: tsum(lstm_encode_batch(seqs, enc) * Tensor(w)), enc.parameters(), floor=FLOOR)
    assert err < TOL


@pytest.mark.parametrize("seed", range(100))
def test_head_gradients(seed, off_relu_kinks):
    rng = np.random.default_rng(seed)
    head = HeadParams(3, 2, hidden=4, rng=rng)
    r = Tensor(rng.normal(size=(5, 3)))
    off_relu_kinks(r, head)
    w = rng.normal(size=(5, 2))
    assert grad_check(lambda: tsum(head_forward(r, head) * Tensor(w)), head.parameters(), floor=FLOOR) < TOL


@pytest.mark.parametrize("seed", range(100))
def test_charlm_gradients_reach_generator_and_representation(seed):
    rng = np.random.default_rng(seed)
    gen = CharLMParams(6, 3, embed_dim=2, rng=rng)
    enc = _encoder(seed + 1000, vocab=5, embed=2)
    chars = [[2, 3, 4, 5, 2], [5, 2, 2, 4, 3]]

    def fn():
        r = lstm_encode_batch([[1, 2], [3]], enc)
        return charlm_nll_batch(chars, r, gen)

    assert grad_check(fn, gen.parameters() + enc.parameters(), floor=FLOOR) < TOL


def test_batched_encoding_matches_single_sequences():
    enc = _encoder(3, d=4)
    seqs = [[1, 2, 3], [4], [5, 6]]
    batch = lstm_encode_batch(seqs, enc).data
    for i, s in enumerate(seqs):
        np.testing.assert_allclose(batch[i], lstm_encode(s, enc).data, rtol=0, atol=1e-12)


def test_eval_mode_ignores_dropout_rate():
    enc = _encoder(4)
    seqs = [[1, 2, 3], [4, 5]]
    a = lstm_encode_batch(seqs, enc, dropout_rate=0.0).data
    b = lstm_encode_batch(seqs, enc, dropout_rate=0.9, train=False).data
    np.testing.assert_array_equal(a, b)


def test_uniform_generator_scores_c_log_v():
    vocab, d = 9, 4
    gen = CharLMParams(vocab, d, embed_dim=3, init="zeros")
    chars = [2, 5, 5, 8, 3]
    r = Tensor(np.random.default_rng(0).normal(size=d))
    assert charlm_nll(chars, r, gen).item() == pytest.approx(len(chars) * math.log(vocab), abs=1e-9)


def test_charlm_batch_sums_rows():
    gen = CharLMParams(6, 3, embed_dim=2, rng=np.random.default_rng(2))
    r = Tensor(np.random.default_rng(3).normal(size=(2, 3)))
    rows = [[2, 3, 4], [5]]
    total = charlm_nll_batch(rows, r, gen).item()
    parts = sum(charlm_nll(c, Tensor(r.data[i]), gen).item() for i, c in enumerate(rows))
    assert total == pytest.approx(parts, abs=1e-10)


def test_shape_and_input_errors():
    enc = _encoder(0)
    with pytest.raises(InvalidInputError):
        lstm_encode([], enc)
    with pytest.raises(InvalidInputError):
        pad_batch([])
    with pytest.raises(IndexError):
        lstm_encode([7], enc)
    head = HeadParams(4, 2, hidden=3, rng=np.random.default_rng(0))
    with pytest.raises(InvalidShapeError):
        head_forward(Tensor(np.zeros((2, 3))), head)
    gen = CharLMParams(5, 3, rng=np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        charlm_nll([], Tensor(np.zeros(3)), gen)
    with pytest.raises(ConfigError):
        EncoderParams(5, 3, init="orthogonal", rng=np.random.default_rng(0))


def test_pad_batch_masks():
    ids, mask = pad_batch([[3, 4, 5], [6]])
    np.testing.assert_array_equal(ids, [[3, 4, 5], [6, 0, 0]])
    np.testing.assert_array_equal(mask, [[1, 1, 1], [1, 0, 0]])


def test_state_dict_round_trip_and_shape_check():
    a = MainModel(10, 3, 4, embed_dim=5, hidden=6, rng=np.random.default_rng(0))
    b = MainModel(10, 3, 4, embed_dim=5, hidden=6, init="zeros")
    b.load_state_dict(a.state_dict())
    for name, arr in a.state_dict().items():
        np.testing.assert_array_equal(arr, b.state_dict()[name])
    seqs = [[1, 2], [3]]
    np.testing.assert_array_equal(a.logits(a.represent(seqs)).data, b.logits(b.represent(seqs)).data)
    c = MainModel(10, 3, 5, embed_dim=5, hidden=6, init="zeros")
    with pytest.raises(InvalidShapeError):
        c.load_state_dict(a.state_dict())


def test_parameter_names_are_prefixed_and_unique():
    model = MainModel(10, 3, 4, rng=np.random.default_rng(0))
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names))
    assert all(n.startswith(("encoder.", "head.")) for n in names)


def test_zero_parameters_encode_to_zero_and_score_uniformly():
    enc = EncoderParams(5, 8, embed_dim=4, init="zeros")
    np.testing.assert_array_equal(lstm_encode([3], enc).data, np.zeros(8))
    head = HeadParams(8, 3, hidden=4, init="zeros")
    np.testing.assert_array_equal(head_forward(Tensor(np.zeros(8)), head).data, np.zeros(3))
    gen = CharLMParams(4, 8, embed_dim=2, init="zeros")
    assert charlm_nll([2, 3], Tensor(np.zeros(8)), gen).item() == pytest.approx(2 * math.log(4), abs=1e-12)


def test_charlm_loss_grows_with_the_string():
    gen = CharLMParams(6, 3, embed_dim=2, rng=np.random.default_rng(11))
    r = Tensor(np.random.default_rng(12).normal(size=3))
    chars = [2, 4, 3, 5, 2]
    losses = [charlm_nll(chars[:k], r, gen).item() for k in range(1, len(chars) + 1)]
    assert all(b >= a for a, b in zip(losses, losses[1:]))
