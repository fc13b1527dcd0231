# nn.py: embedding + LSTM encoder, feedforward heads, character LM
from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InvalidInputError, InvalidShapeError
from .tensor import (
    Parameter, Tensor, DEFAULT_DTYPE,
    dropout, embedding, getitem, log_softmax, relu, sigmoid, tanh, tsum,
)

GRID_DIMS = (8, 16, 32, 64, 128)
EMBED_DIM = 32
HEAD_HIDDEN = 64
INIT_SCHEMES = ("glorot", "zeros")


def glorot(rng: np.random.Generator, shape: Tuple[int, int], dtype=DEFAULT_DTYPE) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Named parameter container; names are `<prefix>.<key>` and unique."""

    def __init__(self, prefix: str, dtype=DEFAULT_DTYPE):
        self.prefix = prefix
        self.dtype = np.dtype(dtype)
        self._params: Dict[str, Parameter] = {}

    def _add(self, key: str, data: np.ndarray) -> Parameter:
        name = f"{self.prefix}.{key}"
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data, dtype=self.dtype)
        self._params[name] = p
        return p

    def _weight(self, key: str, shape: Tuple[int, int], rng: Optional[np.random.Generator], init: str) -> Parameter:
        if init not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {init!r}")
        if init == "zeros" or rng is None:
            return self._add(key, np.zeros(shape, dtype=self.dtype))
        return self._add(key, glorot(rng, shape, self.dtype))

    def _bias(self, key: str, size: int) -> Parameter:
        return self._add(key, np.zeros(size, dtype=self.dtype))

    def parameters(self) -> List[Parameter]:
        return list(self._params.values())

    def named_parameters(self) -> Dict[str, Parameter]:
        return dict(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            if name not in state:
                raise InvalidShapeError(f"missing parameter {name!r} in state")
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise InvalidShapeError(f"{name}: shape {arr.shape} != {p.shape}")
            p.data = np.array(arr, dtype=p.dtype)
            p.zero_grad()


# ---------------- parameter groups ---------------- #
class EncoderParams(Module):
    """Word embedding table + single-layer LSTM; houses the representation parameters."""

    def __init__(self, vocab_size: int, d: int, embed_dim: int = EMBED_DIM,
                 rng: Optional[np.random.Generator] = None, init: str = "glorot",
                 dtype=DEFAULT_DTYPE, prefix: str = "encoder"):
        super().__init__(prefix, dtype)
        if vocab_size < 1 or d < 1 or embed_dim < 1:
            raise ConfigError("encoder sizes must be positive")
        self.vocab_size, self.d, self.embed_dim = vocab_size, d, embed_dim
        self.embedding = self._weight("embedding", (vocab_size, embed_dim), rng, init)
        self.w_x = self._weight("w_x", (embed_dim, 4 * d), rng, init)
        self.w_h = self._weight("w_h", (d, 4 * d), rng, init)
        self.b = self._bias("b", 4 * d)


class HeadParams(Module):
    """One ReLU hidden layer then a linear output layer."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int = HEAD_HIDDEN,
                 rng: Optional[np.random.Generator] = None, init: str = "glorot",
                 dtype=DEFAULT_DTYPE, prefix: str = "head"):
        super().__init__(prefix, dtype)
        if in_dim < 1 or out_dim < 1 or hidden < 1:
            raise ConfigError("head sizes must be positive")
        self.in_dim, self.out_dim, self.hidden = in_dim, out_dim, hidden
        self.w1 = self._weight("w1", (in_dim, hidden), rng, init)
        self.b1 = self._bias("b1", hidden)
        self.w2 = self._weight("w2", (hidden, out_dim), rng, init)
        self.b2 = self._bias("b2", out_dim)


class CharLMParams(Module):
    """Character LSTM generator whose hidden size matches the encoder output."""

    def __init__(self, vocab_size: int, d: int, embed_dim: int = EMBED_DIM, bos_id: int = 1,
                 rng: Optional[np.random.Generator] = None, init: str = "glorot",
                 dtype=DEFAULT_DTYPE, prefix: str = "charlm"):
        super().__init__(prefix, dtype)
        if not 0 <= bos_id < vocab_size:
            raise ConfigError(f"bos id {bos_id} outside char vocabulary of size {vocab_size}")
        self.vocab_size, self.d, self.embed_dim, self.bos_id = vocab_size, d, embed_dim, bos_id
        self.embedding = self._weight("embedding", (vocab_size, embed_dim), rng, init)
        self.w_x = self._weight("w_x", (embed_dim, 4 * d), rng, init)
        self.w_h = self._weight("w_h", (d, 4 * d), rng, init)
        self.b = self._bias("b", 4 * d)
        self.w_out = self._weight("w_out", (d, vocab_size), rng, init)
        self.b_out = self._bias("b_out", vocab_size)


# ---------------- forward ops ---------------- #
def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids (B, T), mask (B, T))."""
    if not seqs:
        raise InvalidInputError("empty batch")
    lengths = [len(s) for s in seqs]
    if min(lengths) == 0:
        raise InvalidInputError("empty sequence")
    T = max(lengths)
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = 1.0
    return ids, mask


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor) -> Tuple[Tensor, Tensor]:
    # gate order: input, forget, candidate, output
    d = h.shape[-1]
    z = x @ w_x + h @ w_h + b
    i = sigmoid(getitem(z, (Ellipsis, slice(0, d))))
    f = sigmoid(getitem(z, (Ellipsis, slice(d, 2 * d))))
    g = tanh(getitem(z, (Ellipsis, slice(2 * d, 3 * d))))
    o = sigmoid(getitem(z, (Ellipsis, slice(3 * d, 4 * d))))
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, c_new


def lstm_encode_batch(seqs: Sequence[Sequence[int]], params: EncoderParams, dropout_rate: float = 0.0,
                      train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Final hidden state of each sequence, shape (B, d); dropout hits the LSTM inputs."""
    ids, mask = pad_batch(seqs)
    if ids.max() >= params.vocab_size:
        raise IndexError(f"token id {int(ids.max())} outside vocabulary of size {params.vocab_size}")
    B, T = ids.shape
    h = Tensor(np.zeros((B, params.d), dtype=params.dtype))
    c = Tensor(np.zeros((B, params.d), dtype=params.dtype))
    for t in range(T):
        x = embedding(params.embedding, ids[:, t])
        x = dropout(x, dropout_rate, rng, train)
        h_new, c_new = lstm_step(x, h, c, params.w_x, params.w_h, params.b)
        m = mask[:, t:t + 1]
        if m.all():
            h, c = h_new, c_new
        else:
            keep = Tensor(m.astype(params.dtype))
            h = h_new * keep + h * (1.0 - keep)
            c = c_new * keep + c * (1.0 - keep)
    return h


def lstm_encode(token_ids: Sequence[int], params: EncoderParams, dropout_rate: float = 0.0,
                train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    if len(token_ids) == 0:
        raise InvalidInputError("cannot encode an empty sequence")
    r = lstm_encode_batch([list(token_ids)], params, dropout_rate, train, rng)
    return r.reshape(params.d)


def head_forward(r: Tensor, params: HeadParams) -> Tensor:
    if r.shape[-1] != params.in_dim:
        raise InvalidShapeError(f"head expects width {params.in_dim}, got {r.shape[-1]}")
    return relu(r @ params.w1 + params.b1) @ params.w2 + params.b2


def charlm_nll_batch(char_seqs: Sequence[Sequence[int]], r: Tensor, params: CharLMParams) -> Tensor:
    """Teacher-forced NLL summed over rows and characters; h0 = r, c0 = 0, BOS precedes x_1."""
    if r.ndim != 2 or r.shape != (len(char_seqs), params.d):
        raise InvalidShapeError(f"charlm expects r of shape ({len(char_seqs)}, {params.d}), got {r.shape}")
    for s in char_seqs:
        if len(s) == 0:
            raise InvalidInputError("cannot score an empty character sequence")
    inputs = [[params.bos_id] + list(s[:-1]) for s in char_seqs]
    ids_in, mask = pad_batch(inputs)
    ids_tg, _ = pad_batch([list(s) for s in char_seqs])
    if max(ids_in.max(), ids_tg.max()) >= params.vocab_size:
        raise IndexError(f"char id outside vocabulary of size {params.vocab_size}")
    B, T = ids_in.shape
    rows = np.arange(B)
    h = r
    c = Tensor(np.zeros((B, params.d), dtype=params.dtype))
    total: Optional[Tensor] = None
    for t in range(T):
        x = embedding(params.embedding, ids_in[:, t])
        h, c = lstm_step(x, h, c, params.w_x, params.w_h, params.b)
        logp = log_softmax(h @ params.w_out + params.b_out)
        picked = getitem(logp, (rows, ids_tg[:, t]))
        step = tsum(picked * Tensor(mask[:, t].astype(params.dtype)))
        total = step if total is None else total + step
    return -total


def charlm_nll(chars: Sequence[int], r: Tensor, params: CharLMParams) -> Tensor:
    if len(chars) == 0:
        raise InvalidInputError("cannot score an empty character sequence")
    if r.shape != (params.d,):
        raise InvalidShapeError(f"charlm expects r of length {params.d}, got {r.shape}")
    return charlm_nll_batch([list(chars)], r.reshape(1, params.d), params)


# ---------------- models ---------------- #
class MainModel:
    """Encoder (representation) + softmax head (prediction)."""

    def __init__(self, vocab_size: int, n_classes: int, d: int, embed_dim: int = EMBED_DIM,
                 hidden: int = HEAD_HIDDEN, rng: Optional[np.random.Generator] = None,
                 init: str = "glorot", dtype=DEFAULT_DTYPE):
        self.encoder = EncoderParams(vocab_size, d, embed_dim, rng=rng, init=init, dtype=dtype)
        self.head = HeadParams(d, n_classes, hidden, rng=rng, init=init, dtype=dtype, prefix="head")

    @property
    def d(self) -> int:
        return self.encoder.d

    def parameters(self) -> List[Parameter]:
        return self.encoder.parameters() + self.head.parameters()

    def zero_grad(self) -> None:
        self.encoder.zero_grad()
        self.head.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {**self.encoder.state_dict(), **self.head.state_dict()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        self.encoder.load_state_dict(state)
        self.head.load_state_dict(state)

    def represent(self, seqs: Sequence[Sequence[int]], dropout_rate: float = 0.0,
                  train: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
        return lstm_encode_batch(seqs, self.encoder, dropout_rate, train, rng)

    def logits(self, r: Tensor) -> Tensor:
        return head_forward(r, self.head)
