"""Embedding, affine, prenet and (bi)directional LSTM layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

ACTIVATIONS = {
    "none": lambda x: x,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh,
}


@dataclass
class AffineParams:
    weight: Tensor  # [in, out]
    bias: Tensor  # [out]

    def __post_init__(self):
        if self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"affine bias {self.bias.shape} does not match weight {self.weight.shape}"
            )

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class LstmParams:
    """Gates are packed in (input, forget, cell, output) order."""

    w_ih: Tensor  # [in, 4h]
    w_hh: Tensor  # [h, 4h]
    bias: Tensor  # [4h]

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[0]

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w_ih", self.w_ih
        yield f"{prefix}.w_hh", self.w_hh
        yield f"{prefix}.bias", self.bias


@dataclass
class PrenetParams:
    layer1: AffineParams
    layer2: AffineParams

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.layer1.tensors(f"{prefix}.layer1")
        yield from self.layer2.tensors(f"{prefix}.layer2")


@dataclass
class EmbeddingTable:
    table: Tensor  # [vocab, dim]

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.table", self.table


# ---------------------------------------------------------------------------
# initialisation


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_affine(rng: np.random.Generator, n_in: int, n_out: int) -> AffineParams:
    return AffineParams(
        T.parameter(_uniform(rng, (n_in, n_out), n_in)),
        T.parameter(np.zeros(n_out)),
    )


def init_lstm(rng: np.random.Generator, n_in: int, hidden: int) -> LstmParams:
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0
    return LstmParams(
        T.parameter(_uniform(rng, (n_in, 4 * hidden), n_in)),
        T.parameter(_uniform(rng, (hidden, 4 * hidden), hidden)),
        T.parameter(bias),
    )


def init_prenet(rng: np.random.Generator, n_in: int, widths: tuple[int, int]) -> PrenetParams:
    return PrenetParams(
        init_affine(rng, n_in, widths[0]),
        init_affine(rng, widths[0], widths[1]),
    )


def init_embedding(rng: np.random.Generator, vocab: int, dim: int) -> EmbeddingTable:
    return EmbeddingTable(T.parameter(_uniform(rng, (vocab, dim), vocab)))


# ---------------------------------------------------------------------------
# forward


def embed(ids, table: EmbeddingTable) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    vocab = table.table.shape[0]
    bad = np.nonzero((ids < 0) | (ids >= vocab))[0]
    if bad.size:
        p = int(bad[0])
        raise IndexError(f"symbol id {int(ids[p])} at position {p} outside vocabulary of {vocab}")
    return T.take(table.table, ids)


def affine(x: Tensor, p: AffineParams, activation: str = "none") -> Tensor:
    """``act(x W + b)`` with the bias broadcast over time."""
    if x.shape[-1] != p.weight.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not match weight {p.weight.shape}")
    return ACTIVATIONS[activation](T.add(T.matmul(x, p.weight), p.bias))


def prenet(
    x: Tensor,
    p: PrenetParams,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Two relu layers.  ``dropout`` is applied only when an ``rng`` is given."""
    h = affine(x, p.layer1, "relu")
    if dropout > 0 and rng is not None:
        h = T.mul(h, T.tensor((rng.random(h.shape) >= dropout) / (1 - dropout)))
    h = affine(h, p.layer2, "relu")
    if dropout > 0 and rng is not None:
        h = T.mul(h, T.tensor((rng.random(h.shape) >= dropout) / (1 - dropout)))
    return h


def _cell(gates: Tensor, c: Tensor, hidden: int) -> tuple[Tensor, Tensor]:
    i = T.sigmoid(T.slice_(gates, 0, hidden, axis=1))
    f = T.sigmoid(T.slice_(gates, hidden, 2 * hidden, axis=1))
    g = T.tanh(T.slice_(gates, 2 * hidden, 3 * hidden, axis=1))
    o = T.sigmoid(T.slice_(gates, 3 * hidden, 4 * hidden, axis=1))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def zero_state(hidden: int) -> tuple[Tensor, Tensor]:
    z = T.tensor(np.zeros((1, hidden)))
    return z, z


def lstm_step(
    x_t: Tensor, state: tuple[Tensor, Tensor], p: LstmParams
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """One LSTM update.  ``x_t`` and the state are ``[n]`` or ``[1, n]`` rows."""
    hidden = p.hidden
    h, c = state
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ShapeError(f"lstm_step: state {h.shape}/{c.shape} does not match hidden={hidden}")
    if x_t.shape[-1] != p.w_ih.shape[0]:
        raise ShapeError(f"lstm_step: input {x_t.shape} does not match w_ih {p.w_ih.shape}")
    flat = x_t.ndim == 1
    if flat:
        x_t = T.reshape(x_t, (1, x_t.shape[0]))
    if h.ndim == 1:
        h, c = T.reshape(h, (1, hidden)), T.reshape(c, (1, hidden))
    gates = T.add(T.add(T.matmul(x_t, p.w_ih), T.matmul(h, p.w_hh)), p.bias)
    h_new, c_new = _cell(gates, c, hidden)
    if flat:
        h_new, c_new = T.reshape(h_new, (hidden,)), T.reshape(c_new, (hidden,))
    return h_new, (h_new, c_new)


def lstm(x: Tensor, p: LstmParams, state: tuple[Tensor, Tensor] | None = None) -> Tensor:
    """Left-to-right LSTM over ``x[T, in]``; returns ``[T, hidden]``.

    The input projection is done for all frames at once; only the recurrent
    product is stepped.
    """
    if x.shape[1] != p.w_ih.shape[0]:
        raise ShapeError(f"lstm: input {x.shape} does not match w_ih {p.w_ih.shape}")
    hidden = p.hidden
    h, c = state if state is not None else zero_state(hidden)
    xw = T.matmul(x, p.w_ih)
    outs = []
    for t in range(x.shape[0]):
        gates = T.add(T.add(T.slice_(xw, t, t + 1), T.matmul(h, p.w_hh)), p.bias)
        h, c = _cell(gates, c, hidden)
        outs.append(h)
    return T.concat(outs, axis=0)


def bilstm(x: Tensor, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    """Forward and time-reversed passes concatenated per frame: ``[T, 2*hidden]``."""
    if x.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"bilstm: expected [T>=1, in], got {x.shape}")
    rev = np.arange(x.shape[0])[::-1]
    yf = lstm(x, fwd)
    yb = T.take(lstm(T.take(x, rev), bwd), rev)
    return T.concat([yf, yb], axis=1)
