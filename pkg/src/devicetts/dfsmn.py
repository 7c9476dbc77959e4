"""DFSMN blocks: affine, low-rank projection, bidirectional memory filter, skip."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import tensor as T
from .layers import AffineParams, affine, init_affine
from .tensor import ShapeError, Tensor


@dataclass
class DfsmnBlockParams:
    affine: AffineParams  # D_in -> P1
    projection: AffineParams  # P1 -> P2
    lookback: Tensor  # [N1 + 1, P2], tap i weights frame t - i
    lookahead: Tensor  # [N2, P2], row j - 1 weights frame t + j
    activation: str = "relu"

    def __post_init__(self):
        p2 = self.projection.weight.shape[1]
        if self.affine.weight.shape[1] != self.projection.weight.shape[0]:
            raise ShapeError(
                f"dfsmn: affine {self.affine.weight.shape} does not feed "
                f"projection {self.projection.weight.shape}"
            )
        if self.lookback.ndim != 2 or self.lookback.shape[1] != p2 or self.lookback.shape[0] < 1:
            raise ShapeError(f"dfsmn: lookback filters {self.lookback.shape} vs P2={p2}")
        if self.lookahead.ndim != 2 or self.lookahead.shape[1] != p2:
            raise ShapeError(f"dfsmn: lookahead filters {self.lookahead.shape} vs P2={p2}")

    @property
    def d_in(self) -> int:
        return self.affine.weight.shape[0]

    @property
    def p2(self) -> int:
        return self.projection.weight.shape[1]

    @property
    def n1(self) -> int:
        return self.lookback.shape[0] - 1

    @property
    def n2(self) -> int:
        return self.lookahead.shape[0]

    @property
    def skip(self) -> bool:
        return self.d_in == self.p2

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.affine.tensors(f"{prefix}.affine")
        yield from self.projection.tensors(f"{prefix}.projection")
        yield f"{prefix}.lookback", self.lookback
        yield f"{prefix}.lookahead", self.lookahead


@dataclass
class DfsmnStack:
    blocks: list[DfsmnBlockParams]

    def __post_init__(self):
        for a, b in zip(self.blocks, self.blocks[1:]):
            if a.p2 != b.d_in:
                raise ShapeError(f"dfsmn stack: block output {a.p2} does not feed input {b.d_in}")

    def tensors(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for k, b in enumerate(self.blocks):
            yield from b.tensors(f"{prefix}.{k}")


def init_block(
    rng: np.random.Generator, d_in: int, p1: int, p2: int, n1: int, n2: int,
    activation: str = "relu",
) -> DfsmnBlockParams:
    taps = n1 + 1 + n2
    bound = np.sqrt(1.0 / taps)
    return DfsmnBlockParams(
        affine=init_affine(rng, d_in, p1),
        projection=init_affine(rng, p1, p2),
        lookback=T.parameter(rng.uniform(-bound, bound, size=(n1 + 1, p2))),
        lookahead=T.parameter(rng.uniform(-bound, bound, size=(n2, p2))),
        activation=activation,
    )


def init_stack(
    rng: np.random.Generator, d_in: int, n_blocks: int, p1: int, p2: int, n1: int, n2: int,
    activation: str = "relu",
) -> DfsmnStack:
    blocks = []
    for k in range(n_blocks):
        blocks.append(init_block(rng, d_in if k == 0 else p2, p1, p2, n1, n2, activation))
    return DfsmnStack(blocks)


def dfsmn_block(h_prev: Tensor, p: DfsmnBlockParams) -> Tensor:
    """One block over ``h_prev[T, D_in]``; returns ``[T, P2]``.

    The skip connection is added only when ``D_in == P2``.
    """
    if h_prev.ndim != 2 or h_prev.shape[0] < 1 or h_prev.shape[1] != p.d_in:
        raise ShapeError(f"dfsmn_block: input {h_prev.shape} does not match D_in={p.d_in}")
    hidden = affine(h_prev, p.affine, p.activation)
    proj = affine(hidden, p.projection)
    mem = T.fsmn_memory(proj, p.lookback, p.lookahead)
    return T.add(h_prev, mem) if p.skip else mem


def dfsmn_stack(x: Tensor, s: DfsmnStack) -> Tensor:
    if not s.blocks:
        raise ShapeError("dfsmn_stack: empty stack")
    for b in s.blocks:
        x = dfsmn_block(x, b)
    return x


def lookahead_frames(s: DfsmnStack | Sequence[DfsmnBlockParams]) -> int:
    """Future input frames that can reach output frame t (sum of look-ahead orders)."""
    blocks = s.blocks if isinstance(s, DfsmnStack) else s
    return sum(b.n2 for b in blocks)


def lookback_frames(s: DfsmnStack | Sequence[DfsmnBlockParams]) -> int:
    blocks = s.blocks if isinstance(s, DfsmnStack) else s
    return sum(b.n1 for b in blocks)
