"""The acoustic model: encoder, duration predictor, length regulator, decoder.

The decoder is either the mix-resolution pair (autoregressive multi-frame
LSTM network followed by a single-frame DFSMN refine network) or the
feedforward ablation where the LSTM network is swapped for DFSMN blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .config import PROFILE_TAGS, ModelConfig
from .dfsmn import (
    DfsmnStack, dfsmn_stack, init_stack, lookahead_frames, lookback_frames,
)
from .layers import (
    AffineParams, EmbeddingTable, LstmParams, PrenetParams, affine, bilstm, embed,
    init_affine, init_embedding, init_lstm, init_prenet, lstm, lstm_step, prenet,
    zero_state,
)
from .tensor import ShapeError, Tensor, scope


@dataclass
class PhonemeSequence:
    ids: np.ndarray
    gold_durations: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if self.gold_durations is not None:
            d = np.asarray(self.gold_durations, dtype=np.int64).reshape(-1)
            if d.shape != self.ids.shape:
                raise ValueError(f"{d.size} durations for {self.ids.size} symbols")
            if (d < 1).any():
                raise ValueError("gold durations must all be >= 1")
            self.gold_durations = d

    def __len__(self) -> int:
        return self.ids.size


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # [T, D] float32
    profile: str = "CUSTOM"

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {self.frames.shape}")
        expected = PROFILE_TAGS.get(self.frames.shape[1], "CUSTOM")
        if self.profile != expected:
            raise ValueError(
                f"profile {self.profile} does not match feature dim {self.frames.shape[1]}"
            )

    @classmethod
    def of(cls, frames) -> "FeatureMatrix":
        frames = np.asarray(frames, dtype=np.float32)
        return cls(frames, PROFILE_TAGS.get(frames.shape[1], "CUSTOM"))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class ModelParams:
    embedding: EmbeddingTable
    encoder: DfsmnStack
    duration: DfsmnStack
    duration_fwd: LstmParams
    duration_bwd: LstmParams
    duration_head: AffineParams
    refine: DfsmnStack
    refine_head: AffineParams
    # AR variant
    prenet: PrenetParams | None = None
    decoder_lstm: list[LstmParams] | None = None
    decoder_proj: AffineParams | None = None
    # non-AR variant
    nonar: DfsmnStack | None = None
    nonar_head: AffineParams | None = None

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        yield from self.embedding.tensors("embedding")
        yield from self.encoder.tensors("encoder")
        yield from self.duration.tensors("duration.dfsmn")
        yield from self.duration_fwd.tensors("duration.blstm_fwd")
        yield from self.duration_bwd.tensors("duration.blstm_bwd")
        yield from self.duration_head.tensors("duration.head")
        if self.prenet is not None:
            yield from self.prenet.tensors("decoder.prenet")
            for k, p in enumerate(self.decoder_lstm):
                yield from p.tensors(f"decoder.lstm.{k}")
            yield from self.decoder_proj.tensors("decoder.proj")
        if self.nonar is not None:
            yield from self.nonar.tensors("decoder.nonar")
            yield from self.nonar_head.tensors("decoder.nonar_head")
        yield from self.refine.tensors("refine")
        yield from self.refine_head.tensors("refine.head")


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    c = config
    act = c.dfsmn_activation
    emb = init_embedding(rng, c.vocab_size, c.embed_dim)
    enc = init_stack(rng, c.embed_dim, c.encoder.n_blocks, c.encoder.p1, c.encoder.p2,
                     c.encoder.n1, c.encoder.n2, act)
    lr_dim = c.encoder.p2
    dur = init_stack(rng, lr_dim, c.duration.n_blocks, c.duration.p1, c.duration.p2,
                     c.duration.n1, c.duration.n2, act)
    h = c.duration_blstm_hidden
    params = ModelParams(
        embedding=emb,
        encoder=enc,
        duration=dur,
        duration_fwd=init_lstm(rng, c.duration.p2, h),
        duration_bwd=init_lstm(rng, c.duration.p2, h),
        duration_head=init_affine(rng, 2 * h, 1),
        refine=None,
        refine_head=None,
    )
    D, r = c.feature_dim, c.frames_per_step
    if c.decoder_variant == "AR":
        params.prenet = init_prenet(rng, D, c.prenet_widths)
        lstms = []
        n_in = c.prenet_widths[1] + lr_dim
        for _ in range(c.lstm_layers):
            lstms.append(init_lstm(rng, n_in, c.lstm_hidden))
            n_in = c.lstm_hidden
        params.decoder_lstm = lstms
        params.decoder_proj = init_affine(rng, c.lstm_hidden, r * D)
    else:
        params.nonar = init_stack(rng, lr_dim, c.nonar.n_blocks, c.nonar.p1, c.nonar.p2,
                                  c.nonar.n1, c.nonar.n2, act)
        params.nonar_head = init_affine(rng, c.nonar.p2, D)
    params.refine = init_stack(rng, D, c.refine.n_blocks, c.refine.p1, c.refine.p2,
                               c.refine.n1, c.refine.n2, act)
    params.refine_head = init_affine(rng, c.refine.p2, D)
    return params


# ---------------------------------------------------------------------------
# duration handling


def regulate_durations(pred) -> np.ndarray:
    """Round half up, then clamp every duration to at least one frame."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.maximum(np.floor(pred + 0.5), 1).astype(np.int64)


def length_regulate(enc: Tensor, durations) -> Tensor:
    """Repeat encoder row i ``durations[i]`` times."""
    d = np.asarray(durations, dtype=np.int64).reshape(-1)
    if d.size != enc.shape[0]:
        raise ShapeError(f"length_regulate: {d.size} durations for {enc.shape[0]} encoder rows")
    if (d < 1).any():
        bad = int(np.nonzero(d < 1)[0][0])
        raise ValueError(f"length_regulate: duration {int(d[bad])} at position {bad} is not positive")
    return T.take(enc, np.repeat(np.arange(d.size), d))


def sample_positions(n_frames: int, r: int) -> np.ndarray:
    """LR frame consumed by each AR step: start of each r-frame group."""
    steps = math.ceil(n_frames / r)
    return np.minimum(np.arange(steps) * r, n_frames - 1)


def pad_to_steps(frames: np.ndarray, r: int) -> np.ndarray:
    """Edge-replicate rows up to a whole number of r-frame groups."""
    n = frames.shape[0]
    target = r * math.ceil(n / r)
    if target == n:
        return frames
    return np.concatenate([frames, np.repeat(frames[-1:], target - n, axis=0)], axis=0)


# ---------------------------------------------------------------------------


class DeviceTTS:
    """Parameters plus the forward computations that use them."""

    def __init__(self, config: ModelConfig, params: ModelParams | None = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(config, seed)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return list(self.params.named_tensors())

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.named_tensors()}

    @classmethod
    def from_state(cls, config: ModelConfig, state: dict[str, np.ndarray], dtype=np.float32):
        model = cls(config)
        names = {n for n, _ in model.named_tensors()}
        unknown = sorted(set(state) - names)
        if unknown:
            raise KeyError(f"unknown tensor name {unknown[0]!r}")
        missing = sorted(names - set(state))
        if missing:
            raise KeyError(f"missing tensor {missing[0]!r}")
        for name, t in model.named_tensors():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise ShapeError(f"tensor {name!r}: stored shape {arr.shape}, expected {t.shape}")
            t.data = arr.astype(dtype, copy=True)
            t.name = name
        return model

    def astype(self, dtype) -> "DeviceTTS":
        return DeviceTTS.from_state(self.config, self.state(), dtype)

    # -- front end --------------------------------------------------------

    def encode(self, ids) -> Tensor:
        ids = ids.ids if isinstance(ids, PhonemeSequence) else np.asarray(ids)
        if ids.size < 1:
            raise ValueError("cannot encode an empty symbol sequence")
        with scope("encoder"):
            return dfsmn_stack(embed(ids, self.params.embedding), self.params.encoder)

    def predict_durations(self, enc: Tensor) -> Tensor:
        """Non-negative real frame count per symbol, shape ``[Tp]``."""
        p = self.params
        with scope("duration"):
            h = dfsmn_stack(enc, p.duration)
            h = bilstm(h, p.duration_fwd, p.duration_bwd)
            d = affine(h, p.duration_head, "relu")
        return T.reshape(d, (enc.shape[0],))

    def front_end(self, seq: PhonemeSequence) -> tuple[Tensor, np.ndarray]:
        """Length-regulated encoder output and the integer durations used."""
        enc = self.encode(seq)
        if seq.gold_durations is not None:
            durations = seq.gold_durations
        else:
            durations = regulate_durations(self.predict_durations(enc).data)
        return length_regulate(enc, durations), durations

    # -- decoders ---------------------------------------------------------

    def ar_decode(
        self,
        lr: Tensor,
        teacher_frames=None,
        trace: list | None = None,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Coarse frames ``[r*ceil(T/r), D]`` from the recurrent multi-frame network.

        With ``teacher_frames`` the previous group's last frame comes from the
        targets and all steps are batched; otherwise the network runs on its
        own output one step at a time.
        """
        n = lr.shape[0]
        if n < 1:
            raise ShapeError("ar_decode: empty input")
        if teacher_frames is None:
            steps = self.ar_steps(lr, trace=trace)
            return T.concat(list(steps), axis=0)

        c, p = self.config, self.params
        r, D = c.frames_per_step, c.feature_dim
        teacher = teacher_frames if isinstance(teacher_frames, Tensor) else T.tensor(
            teacher_frames.frames if isinstance(teacher_frames, FeatureMatrix) else teacher_frames
        )
        if teacher.shape[0] < n:
            raise ShapeError(f"ar_decode: {teacher.shape[0]} teacher frames for {n} LR frames")
        pos = sample_positions(n, r)
        if trace is not None:
            trace.extend(int(i) for i in pos)
        S = pos.size
        go = T.tensor(np.zeros((1, D)))
        prev = go if S == 1 else T.concat(
            [go, T.take(teacher, np.arange(1, S) * r - 1)], axis=0
        )
        with scope("decoder_prenet"):
            x = prenet(prev, p.prenet, c.prenet_dropout, rng)
        x = T.concat([x, T.take(lr, pos)], axis=1)
        with scope("decoder_rnn"):
            for layer in p.decoder_lstm:
                x = lstm(x, layer)
        with scope("decoder_proj"):
            y = affine(x, p.decoder_proj)
        return T.reshape(y, (S * r, D))

    def ar_steps(self, lr: Tensor, trace: list | None = None) -> Iterator[Tensor]:
        """Free-running AR decoding, yielding one ``[r, D]`` group per step."""
        c, p = self.config, self.params
        r, D = c.frames_per_step, c.feature_dim
        states = [zero_state(layer.hidden) for layer in p.decoder_lstm]
        prev = T.tensor(np.zeros((1, D)))
        for s, i in enumerate(sample_positions(lr.shape[0], r)):
            if trace is not None:
                trace.append(int(i))
            with scope("decoder_prenet"):
                x = prenet(prev, p.prenet)
            x = T.concat([x, T.slice_(lr, int(i), int(i) + 1)], axis=1)
            with scope("decoder_rnn"):
                for k, layer in enumerate(p.decoder_lstm):
                    x, states[k] = lstm_step(x, states[k], layer)
            with scope("decoder_proj"):
                y = T.reshape(affine(x, p.decoder_proj), (r, D))
            prev = T.slice_(y, r - 1, r)
            yield y

    def nonar_decode(self, lr: Tensor) -> Tensor:
        """Coarse frames ``[T, D]`` from the feedforward DFSMN replacement."""
        if lr.shape[0] < 1:
            raise ShapeError("nonar_decode: empty input")
        with scope("nonar"):
            return affine(dfsmn_stack(lr, self.params.nonar), self.params.nonar_head)

    def decode_coarse(self, lr: Tensor, teacher_frames=None, rng=None) -> Tensor:
        if self.config.decoder_variant == "AR":
            return self.ar_decode(lr, teacher_frames, rng=rng)
        return self.nonar_decode(lr)

    def refine(self, coarse: Tensor) -> Tensor:
        """Single-frame prediction over the coarse frames; shape preserved."""
        if coarse.ndim != 2 or coarse.shape[0] < 1:
            raise ShapeError(f"refine: expected [T>=1, D], got {coarse.shape}")
        p = self.params
        with scope("refine"):
            y = affine(dfsmn_stack(coarse, p.refine), p.refine_head)
            if self.config.refine_residual:
                y = T.add(y, coarse)
        return y

    # -- synthesis --------------------------------------------------------

    def synthesize(self, seq: PhonemeSequence) -> FeatureMatrix:
        lr, durations = self.front_end(seq)
        n = int(durations.sum())
        coarse = self.decode_coarse(lr)
        refined = self.refine(coarse)
        return FeatureMatrix.of(refined.data[:n])

    @property
    def refine_lookahead(self) -> int:
        return lookahead_frames(self.params.refine)

    def synthesize_streaming(
        self, seq: PhonemeSequence, chunk_frames: int
    ) -> Iterator[FeatureMatrix]:
        """Yield refined frames in chunks of ``chunk_frames`` (last may be shorter).

        A frame is produced only once every coarse frame inside its refine
        receptive field exists.  Concatenated chunks equal :meth:`synthesize`.
        """
        if chunk_frames < 1:
            raise ValueError(f"chunk_frames must be >= 1, got {chunk_frames}")
        lr, durations = self.front_end(seq)
        n = int(durations.sum())
        ahead = self.refine_lookahead
        if self.config.decoder_variant == "AR":
            yield from self._stream_ar(lr, n, ahead, chunk_frames)
        else:
            yield from self._stream_nonar(lr, n, ahead, chunk_frames)

    def _refine_window(self, coarse: np.ndarray, e0: int, e1: int) -> FeatureMatrix:
        """Refined frames [e0, e1) from the available coarse frames."""
        p = self.params
        ws = max(0, e0 - lookback_frames(p.refine))
        we = min(coarse.shape[0], e1 + self.refine_lookahead)
        window = T.tensor(coarse[ws:we])
        with scope("refine"):
            h = T.slice_(dfsmn_stack(window, p.refine), e0 - ws, e1 - ws)
            y = affine(h, p.refine_head)
            if self.config.refine_residual:
                y = T.add(y, T.slice_(window, e0 - ws, e1 - ws))
        return FeatureMatrix.of(y.data)

    def _stream_ar(self, lr, n, ahead, chunk) -> Iterator[FeatureMatrix]:
        groups: list[np.ndarray] = []
        coarse = None
        emitted = 0
        steps = math.ceil(n / self.config.frames_per_step)
        for s, y in enumerate(self.ar_steps(lr)):
            groups.append(y.data)
            coarse = np.concatenate(groups, axis=0)
            final = s == steps - 1
            ready = n if final else min(n, max(0, coarse.shape[0] - ahead))
            while ready - emitted >= chunk or (final and emitted < n):
                e1 = min(emitted + chunk, n)
                yield self._refine_window(coarse, emitted, e1)
                emitted = e1

    def _stream_nonar(self, lr, n, ahead, chunk) -> Iterator[FeatureMatrix]:
        p = self.params
        back_n, ahead_n = lookback_frames(p.nonar), lookahead_frames(p.nonar)
        coarse = np.zeros((0, self.config.feature_dim), dtype=lr.data.dtype)
        for e0 in range(0, n, chunk):
            e1 = min(e0 + chunk, n)
            need = min(n, e1 + ahead)
            c0 = coarse.shape[0]
            if need > c0:
                ws, we = max(0, c0 - back_n), min(n, need + ahead_n)
                with scope("nonar"):
                    h = T.slice_(dfsmn_stack(T.slice_(lr, ws, we), p.nonar), c0 - ws, need - ws)
                    new = affine(h, p.nonar_head)
                coarse = np.concatenate([coarse, new.data], axis=0)
            yield self._refine_window(coarse, e0, e1)

    # -- training forward -------------------------------------------------

    def forward_train(self, seq: PhonemeSequence, target: np.ndarray, rng=None):
        """Teacher-forced pass with gold durations.

        Returns ``(coarse, refined, predicted_durations, padded_target)``; the
        AR variant's outputs and target span whole r-frame groups.
        """
        if seq.gold_durations is None:
            raise ValueError("training requires gold durations")
        enc = self.encode(seq)
        pred = self.predict_durations(enc)
        lr = length_regulate(enc, seq.gold_durations)
        if self.config.decoder_variant == "AR":
            coarse = self.ar_decode(lr, T.tensor(target), rng=rng)
            padded = pad_to_steps(np.asarray(target), self.config.frames_per_step)
        else:
            coarse = self.nonar_decode(lr)
            padded = np.asarray(target)
        refined = self.refine(coarse)
        return coarse, refined, pred, padded
