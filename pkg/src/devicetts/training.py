"""Joint loss, Adam with warmup, teacher-forced training, toy corpus."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .model import DeviceTTS, PhonemeSequence
from .tensor import Graph, ShapeError, Tensor

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name!r}")
        self.name = name


class DivergenceError(FloatingPointError):
    def __init__(self, step: int):
        super().__init__(f"loss became non-finite at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-9
    peak_lr: float = 0.002
    warmup_steps: int = 4000
    max_steps: int = 1000
    seed: int = 0
    coarse_loss_weight: float = 1.0
    refined_loss_weight: float = 1.0
    log_every: int = 50

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if min(self.coarse_loss_weight, self.refined_loss_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.coarse_loss_weight == 0 and self.refined_loss_weight == 0:
            raise ValueError("coarse and refined loss weights cannot both be zero")


@dataclass
class TrainingExample:
    phonemes: PhonemeSequence
    target: np.ndarray  # [T, D]

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float32)
        d = self.phonemes.gold_durations
        if d is None:
            raise ValueError("training examples need gold durations")
        if int(d.sum()) != self.target.shape[0]:
            raise ValueError(
                f"durations sum to {int(d.sum())} but target has {self.target.shape[0]} frames"
            )


# ---------------------------------------------------------------------------
# losses


def mae(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mae: shapes {a.shape} and {b.shape} differ")
    return T.mean(T.abs_(T.sub(a, b)))


def total_loss(
    coarse: Tensor,
    refined: Tensor,
    target_padded,
    pred_dur: Tensor,
    gold_dur,
    cfg: TrainConfig | None = None,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted coarse and refined feature MAE plus duration MAE (linear frames)."""
    cfg = cfg or TrainConfig()
    target = target_padded if isinstance(target_padded, Tensor) else T.tensor(target_padded)
    gold = gold_dur if isinstance(gold_dur, Tensor) else T.tensor(np.asarray(gold_dur))
    lc = mae(coarse, target)
    lr = mae(refined, target)
    ld = mae(pred_dur, gold)
    total = T.add(T.add(T.scale(lc, cfg.coarse_loss_weight), T.scale(lr, cfg.refined_loss_weight)), ld)
    return total, {"aco_coarse": lc.item(), "aco_refined": lr.item(), "dur": ld.item()}


def batch_loss(model: DeviceTTS, batch: Sequence[TrainingExample], cfg: TrainConfig, rng=None):
    """Loss over several utterances, weighted per element as masked padding would be."""
    sums = {"coarse": [], "refined": [], "dur": []}
    n_frames = n_dur = 0
    for ex in batch:
        coarse, refined, pred, padded = model.forward_train(ex.phonemes, ex.target, rng=rng)
        target = T.tensor(padded)
        sums["coarse"].append(T.sum_(T.abs_(T.sub(coarse, target))))
        sums["refined"].append(T.sum_(T.abs_(T.sub(refined, target))))
        gold = T.tensor(ex.phonemes.gold_durations.astype(np.float64))
        sums["dur"].append(T.sum_(T.abs_(T.sub(pred, gold))))
        n_frames += padded.size
        n_dur += len(ex.phonemes)

    def avg(parts, n):
        acc = parts[0]
        for p in parts[1:]:
            acc = T.add(acc, p)
        return T.scale(acc, 1.0 / n)

    lc, lr, ld = avg(sums["coarse"], n_frames), avg(sums["refined"], n_frames), avg(sums["dur"], n_dur)
    total = T.add(T.add(T.scale(lc, cfg.coarse_loss_weight), T.scale(lr, cfg.refined_loss_weight)), ld)
    return total, {"aco_coarse": lc.item(), "aco_refined": lr.item(), "dur": ld.item()}


# ---------------------------------------------------------------------------
# optimisation


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``peak_lr`` at ``warmup_steps``, then inverse-sqrt decay."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    w = cfg.warmup_steps
    return cfg.peak_lr * min(step / w, math.sqrt(w / step))


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    named_params: Sequence[tuple[str, Tensor]],
    grads: Sequence[np.ndarray],
    state: AdamState,
    step: int,
    cfg: TrainConfig,
) -> None:
    """In-place bias-corrected Adam update; rejects the whole step on a non-finite gradient."""
    for (name, _), g in zip(named_params, grads):
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)
    lr = lr_schedule(step, cfg)
    b1, b2 = cfg.beta1, cfg.beta2
    c1, c2 = 1 - b1**step, 1 - b2**step
    for (name, p), g in zip(named_params, grads):
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class LossRecord:
    step: int
    lr: float
    total: float
    aco_coarse: float
    aco_refined: float
    dur: float


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for k in range(0, n, batch_size):
            yield order[k : k + batch_size]


def train(
    dataset: Sequence[TrainingExample],
    model: DeviceTTS,
    cfg: TrainConfig,
    callback: Callable[[LossRecord], None] | None = None,
) -> list[LossRecord]:
    """Teacher-forced training on gold durations; updates ``model`` in place."""
    if not dataset:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1) if model.config.prenet_dropout > 0 else None
    named = model.named_tensors()
    params = [t for _, t in named]
    state = AdamState()
    curve: list[LossRecord] = []
    batches = _batches(len(dataset), min(cfg.batch_size, len(dataset)), rng)
    for step in range(1, cfg.max_steps + 1):
        batch = [dataset[i] for i in next(batches)]
        with Graph() as g:
            loss, parts = batch_loss(model, batch, cfg, dropout_rng)
        total = loss.item()
        if not math.isfinite(total):
            raise DivergenceError(step)
        grads = g.backward(loss, params)
        adam_step(named, grads, state, step, cfg)
        rec = LossRecord(step, lr_schedule(step, cfg), total, **parts)
        curve.append(rec)
        if callback is not None:
            callback(rec)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d lr %.3g loss %.4f", step, rec.lr, total)
    return curve


def write_curve(curve: Sequence[LossRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["step", "lr", "total", "aco_coarse", "aco_refined", "dur"])
        for r in curve:
            w.writerow([r.step, repr(r.lr), repr(r.total), repr(r.aco_coarse),
                        repr(r.aco_refined), repr(r.dur)])


def read_curve(path: str | Path) -> list[LossRecord]:
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    return [
        LossRecord(int(r["step"]), float(r["lr"]), float(r["total"]), float(r["aco_coarse"]),
                   float(r["aco_refined"]), float(r["dur"]))
        for r in rows
    ]


# ---------------------------------------------------------------------------
# toy data


def make_toy_corpus(
    seed: int,
    n_utts: int,
    vocab: int,
    feature_dim: int,
    min_len: int = 3,
    max_len: int = 8,
    noise: float = 0.02,
) -> list[TrainingExample]:
    """Synthetic utterances where each symbol has a fixed duration and feature template.

    Durations are drawn once per symbol from [2, 6]; templates are seeded
    sinusoids across the feature axis; every frame of a symbol is its
    template plus small Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    durations, templates = _symbol_table(rng, vocab, feature_dim)
    corpus = []
    for _ in range(n_utts):
        ids = rng.integers(0, vocab, size=int(rng.integers(min_len, max_len + 1)))
        dur = durations[ids]
        frames = np.repeat(templates[ids], dur, axis=0)
        frames = frames + noise * rng.standard_normal(frames.shape)
        corpus.append(TrainingExample(PhonemeSequence(ids, dur), frames))
    return corpus


def _symbol_table(rng: np.random.Generator, vocab: int, feature_dim: int):
    durations = rng.integers(2, 7, size=vocab)
    d = np.arange(feature_dim)
    amp = rng.uniform(0.5, 1.5, size=(vocab, 1))
    freq = rng.uniform(0.5, 3.0, size=(vocab, 1))
    phase = rng.uniform(0, 2 * np.pi, size=(vocab, 1))
    return durations, amp * np.sin(2 * np.pi * freq * d / feature_dim + phase)


def toy_templates(seed: int, vocab: int, feature_dim: int) -> np.ndarray:
    """The per-symbol templates :func:`make_toy_corpus` draws for ``seed``."""
    return _symbol_table(np.random.default_rng(seed), vocab, feature_dim)[1]
