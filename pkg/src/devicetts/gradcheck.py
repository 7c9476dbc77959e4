"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor


@dataclass
class GradcheckReport:
    """Worst relative error per parameter; ``passed`` iff every one is within ``tol``."""

    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and all(e <= self.tol for e in self.max_rel_error.values())

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def gradcheck(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    max_elements: int = 64,
    seed: int = 0,
) -> GradcheckReport:
    """Compare backprop gradients of ``build_loss()`` against central differences.

    ``build_loss`` must rebuild the loss from the current values of
    ``params`` on every call.  Tensors with more than ``max_elements``
    entries are checked on a seeded random subsample of that many elements.
    Run under ``precision(64)`` with float64 parameters.
    """
    report = GradcheckReport(tol=tol)
    rng = np.random.default_rng(seed)
    names = [p.name or f"param{k}" for k, p in enumerate(params)]

    with Graph() as g:
        loss = build_loss()
    if not np.isfinite(loss.data).all():
        report.failures.append("loss: non-finite value")
        return report
    analytic = g.backward(loss, params)

    for name, p, ga in zip(names, params, analytic):
        flat = p.data.reshape(-1)
        if flat.size > max_elements:
            picks = rng.choice(flat.size, size=max_elements, replace=False)
        else:
            picks = np.arange(flat.size)
        worst = 0.0
        for k in picks:
            orig = flat[k]
            flat[k] = orig + step
            lp = float(build_loss().data)
            flat[k] = orig - step
            lm = float(build_loss().data)
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                report.failures.append(f"{name}[{k}]: non-finite loss")
                continue
            num = (lp - lm) / (2 * step)
            an = float(ga.reshape(-1)[k])
            err = abs(an - num) / max(abs(an), abs(num), 1e-8)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
    return report


# ---------------------------------------------------------------------------
# the layer-by-layer suite behind ``devicetts gradcheck``


def _suite_cases(config, seed: int):
    """(label, build_loss, params, tol) tuples; call under ``precision(64)``."""
    from . import tensor as T
    from .dfsmn import dfsmn_block, dfsmn_stack, init_block, init_stack
    from .layers import affine, bilstm, init_affine, init_lstm, init_prenet, lstm_step, prenet
    from .model import DeviceTTS, PhonemeSequence
    from .training import TrainConfig, total_loss

    rng = np.random.default_rng(seed)
    d = config.embed_dim
    x = T.tensor(rng.standard_normal((6, d)))
    w = T.tensor(rng.standard_normal((6, d)))

    def weighted(y):
        # random projection keeps the loss sensitive to every output element
        return T.sum_(T.mul(y, T.tensor(np.resize(w.data, y.shape))))

    def named(pairs):
        out = []
        for n, t in pairs:
            t.name = n
            out.append(t)
        return out

    aff = init_affine(rng, d, d)
    yield "affine", lambda: weighted(affine(x, aff, "tanh")), named(aff.tensors("affine")), 1e-4

    cell = init_lstm(rng, d, d)
    h0 = T.tensor(rng.standard_normal(d) * 0.5)
    c0 = T.tensor(rng.standard_normal(d) * 0.5)

    def lstm_loss():
        y, (h, c) = lstm_step(T.slice_(x, 0, 1), (T.reshape(h0, (1, d)), T.reshape(c0, (1, d))), cell)
        return T.add(weighted(y), weighted(c))

    yield "lstm_step", lstm_loss, named(cell.tensors("lstm")), 1e-4

    fwd, bwd = init_lstm(rng, d, d // 2 or 1), init_lstm(rng, d, d // 2 or 1)
    yield ("bilstm", lambda: weighted(bilstm(x, fwd, bwd)),
           named([*fwd.tensors("bilstm.fwd"), *bwd.tensors("bilstm.bwd")]), 1e-4)

    pre = init_prenet(rng, d, config.prenet_widths)
    yield "prenet", lambda: weighted(prenet(x, pre)), named(pre.tensors("prenet")), 1e-4

    c = config.encoder
    blk = init_block(rng, d, c.p1, d, c.n1, c.n2)
    yield "dfsmn_block", lambda: weighted(dfsmn_block(x, blk)), named(blk.tensors("dfsmn")), 1e-4

    stack = init_stack(rng, d, 2, c.p1, d, c.n1, c.n2)
    yield "dfsmn_stack", lambda: weighted(dfsmn_stack(x, stack)), named(stack.tensors("stack")), 1e-4

    model = DeviceTTS(config, seed=seed).astype(np.float64)
    # move off the zero-bias init so no relu sits exactly on its kink
    for t in model.parameters():
        t.data += 0.2 * rng.standard_normal(t.shape)
    n_ph = 4
    ids = rng.integers(0, config.vocab_size, size=n_ph)
    dur = rng.integers(1, 3, size=n_ph)
    seq = PhonemeSequence(ids, dur)
    target = rng.standard_normal((int(dur.sum()), config.feature_dim))

    def model_loss():
        coarse, refined, pred, padded = model.forward_train(seq, target)
        return total_loss(coarse, refined, padded, pred, dur, TrainConfig())[0]

    yield "model_total_loss", model_loss, model.parameters(), 1e-3


def run_suite(config, seed: int = 0, step: float = 1e-5) -> dict[str, GradcheckReport]:
    from .tensor import precision

    out = {}
    with precision(64):
        for label, build, params, tol in _suite_cases(config, seed):
            out[label] = gradcheck(build, params, step=step, tol=tol, seed=seed)
    return out
