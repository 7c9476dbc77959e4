"""Acceptance suite: one test per criterion, each printing a single result line.

Run with ``pytest tests/test_acceptance.py -v``; the ``ACCEPT`` lines are
printed even when output capture is on.
"""

import math
import time

import numpy as np
import pytest

from devicetts import complexity as cx
from devicetts import io
from devicetts import tensor as T
from devicetts.cli import main
from devicetts.config import ModelConfig, tiny_config
from devicetts.dfsmn import dfsmn_block, dfsmn_stack, init_block, init_stack
from devicetts.gradcheck import run_suite
from devicetts.layers import affine, bilstm, init_affine, init_lstm, init_prenet, lstm, prenet
from devicetts.model import DeviceTTS, FeatureMatrix, PhonemeSequence, length_regulate
from devicetts.tensor import OpCounter
from devicetts.training import TrainConfig, make_toy_corpus, train

from conftest import small_config


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPT {n:>2} {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def test_criterion_01_parameter_count(report, capsys):
    assert main(["count", "--profile", "world"]) == 0
    rec = dict(kv.split("=", 1) for kv in capsys.readouterr().out.split())
    total = int(rec["params_total"])
    ok = 1_190_000 <= total <= 1_610_000
    assert report(1, ok, f"params_total={total} band=[1.19M,1.61M]")


def test_criterion_02_flops_per_second(report):
    g = cx.count_flops_per_second(ModelConfig().with_profile("world")).flops_total / 1e9
    ok = 0.074 <= g <= 0.124
    assert report(2, ok, f"gflops_per_s={g:.6f} band=[0.074,0.124]")


def test_criterion_03_first_frame_latency(report):
    ar = cx.count_flops_first_frame(ModelConfig()) / 1e9
    nonar = cx.count_flops_first_frame(ModelConfig(decoder_variant="nonAR")) / 1e9
    ratio = ar / nonar
    ok_ratio = ratio <= 0.5
    ok_band = 0.033 <= ar <= 0.132
    report(3, ok_ratio and ok_band,
           f"ar={ar:.6f} nonar={nonar:.6f} ratio={ratio:.3f} (<=0.5: {ok_ratio}) "
           f"ar band [0.033,0.132]: {ok_band}")
    assert ok_ratio, "AR/non-AR first-frame ratio above 0.5"
    assert ok_band, f"AR first-frame {ar:.4f} GFLOPs outside [0.033, 0.132]"


def test_criterion_04_flop_reconciliation(report):
    mismatches = []
    for variant in ("AR", "nonAR"):
        for r in (1, 2, 3):
            cfg = tiny_config(decoder_variant=variant, frames_per_step=r)
            model = DeviceTTS(cfg, seed=r)
            model.params.duration_head.bias.data[:] = 6.0
            seq = PhonemeSequence(np.arange(cx.Profile.for_config(cfg).n_phonemes) % 12)
            with OpCounter() as oc:
                n = model.synthesize(seq).n_frames
            batch = cx.count_flops(cfg, len(seq), n)
            with OpCounter() as oc1:
                next(model.synthesize_streaming(seq, 1))
            first = cx.first_frame_cost(cfg)
            if oc.total_macs != batch.macs_total or oc1.total_macs != first.macs:
                mismatches.append((variant, r, oc.total_macs, batch.macs_total,
                                   oc1.total_macs, first.macs))
    assert report(4, not mismatches, f"6 configs, batch and first-frame MACs; mismatches={mismatches}")


def test_criterion_05_gradcheck(report):
    t0 = time.time()
    reps = run_suite(tiny_config(), seed=0)
    need = {"affine", "lstm_step", "bilstm", "prenet", "dfsmn_block", "model_total_loss"}
    ok = need <= set(reps) and all(r.passed for r in reps.values())
    ok &= all(reps[k].tol == 1e-4 for k in need - {"model_total_loss"})
    ok &= reps["model_total_loss"].tol == 1e-3
    worst = ", ".join(f"{k}={r.worst:.1e}" for k, r in reps.items())
    assert report(5, ok, f"{worst} ({time.time() - t0:.1f}s)")


def _ref_lstm(x, p):
    w_ih, w_hh, b = (t.data.astype(np.float64) for t in (p.w_ih, p.w_hh, p.bias))
    hdim = w_hh.shape[0]
    h, c = np.zeros(hdim), np.zeros(hdim)
    sig = lambda z: 1 / (1 + np.exp(-z))  # noqa: E731
    out = []
    for t in range(x.shape[0]):
        g = x[t] @ w_ih + h @ w_hh + b
        i, f, gg, o = sig(g[:hdim]), sig(g[hdim:2 * hdim]), np.tanh(g[2 * hdim:3 * hdim]), sig(g[3 * hdim:])
        c = f * c + i * gg
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def _ref_affine(x, p, relu=False):
    y = x @ p.weight.data.astype(np.float64) + p.bias.data.astype(np.float64)
    return np.maximum(y, 0) if relu else y


def _ref_block(x, b):
    from test_dfsmn import naive_block

    return naive_block(x, b)


def test_criterion_06_oracle_equivalence(report):
    rng = np.random.default_rng(6)
    diffs = {}
    for _ in range(10):
        n = int(rng.integers(1, 17))
        d_in, p1, p2 = (int(v) for v in rng.integers(1, 9, 3))
        n1, n2 = (int(v) for v in rng.integers(0, 4, 2))
        x = rng.standard_normal((n, d_in)).astype(np.float32)
        b = init_block(rng, d_in, p1, p2, n1, n2)
        diffs.setdefault("dfsmn_block", []).append(
            np.abs(dfsmn_block(T.tensor(x), b).data - _ref_block(x, b)).max())
        s = init_stack(rng, d_in, 2, p1, p2, n1, n2)
        ref = _ref_block(_ref_block(x, s.blocks[0]), s.blocks[1])
        diffs.setdefault("dfsmn_stack", []).append(np.abs(dfsmn_stack(T.tensor(x), s).data - ref).max())
        d = rng.integers(1, 5, n)
        lr_ref = np.concatenate([np.stack([x[i]] * int(d[i])) for i in range(n)])
        diffs.setdefault("length_regulate", []).append(
            np.abs(length_regulate(T.tensor(x), d).data - lr_ref).max())
        hdim = int(rng.integers(1, 9))
        f, bw = init_lstm(rng, d_in, hdim), init_lstm(rng, d_in, hdim)
        for t in (f.bias, bw.bias):
            t.data[:] = rng.uniform(-0.5, 0.5, t.shape)
        diffs.setdefault("lstm", []).append(np.abs(lstm(T.tensor(x), f).data - _ref_lstm(x, f)).max())
        bi_ref = np.concatenate([_ref_lstm(x, f), _ref_lstm(x[::-1], bw)[::-1]], axis=1)
        diffs.setdefault("bilstm", []).append(np.abs(bilstm(T.tensor(x), f, bw).data - bi_ref).max())
        pn = init_prenet(rng, d_in, (p1, p2))
        pn_ref = _ref_affine(_ref_affine(x, pn.layer1, True), pn.layer2, True)
        diffs.setdefault("prenet", []).append(np.abs(prenet(T.tensor(x), pn).data - pn_ref).max())
        head = init_affine(rng, p2, 3)
        diffs.setdefault("stack_then_head", []).append(
            np.abs(affine(dfsmn_stack(T.tensor(x), s), head).data - _ref_affine(ref, head)).max())
    worst = {k: float(max(v)) for k, v in diffs.items()}
    ok = all(v < 1e-6 for v in worst.values())
    assert report(6, ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (tol 1e-6, fp32)")


def _changes(fn, base_input, positions, at):
    base = fn(base_input)[at]
    out = {}
    for p in positions:
        x = base_input.copy()
        x[p] = x[p] + 1 if x.dtype.kind == "f" else (x[p] + 1) % 10
        out[p] = not np.array_equal(fn(x)[at], base)
    return out


def test_criterion_07_receptive_field_and_latency(report):
    model = DeviceTTS(ModelConfig(vocab_size=10), seed=7)
    ids = np.random.default_rng(0).integers(0, 10, 220)
    enc = _changes(lambda v: model.encode(v).data, ids, range(0, 220), 110)
    enc_window = [p - 110 for p, c in enc.items() if c]
    coarse = np.random.default_rng(1).standard_normal((100, 67)).astype(np.float32)
    ref = _changes(lambda v: model.refine(T.tensor(v)).data, coarse, range(100), 50)
    ref_window = [p - 50 for p, c in ref.items() if c]

    steps = [0]
    inner = model.ar_steps

    def counting(lr, trace=None):
        for y in inner(lr, trace):
            steps[0] += 1
            yield y

    model.ar_steps = counting
    next(model.synthesize_streaming(PhonemeSequence(np.arange(12) % 10, np.full(12, 5)), 1))
    expected = math.ceil(21 / 8)
    ok = (min(enc_window), max(enc_window)) == (-80, 80)
    ok &= (min(ref_window), max(ref_window)) == (-20, 20)
    ok &= steps[0] == expected == 3
    assert report(7, ok, f"encoder window [{min(enc_window)},{max(enc_window)}] "
                         f"refine window [{min(ref_window)},{max(ref_window)}] "
                         f"AR steps before first frame={steps[0]} (expected {expected})")


def test_criterion_08_convergence(report):
    t0 = time.time()
    cfg = small_config()
    data = make_toy_corpus(0, 50, cfg.vocab_size, cfg.feature_dim)
    model = DeviceTTS(cfg, seed=0)
    curve = train(data, model, TrainConfig(batch_size=4, warmup_steps=200, peak_lr=0.003,
                                           max_steps=2000, seed=0))
    head = np.mean([r.total for r in curve[:10]])
    tail = np.mean([r.total for r in curve[-10:]])
    reduction = 1 - tail / head

    one = make_toy_corpus(0, 1, cfg.vocab_size, cfg.feature_dim)
    m1 = DeviceTTS(cfg, seed=0)
    train(one, m1, TrainConfig(batch_size=1, warmup_steps=100, peak_lr=0.003, max_steps=1000))
    _, refined, _, pad = m1.forward_train(one[0].phonemes, one[0].target)
    overfit = float(np.abs(refined.data - pad).mean())
    ok = reduction >= 0.8 and overfit < 0.05
    assert report(8, ok, f"toy loss {head:.4f}->{tail:.4f} reduction={reduction:.1%} (>=80%), "
                         f"overfit refined MAE={overfit:.4f} (<0.05), {time.time() - t0:.0f}s")


def test_criterion_09_streaming_equivalence(report, tmp_path, capsys):
    model_path = tmp_path / "m.dtts"
    io.save_model(DeviceTTS(tiny_config(), seed=9), model_path)
    rng = np.random.default_rng(9)
    lines = []
    for k in range(10):
        n = int(rng.integers(1, 12))
        ids = rng.integers(0, 12, n)
        if k % 2:
            lines.append(" ".join(f"{i}:{d}" for i, d in zip(ids, rng.integers(1, 6, n))))
        else:
            lines.append(" ".join(str(i) for i in ids))
    utts = tmp_path / "u.txt"
    utts.write_text("\n".join(lines) + "\n")
    equal = 0
    for gold in ([], ["--use-gold-durations"]):
        src = utts
        if gold:
            src = tmp_path / "gold.txt"
            src.write_text("\n".join(lines[1::2]) + "\n")
        else:
            src = tmp_path / "plain.txt"
            src.write_text("\n".join(lines[0::2]) + "\n")
        assert main(["synth", "--model", str(model_path), "--in", str(src),
                     "--out", str(tmp_path / "b.dttf"), *gold]) == 0
        assert main(["bench", "--model", str(model_path), "--in", str(src), "--chunk", "1",
                     "--out", str(tmp_path / "s.dttf"), *gold]) == 0
        for i in range(5):
            a = (tmp_path / f"b_{i}.dttf").read_bytes()
            equal += a == (tmp_path / f"s_{i}.dttf").read_bytes()
    capsys.readouterr()
    assert report(9, equal == 10, f"{equal}/10 inputs byte-equal between bench --chunk 1 and synth")


def test_criterion_10_serialization(report, tmp_path):
    ok = True
    for variant in ("AR", "nonAR"):
        m = DeviceTTS(tiny_config(decoder_variant=variant), seed=10)
        seq = PhonemeSequence([3, 1, 4, 1, 5, 9])
        before = m.synthesize(seq).frames
        io.save_model(m, tmp_path / "m.dtts")
        raw = (tmp_path / "m.dtts").read_bytes()
        loaded = io.load_model(tmp_path / "m.dtts")
        ok &= io.model_to_bytes(loaded) == raw
        ok &= loaded.synthesize(seq).frames.tobytes() == before.tobytes()
        fm = FeatureMatrix.of(before)
        io.write_features(fm, tmp_path / "f.dttf")
        fraw = (tmp_path / "f.dttf").read_bytes()
        ok &= io.features_to_bytes(io.read_features(tmp_path / "f.dttf")) == fraw
    assert report(10, ok, "model and feature files byte-exact; post-load synthesis bit-equal")
