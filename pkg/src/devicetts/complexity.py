"""Closed-form parameter and FLOP accounting from a :class:`ModelConfig`.

Conventions: one multiply-accumulate is two FLOPs; every elementwise
operation (bias add, activation, gate product, skip add) is one FLOP per
output element.  Memory filters are charged as a zero-padded convolution,
i.e. every tap for every frame.  The formulas mirror the executed primitive
sequence exactly, so an :class:`~devicetts.tensor.OpCounter` wrapped around a
real forward pass reproduces them to the unit.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .config import DfsmnConfig, ModelConfig

COMPONENTS = (
    "embedding", "encoder", "duration", "decoder_prenet", "decoder_rnn",
    "decoder_proj", "nonar", "refine",
)


@dataclass(frozen=True)
class Profile:
    """Utterance shape used for per-second accounting."""

    audio_s: float = 1.0
    frame_rate: float = 200.0
    phoneme_rate: float = 12.0

    @classmethod
    def for_config(cls, config: ModelConfig, audio_s: float = 1.0) -> "Profile":
        return cls(audio_s, config.frame_rate, config.phoneme_rate_per_s)

    @property
    def n_frames(self) -> int:
        return int(round(self.frame_rate * self.audio_s))

    @property
    def n_phonemes(self) -> int:
        return int(round(self.phoneme_rate * self.audio_s))


@dataclass
class Cost:
    macs: int = 0
    elementwise: int = 0

    def __add__(self, other: "Cost") -> "Cost":
        return Cost(self.macs + other.macs, self.elementwise + other.elementwise)

    def __mul__(self, k: int) -> "Cost":
        return Cost(self.macs * k, self.elementwise * k)

    __rmul__ = __mul__

    @property
    def flops(self) -> int:
        return 2 * self.macs + self.elementwise


@dataclass
class FlopReport:
    params: dict[str, int] = field(default_factory=dict)
    costs: dict[str, Cost] = field(default_factory=dict)
    first_frame: Cost | None = None
    variant: str = "AR"
    profile: Profile | None = None
    conventions: str = "MAC=2 FLOPs; elementwise=1 FLOP"

    @property
    def params_total(self) -> int:
        return sum(self.params.values())

    @property
    def macs_total(self) -> int:
        return sum(c.macs for c in self.costs.values())

    @property
    def flops_total(self) -> int:
        return sum(c.flops for c in self.costs.values())


# ---------------------------------------------------------------------------
# parameter counts


def affine_params(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def lstm_params(n_in: int, hidden: int) -> int:
    return 4 * (n_in * hidden + hidden * hidden + hidden)


def dfsmn_params(d_in: int, c: DfsmnConfig) -> int:
    total = 0
    for k in range(c.n_blocks):
        total += affine_params(d_in if k == 0 else c.p2, c.p1)
        total += affine_params(c.p1, c.p2) + (c.n1 + 1 + c.n2) * c.p2
    return total


def count_params(config: ModelConfig) -> dict[str, int]:
    c = config
    D, r = c.feature_dim, c.frames_per_step
    lr_dim = c.encoder.p2
    h = c.duration_blstm_hidden
    out = dict.fromkeys(COMPONENTS, 0)
    out["embedding"] = c.vocab_size * c.embed_dim
    out["encoder"] = dfsmn_params(c.embed_dim, c.encoder)
    out["duration"] = (
        dfsmn_params(lr_dim, c.duration)
        + 2 * lstm_params(c.duration.p2, h)
        + affine_params(2 * h, 1)
    )
    if c.decoder_variant == "AR":
        w0, w1 = c.prenet_widths
        out["decoder_prenet"] = affine_params(D, w0) + affine_params(w0, w1)
        n_in = w1 + lr_dim
        for _ in range(c.lstm_layers):
            out["decoder_rnn"] += lstm_params(n_in, c.lstm_hidden)
            n_in = c.lstm_hidden
        out["decoder_proj"] = affine_params(c.lstm_hidden, r * D)
    else:
        out["nonar"] = dfsmn_params(lr_dim, c.nonar) + affine_params(c.nonar.p2, D)
    out["refine"] = dfsmn_params(D, c.refine) + affine_params(c.refine.p2, D)
    return out


# ---------------------------------------------------------------------------
# per-primitive-sequence costs


def affine_cost(rows: int, n_in: int, n_out: int, activation: bool = False) -> Cost:
    return Cost(rows * n_in * n_out, rows * n_out * (2 if activation else 1))


def lstm_cost(steps: int, n_in: int, hidden: int) -> Cost:
    # two gate products, two gate adds, 3 sigmoids + 1 tanh on gates,
    # f*c, i*g, their sum, tanh(c), o*tanh(c)
    return Cost(steps * 4 * hidden * (n_in + hidden), steps * 17 * hidden)


def dfsmn_cost(frames: int, d_in: int, c: DfsmnConfig) -> Cost:
    total = Cost()
    for k in range(c.n_blocks):
        din = d_in if k == 0 else c.p2
        total += affine_cost(frames, din, c.p1, activation=True)
        total += affine_cost(frames, c.p1, c.p2)
        total += Cost(frames * (c.n1 + 1 + c.n2) * c.p2, frames * c.p2)
        if din == c.p2:
            total += Cost(0, frames * c.p2)
    return total


def front_end_costs(config: ModelConfig, n_phonemes: int) -> dict[str, Cost]:
    c = config
    lr_dim = c.encoder.p2
    h = c.duration_blstm_hidden
    return {
        "encoder": dfsmn_cost(n_phonemes, c.embed_dim, c.encoder),
        "duration": (
            dfsmn_cost(n_phonemes, lr_dim, c.duration)
            + 2 * lstm_cost(n_phonemes, c.duration.p2, h)
            + affine_cost(n_phonemes, 2 * h, 1, activation=True)
        ),
    }


def ar_step_costs(config: ModelConfig, steps: int) -> dict[str, Cost]:
    c = config
    w0, w1 = c.prenet_widths
    rnn = Cost()
    n_in = w1 + c.encoder.p2
    for _ in range(c.lstm_layers):
        rnn += lstm_cost(steps, n_in, c.lstm_hidden)
        n_in = c.lstm_hidden
    return {
        "decoder_prenet": (
            affine_cost(steps, c.feature_dim, w0, True) + affine_cost(steps, w0, w1, True)
        ),
        "decoder_rnn": rnn,
        "decoder_proj": affine_cost(steps, c.lstm_hidden, c.frames_per_step * c.feature_dim),
    }


def nonar_cost(config: ModelConfig, stack_frames: int, head_frames: int) -> Cost:
    c = config
    return dfsmn_cost(stack_frames, c.encoder.p2, c.nonar) + affine_cost(
        head_frames, c.nonar.p2, c.feature_dim
    )


def refine_cost(config: ModelConfig, stack_frames: int, head_frames: int) -> Cost:
    c = config
    cost = dfsmn_cost(stack_frames, c.feature_dim, c.refine) + affine_cost(
        head_frames, c.refine.p2, c.feature_dim
    )
    if c.refine_residual:
        cost += Cost(0, head_frames * c.feature_dim)
    return cost


def refine_lookahead(config: ModelConfig) -> int:
    return config.refine.n_blocks * config.refine.n2


def nonar_lookahead(config: ModelConfig) -> int:
    return config.nonar.n_blocks * config.nonar.n2


# ---------------------------------------------------------------------------
# public counters


def count_flops(config: ModelConfig, n_phonemes: int, n_frames: int) -> FlopReport:
    """Cost of synthesising one utterance of the given size (batch path)."""
    c = config
    costs = {k: Cost() for k in COMPONENTS}
    if n_phonemes > 0:
        costs.update(front_end_costs(c, n_phonemes))
    if n_frames > 0:
        if c.decoder_variant == "AR":
            steps = math.ceil(n_frames / c.frames_per_step)
            costs.update(ar_step_costs(c, steps))
            costs["refine"] = refine_cost(c, steps * c.frames_per_step, steps * c.frames_per_step)
        else:
            costs["nonar"] = nonar_cost(c, n_frames, n_frames)
            costs["refine"] = refine_cost(c, n_frames, n_frames)
    return FlopReport(params=count_params(c), costs=costs, variant=c.decoder_variant)


def count_flops_per_second(config: ModelConfig, profile: Profile | None = None) -> FlopReport:
    """Per-second cost: front end per symbol, AR per step, refine per frame."""
    profile = profile or Profile.for_config(config)
    rep = count_flops(config, profile.n_phonemes, profile.n_frames)
    rep.profile = profile
    rep.first_frame = first_frame_cost(config, profile)
    return rep


def first_frame_cost(
    config: ModelConfig, profile: Profile | None = None, n_phonemes: int | None = None
) -> Cost:
    """Work done before the first refined frame can be emitted.

    Charges a full (non-streaming) front-end pass over one second of symbols,
    then either the AR steps needed to cover the refine look-ahead or the
    feedforward coarse stack over its own plus the refine look-ahead window,
    then the refine stack over its window and its head over one frame.
    """
    c = config
    if n_phonemes is None:
        n_phonemes = (profile or Profile.for_config(c, 1.0)).n_phonemes
    ahead = refine_lookahead(c)
    window = 1 + ahead
    total = Cost()
    for cost in front_end_costs(c, n_phonemes).values():
        total += cost
    if c.decoder_variant == "AR":
        steps = math.ceil(window / c.frames_per_step)
        for cost in ar_step_costs(c, steps).values():
            total += cost
    else:
        total += nonar_cost(c, window + nonar_lookahead(c), window)
    return total + refine_cost(c, window, 1)


def count_flops_first_frame(config: ModelConfig, profile: Profile | None = None) -> int:
    return first_frame_cost(config, profile).flops


def first_frame_ar_steps(config: ModelConfig) -> int:
    return math.ceil((1 + refine_lookahead(config)) / config.frames_per_step)


# ---------------------------------------------------------------------------
# reporting


def report(config: ModelConfig, profile: Profile | None = None) -> tuple[str, dict[str, object]]:
    """Formatted table plus a flat key/value record, both decoder variants side by side."""
    profile = profile or Profile.for_config(config)
    variants = {
        "AR": config.replace(decoder_variant="AR"),
        "nonAR": config.replace(decoder_variant="nonAR"),
    }
    reps = {k: count_flops_per_second(v, profile) for k, v in variants.items()}
    main = reps[config.decoder_variant]

    rec: dict[str, object] = {
        "variant": config.decoder_variant,
        "params_total": main.params_total,
    }
    for k, v in main.params.items():
        rec[f"params_{k}"] = v
    rec["macs_per_s"] = main.macs_total
    rec["flops_per_s"] = main.flops_total
    rec["gflops_per_s"] = round(main.flops_total / 1e9, 6)
    for k, v in main.costs.items():
        rec[f"gflops_{k}"] = round(v.flops / 1e9, 6)
    rec["flops_first_frame"] = main.first_frame.flops
    rec["gflops_first_frame"] = round(main.first_frame.flops / 1e9, 6)
    for k, r in reps.items():
        rec[f"params_total_{k.lower()}"] = r.params_total
        rec[f"gflops_per_s_{k.lower()}"] = round(r.flops_total / 1e9, 6)
        rec[f"gflops_first_frame_{k.lower()}"] = round(r.first_frame.flops / 1e9, 6)
    rec["first_frame_ratio_ar_nonar"] = round(
        reps["AR"].first_frame.flops / reps["nonAR"].first_frame.flops, 6
    )
    rec["profile_audio_s"] = profile.audio_s
    rec["profile_frame_rate"] = profile.frame_rate
    rec["profile_phoneme_rate"] = profile.phoneme_rate
    rec["profile_feature_dim"] = config.feature_dim
    rec["profile_frames_per_step"] = config.frames_per_step
    rec["convention"] = "mac2"

    lines = [
        f"{'system':<22}{'#params (M)':>12}{'GFLOPS':>10}{'GFLOPS first frame':>20}",
        "-" * 64,
    ]
    for k, r in reps.items():
        lines.append(
            f"{'DeviceTTS (' + k + ')':<22}{r.params_total / 1e6:>12.3f}"
            f"{r.flops_total / 1e9:>10.4f}{r.first_frame.flops / 1e9:>20.4f}"
        )
    lines += ["", f"per-component ({config.decoder_variant}, {profile.frame_rate:g} frames/s, "
              f"{profile.phoneme_rate:g} symbols/s):"]
    for k in COMPONENTS:
        p, cost = main.params[k], main.costs[k]
        if p or cost.flops:
            lines.append(f"  {k:<16}{p:>10,d} params{cost.flops / 1e6:>10.3f} MFLOPs/s")
    return "\n".join(lines), rec


def format_record(rec: dict[str, object]) -> str:
    return " ".join(f"{k}={v}" for k, v in rec.items())


def instrumented_totals(counter) -> Counter:
    """Collapse an OpCounter into per-component MAC totals."""
    return Counter({k: v for k, v in counter.macs.items() if v})
