"""Binary model/feature files and the phoneme text format.

Model file (little-endian throughout)::

    b"DTTS" | u32 version | u32 len | config JSON (UTF-8) | u32 n_tensors
    then per tensor: u32 len | name (UTF-8) | u8 dtype (0 = f32) | u32 rank
                     | u32 dims[rank] | f32 payload

Feature file::

    b"DTTF" | u32 version | u32 profile | u32 frames | u32 dim | f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig
from .model import DeviceTTS, FeatureMatrix, PhonemeSequence

MODEL_MAGIC = b"DTTS"
FEATURE_MAGIC = b"DTTF"
FORMAT_VERSION = 1
DTYPE_F32 = 0

PROFILE_CODES = {"WORLD67": 0, "LPCNET23": 1, "CUSTOM": 255}
PROFILE_NAMES = {v: k for k, v in PROFILE_CODES.items()}


class FormatError(ValueError):
    """Malformed binary file; ``offset`` is where decoding failed."""

    def __init__(self, msg: str, offset: int):
        super().__init__(f"{msg} (at byte offset {offset})")
        self.offset = offset


class PhonemeParseError(ValueError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def text(self, what: str) -> str:
        n = self.u32(f"{what} length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"{what} is not valid UTF-8", start) from None


def _magic(r: _Reader, magic: bytes) -> None:
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    at = r.pos
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", at)


# ---------------------------------------------------------------------------
# model files


def model_to_bytes(model: DeviceTTS) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    cfg = model.config.to_json().encode("utf-8")
    parts += [struct.pack("<I", len(cfg)), cfg]
    named = model.named_tensors()
    parts.append(struct.pack("<I", len(named)))
    for name, t in named:
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<BI", DTYPE_F32, t.ndim)]
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(buf: bytes) -> DeviceTTS:
    r = _Reader(buf)
    _magic(r, MODEL_MAGIC)
    at = r.pos
    try:
        config = ModelConfig.from_json(r.text("config"))
    except (ValueError, TypeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"invalid config: {e}", at) from None
    model = DeviceTTS(config)
    expected = dict(model.named_tensors())
    state: dict[str, np.ndarray] = {}
    for _ in range(r.u32("tensor count")):
        at = r.pos
        name = r.text("tensor name")
        if name not in expected:
            raise FormatError(f"unknown tensor name {name!r}", at)
        if name in state:
            raise FormatError(f"duplicate tensor name {name!r}", at)
        at = r.pos
        if r.u8("dtype tag") != DTYPE_F32:
            raise FormatError(f"tensor {name!r}: unsupported dtype tag", at)
        rank = r.u32("rank")
        dims = tuple(r.u32("dim") for _ in range(rank))
        if dims != expected[name].shape:
            raise FormatError(f"tensor {name!r}: shape {dims}, expected {expected[name].shape}", at)
        n = int(np.prod(dims, dtype=np.int64))
        state[name] = np.frombuffer(r.take(4 * n, f"tensor {name!r} payload"), dtype="<f4").reshape(dims)
    missing = [n for n in expected if n not in state]
    if missing:
        raise FormatError(f"missing tensor {missing[0]!r}", r.pos)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after tensor table", r.pos)
    return DeviceTTS.from_state(config, state, np.float32)


def save_model(model: DeviceTTS, path: str | Path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path: str | Path) -> DeviceTTS:
    return model_from_bytes(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# feature files


def features_to_bytes(fm: FeatureMatrix) -> bytes:
    frames = np.ascontiguousarray(fm.frames, dtype="<f4")
    header = struct.pack(
        "<4sIIII", FEATURE_MAGIC, FORMAT_VERSION, PROFILE_CODES[fm.profile], *frames.shape
    )
    return header + frames.tobytes()


def features_from_bytes(buf: bytes, expect_dim: int | None = None) -> FeatureMatrix:
    r = _Reader(buf)
    _magic(r, FEATURE_MAGIC)
    at = r.pos
    code = r.u32("profile")
    if code not in PROFILE_NAMES:
        raise FormatError(f"unknown profile code {code}", at)
    n, dim_at, dim = r.u32("frame count"), r.pos, r.u32("feature dim")
    if expect_dim is not None and dim != expect_dim:
        raise FormatError(f"feature dim {dim} does not match expected {expect_dim}", dim_at)
    payload = r.take(4 * n * dim, "frames")
    if r.pos != len(buf):
        raise FormatError("trailing bytes after frames", r.pos)
    frames = np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float32)
    try:
        return FeatureMatrix(frames, PROFILE_NAMES[code])
    except ValueError as e:
        raise FormatError(str(e), at) from None


def write_features(fm: FeatureMatrix, path: str | Path) -> None:
    Path(path).write_bytes(features_to_bytes(fm))


def read_features(path: str | Path, expect_dim: int | None = None) -> FeatureMatrix:
    return features_from_bytes(Path(path).read_bytes(), expect_dim)


# ---------------------------------------------------------------------------
# phoneme text


def parse_phoneme_line(line: str, table: dict[str, int], lineno: int = 1) -> PhonemeSequence:
    ids, durs = [], []
    tokens = line.split()
    if not tokens:
        raise PhonemeParseError("empty utterance", lineno)
    for tok in tokens:
        sym, sep, dur = tok.rpartition(":")
        if not sep:
            sym, dur = tok, None
        if sym not in table:
            raise PhonemeParseError(f"unknown symbol {sym!r}", lineno)
        ids.append(table[sym])
        if dur is not None:
            try:
                d = int(dur)
            except ValueError:
                raise PhonemeParseError(f"bad duration {dur!r} for {sym!r}", lineno) from None
            if d < 1:
                raise PhonemeParseError(f"duration for {sym!r} must be >= 1", lineno)
            durs.append(d)
    if durs and len(durs) != len(ids):
        raise PhonemeParseError("durations must be given for all symbols or none", lineno)
    return PhonemeSequence(ids, durs or None)


def read_phonemes(path: str | Path, table: dict[str, int]) -> list[PhonemeSequence]:
    """One utterance per non-blank line; tokens are ``sym`` or ``sym:frames``."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            out.append(parse_phoneme_line(line, table, lineno))
    return out


def format_phonemes(seq: PhonemeSequence, symbols: list[str] | None = None) -> str:
    names = [symbols[i] if symbols else str(i) for i in seq.ids]
    if seq.gold_durations is None:
        return " ".join(names)
    return " ".join(f"{s}:{d}" for s, d in zip(names, seq.gold_durations))
