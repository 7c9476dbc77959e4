import json
import struct

import numpy as np
import pytest

from devicetts import io
from devicetts.cli import main, read_corpus
from devicetts.config import ModelConfig, tiny_config
from devicetts.model import DeviceTTS, FeatureMatrix, PhonemeSequence
from devicetts.training import read_curve


# --- model files ----------------------------------------------------------------

def test_model_round_trip_byte_identical(tiny_model):
    buf = io.model_to_bytes(tiny_model)
    again = io.model_to_bytes(io.model_from_bytes(buf))
    assert buf == again
    loaded = io.model_from_bytes(buf)
    assert loaded.config == tiny_model.config
    for (n1, a), (n2, b) in zip(tiny_model.named_tensors(), loaded.named_tensors()):
        assert n1 == n2 and a.data.tobytes() == b.data.tobytes()


def test_model_round_trip_nonar_and_symbols(tmp_path):
    cfg = tiny_config(decoder_variant="nonAR", symbols=[f"s{i}" for i in range(12)])
    m = DeviceTTS(cfg, seed=3)
    io.save_model(m, tmp_path / "m.dtts")
    assert io.load_model(tmp_path / "m.dtts").config == cfg


def test_post_load_synthesis_bit_matches(tiny_model, tmp_path):
    seq = PhonemeSequence([1, 5, 3, 2])
    before = tiny_model.synthesize(seq).frames
    io.save_model(tiny_model, tmp_path / "m.dtts")
    after = io.load_model(tmp_path / "m.dtts").synthesize(seq).frames
    assert before.tobytes() == after.tobytes()


def test_model_header_layout(tiny_model):
    buf = io.model_to_bytes(tiny_model)
    assert buf[:4] == b"DTTS"
    assert struct.unpack_from("<I", buf, 4)[0] == 1
    n = struct.unpack_from("<I", buf, 8)[0]
    cfg = json.loads(buf[12 : 12 + n].decode("utf-8"))
    assert cfg["feature_dim"] == 8
    count = struct.unpack_from("<I", buf, 12 + n)[0]
    assert count == len(tiny_model.named_tensors())


def test_model_corrupt_magic(tiny_model):
    buf = bytearray(io.model_to_bytes(tiny_model))
    buf[0:4] = b"XXXX"
    with pytest.raises(io.FormatError) as e:
        io.model_from_bytes(bytes(buf))
    assert e.value.offset == 0


def test_model_bad_version(tiny_model):
    buf = bytearray(io.model_to_bytes(tiny_model))
    buf[4:8] = struct.pack("<I", 9)
    with pytest.raises(io.FormatError, match="version") as e:
        io.model_from_bytes(bytes(buf))
    assert e.value.offset == 4


@pytest.mark.parametrize("cut", [2, 6, 20, 200, -1])
def test_model_truncated(tiny_model, cut):
    buf = io.model_to_bytes(tiny_model)
    short = buf[:cut] if cut > 0 else buf[:-1]
    with pytest.raises(io.FormatError, match="truncated") as e:
        io.model_from_bytes(short)
    assert 0 <= e.value.offset <= len(short)


def test_model_unknown_tensor_name(tiny_model):
    buf = io.model_to_bytes(tiny_model)
    first = tiny_model.named_tensors()[0][0].encode()
    pos = buf.index(first)
    bogus = b"x" * len(first)
    with pytest.raises(io.FormatError, match="unknown tensor") as e:
        io.model_from_bytes(buf[:pos] + bogus + buf[pos + len(first):])
    assert e.value.offset == pos - 4


def test_model_trailing_bytes(tiny_model):
    with pytest.raises(io.FormatError, match="trailing"):
        io.model_from_bytes(io.model_to_bytes(tiny_model) + b"\0")


# --- feature files --------------------------------------------------------------

@pytest.mark.parametrize("dim,profile", [(67, "WORLD67"), (23, "LPCNET23"), (8, "CUSTOM")])
def test_features_round_trip(rng, tmp_path, dim, profile):
    fm = FeatureMatrix.of(rng.standard_normal((11, dim)))
    assert fm.profile == profile
    io.write_features(fm, tmp_path / "f.dttf")
    raw = (tmp_path / "f.dttf").read_bytes()
    back = io.read_features(tmp_path / "f.dttf", dim)
    assert back.frames.tobytes() == fm.frames.tobytes() and back.profile == profile
    assert io.features_to_bytes(back) == raw
    frames, d = struct.unpack_from("<II", raw, 12)
    assert (frames, d) == (11, dim) and len(raw) == 20 + 4 * frames * d


def test_features_empty():
    buf = io.features_to_bytes(FeatureMatrix.of(np.zeros((0, 67))))
    assert len(buf) == 20
    assert io.features_from_bytes(buf).n_frames == 0


def test_features_errors(rng):
    buf = io.features_to_bytes(FeatureMatrix.of(rng.standard_normal((3, 67))))
    with pytest.raises(io.FormatError, match="dim") as e:
        io.features_from_bytes(buf, expect_dim=23)
    assert e.value.offset == 16
    with pytest.raises(io.FormatError, match="truncated"):
        io.features_from_bytes(buf[:-4])
    with pytest.raises(io.FormatError, match="magic"):
        io.features_from_bytes(b"DTTS" + buf[4:])
    # profile tag that disagrees with the dim
    bad = buf[:8] + struct.pack("<I", 1) + buf[12:]
    with pytest.raises(io.FormatError):
        io.features_from_bytes(bad)


# --- phoneme text ---------------------------------------------------------------

def test_parse_plain_and_timed():
    seq = io.parse_phoneme_line("ni3 hao3", {"ni3": 0, "hao3": 1})
    np.testing.assert_array_equal(seq.ids, [0, 1])
    assert seq.gold_durations is None
    seq = io.parse_phoneme_line("a:5 b:3", {"a": 0, "b": 1})
    np.testing.assert_array_equal(seq.gold_durations, [5, 3])


def test_parse_errors(tmp_path):
    table = {"a": 0, "b": 1}
    with pytest.raises(io.PhonemeParseError) as e:
        io.parse_phoneme_line("a:5 b", table)
    assert e.value.line == 1
    p = tmp_path / "u.txt"
    p.write_text("a b\n\na zz\n")
    with pytest.raises(io.PhonemeParseError, match="zz") as e:
        io.read_phonemes(p, table)
    assert e.value.line == 3
    for bad in ("a:0", "a:x"):
        with pytest.raises(io.PhonemeParseError):
            io.parse_phoneme_line(bad, table)


def test_format_parse_round_trip():
    syms = ["a", "b", "c"]
    seq = PhonemeSequence([2, 0, 1], [3, 1, 2])
    back = io.parse_phoneme_line(io.format_phonemes(seq, syms), {s: i for i, s in enumerate(syms)})
    np.testing.assert_array_equal(back.ids, seq.ids)
    np.testing.assert_array_equal(back.gold_durations, seq.gold_durations)


# --- CLI ------------------------------------------------------------------------

def _kv(line):
    return dict(kv.split("=", 1) for kv in line.split())


@pytest.fixture
def model_file(tmp_path):
    path = tmp_path / "tiny.dtts"
    io.save_model(DeviceTTS(tiny_config(), seed=5), path)
    return path


@pytest.fixture
def utts(tmp_path):
    path = tmp_path / "utts.txt"
    path.write_text("1:2 4:3 7:1 2:4\n3:2 3:2 9:5\n")
    return path


def test_cli_count_world(capsys):
    assert main(["count", "--profile", "world"]) == 0
    rec = _kv(capsys.readouterr().out.strip())
    assert 1.19e6 <= int(rec["params_total"]) <= 1.61e6
    assert 0.074 <= float(rec["gflops_per_s"]) <= 0.124
    assert "gflops_first_frame" in rec and rec["variant"] == "AR"


def test_cli_count_lpcnet_report_dir(tmp_path, capsys):
    out = tmp_path / "rep"
    assert main(["count", "--profile", "lpcnet", "--report-dir", str(out)]) == 0
    rec = _kv(capsys.readouterr().out.strip())
    assert rec["profile_feature_dim"] == "23"
    for name in ("report.txt", "table.txt", "complexity.png", "first_frame.png"):
        assert (out / name).stat().st_size > 0
    assert (out / "complexity.png").read_bytes()[:4] == b"\x89PNG"


def test_cli_synth_frames_match_durations(model_file, utts, tmp_path, capsys):
    out = tmp_path / "o.dttf"
    assert main(["synth", "--model", str(model_file), "--in", str(utts), "--out", str(out),
                 "--use-gold-durations"]) == 0
    assert _kv(capsys.readouterr().out.strip())["utterances"] == "2"
    assert io.read_features(tmp_path / "o_0.dttf", 8).n_frames == 10
    assert io.read_features(tmp_path / "o_1.dttf", 8).n_frames == 9


def test_cli_bench_chunk1_equals_synth(model_file, utts, tmp_path, capsys):
    for gold in ([], ["--use-gold-durations"]):
        main(["synth", "--model", str(model_file), "--in", str(utts), "--out",
              str(tmp_path / "b.dttf"), *gold])
        assert main(["bench", "--model", str(model_file), "--in", str(utts), "--chunk", "1",
                     "--out", str(tmp_path / "s.dttf"), *gold]) == 0
        rec = _kv(capsys.readouterr().out.strip().splitlines()[-1])
        assert int(rec["chunks"]) == int(rec["frames"])
        for i in range(2):
            a = (tmp_path / f"b_{i}.dttf").read_bytes()
            assert a == (tmp_path / f"s_{i}.dttf").read_bytes()


def test_cli_gradcheck_exit_zero(capsys):
    assert main(["gradcheck", "--config", "tiny"]) == 0
    assert _kv(capsys.readouterr().out.strip())["gradcheck"] == "pass"


def test_cli_unknown_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["count", "--bogus"])
    assert e.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_cli_errors_exit_one(tmp_path, capsys):
    assert main(["synth", "--model", str(tmp_path / "none.dtts"), "--in", "x", "--out", "y"]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_train_deterministic(tmp_path, capsys, monkeypatch):
    def run(name, seed_args):
        out = tmp_path / name
        assert main(["train", "--config", "tiny", "--data", "toy:4", "--out", str(out),
                     "--steps", "3", "--batch-size", "2", "--warmup", "10", *seed_args]) == 0
        return out.read_bytes(), read_curve(f"{out}.loss.csv")

    a = run("a.dtts", ["--seed", "3"])
    b = run("b.dtts", ["--seed", "3"])
    assert a == b
    monkeypatch.setenv("DEVICETTS_SEED", "3")
    assert run("c.dtts", []) == a
    assert run("d.dtts", ["--seed", "4"])[0] != a[0]


def test_cli_make_toy_then_train(tmp_path, capsys):
    d = tmp_path / "corpus"
    assert main(["make-toy", "--out", str(d), "--n", "3", "--seed", "1"]) == 0
    data = read_corpus(d, tiny_config())
    assert len(data) == 3
    assert main(["train", "--config", "tiny", "--data", str(d), "--out", str(tmp_path / "m"),
                 "--steps", "2", "--batch-size", "2", "--plot"]) == 0
    assert (tmp_path / "m.loss.png").exists()


def test_config_json_file(tmp_path, capsys):
    cfg = ModelConfig(feature_dim=23, frames_per_step=3)
    p = tmp_path / "c.json"
    p.write_text(cfg.to_json())
    assert main(["count", "--config", str(p)]) == 0
    assert _kv(capsys.readouterr().out.strip())["profile_frames_per_step"] == "3"
