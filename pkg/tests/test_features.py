import numpy as np
import pytest

from oracles import FEATURE_FILE_3_5_8, PAPER_SSL_DIM
from zstts.errors import DataError, FormatError, InvalidArgumentError
from zstts.features import (
    ExtractorConfig,
    RepresentationStack,
    Source,
    Waveform,
    extract,
    load_external,
    read_wav,
    save_external,
    write_wav,
)

SMALL = ExtractorConfig(n_blocks=4, dim=32)


def tone(seconds=0.2, freq=440.0, sr=16000, amp=0.3):
    n = np.arange(int(seconds * sr))
    return Waveform(amp * np.sin(2 * np.pi * freq * n / sr), sr)


def test_shape_contract():
    w = tone()
    s = extract(w, SMALL)
    F = (w.samples.size - SMALL.window) // SMALL.stride + 1
    assert s.data.shape == (5, F, 32)
    assert s.source is Source.PSEUDO
    assert s.hop_seconds == pytest.approx(0.02)


def test_frozen_determinism():
    w = tone(0.3, 300.0)
    a, b = extract(w, SMALL, seed=4), extract(w, SMALL, seed=4)
    assert a == b
    assert not np.array_equal(a.data, extract(w, SMALL, seed=5).data)


def test_silence_differs_from_tone():
    cfg = ExtractorConfig(n_blocks=2, dim=8)
    silent = Waveform(np.zeros(1200), 16000)
    a, b = extract(silent, cfg), extract(tone(1200 / 16000), cfg)
    assert a.n_frames >= 2
    assert np.any(a.data != b.data)


def test_too_short_names_minimum():
    with pytest.raises(InvalidArgumentError, match="400"):
        extract(Waveform(np.zeros(399), 16000), SMALL)


def test_frame_count_scales():
    cfg = SMALL
    short, long = tone(0.5), tone(1.0)
    f1, f2 = extract(short, cfg).n_frames, extract(long, cfg).n_frames
    assert f2 - 1 >= 2 * (f1 - 1)


def test_stride_shift_moves_layer0_by_one_frame():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, size=4000)
    shifted = np.concatenate([rng.uniform(-0.5, 0.5, size=SMALL.stride), x])
    a = extract(Waveform(x, 16000), SMALL).data[0]
    b = extract(Waveform(shifted, 16000), SMALL).data[0]
    assert np.allclose(b[1:], a, rtol=0, atol=1e-6)


def test_layers_progressively_leave_layer0():
    # deeper layers should drift further from the front end
    rng = np.random.default_rng(1)
    s = extract(Waveform(rng.uniform(-0.3, 0.3, 16000), 16000), SMALL).data
    corr = [np.corrcoef(s[0].ravel(), s[k].ravel())[0, 1] for k in range(1, s.shape[0])]
    assert corr[0] > corr[-1]


def test_container_size_and_round_trip(tmp_path):
    data = np.random.default_rng(2).normal(size=(3, 5, 8)).astype(np.float32)
    stack = RepresentationStack(data, 0.02)
    path = tmp_path / "s.fea"
    save_external(stack, path)
    assert path.stat().st_size == FEATURE_FILE_3_5_8
    back = load_external(path)
    assert back == stack and back.source is Source.EXTERNAL


def test_extracted_round_trip_bit_exact(tmp_path):
    s = extract(tone(0.25, 700.0), SMALL)
    save_external(s, tmp_path / "x.fea")
    assert load_external(tmp_path / "x.fea") == s


def test_paper_scale_shape(tmp_path):
    # 12-block BASE model plus layer 0, 100 frames, 768 dims
    z = np.zeros((13, 100, PAPER_SSL_DIM), dtype=np.float32)
    save_external(RepresentationStack(z, 0.02), tmp_path / "big.fea")
    assert load_external(tmp_path / "big.fea").data.shape == (13, 100, PAPER_SSL_DIM)


def test_npz_layer_mismatch_rejected(tmp_path):
    layers = {f"layer{k}": np.zeros((100, 4), np.float32) for k in range(5)}
    layers["layer3"] = np.zeros((99, 4), np.float32)
    np.savez(tmp_path / "bad.npz", hop_seconds=0.02, **layers)
    with pytest.raises(FormatError, match="disagree"):
        load_external(tmp_path / "bad.npz")


def test_npz_ingestion(tmp_path):
    layers = {f"layer{k}": np.full((7, 4), k, np.float32) for k in range(12)}
    np.savez(tmp_path / "ok.npz", hop_seconds=0.02, **layers)
    s = load_external(tmp_path / "ok.npz")
    assert s.data.shape == (12, 7, 4)
    assert s.data[10, 0, 0] == 10  # numeric, not lexicographic, layer order


def test_non_finite_and_corrupt_files(tmp_path):
    s = RepresentationStack(np.ones((1, 2, 2), np.float32), 0.01)
    save_external(s, tmp_path / "a.fea")
    blob = bytearray((tmp_path / "a.fea").read_bytes())
    blob[-4:] = np.array([np.nan], "<f4").tobytes()
    (tmp_path / "nan.fea").write_bytes(bytes(blob))
    with pytest.raises(DataError):
        load_external(tmp_path / "nan.fea")
    (tmp_path / "short.fea").write_bytes(bytes(blob[:-2]))
    with pytest.raises(FormatError):
        load_external(tmp_path / "short.fea")
    (tmp_path / "magic.fea").write_bytes(b"XXXXXXXX" + bytes(blob[8:]))
    with pytest.raises(FormatError):
        load_external(tmp_path / "magic.fea")


def test_empty_stack_rejected_before_write(tmp_path):
    with pytest.raises(InvalidArgumentError):
        save_external(RepresentationStack(np.zeros((3, 0, 8), np.float32), 0.02), tmp_path / "e.fea")
    assert not (tmp_path / "e.fea").exists()


def test_wav_round_trip(tmp_path):
    w = tone(0.05)
    write_wav(tmp_path / "t.wav", w)
    back = read_wav(tmp_path / "t.wav")
    assert back.sample_rate == 16000
    assert np.max(np.abs(back.samples - w.samples)) <= 1 / 32767
