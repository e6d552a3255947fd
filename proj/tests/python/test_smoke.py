import json
import math
import struct
import zlib

import numpy as np
import pytest

import svmixer


def tiny_config(**over):
    cfg = svmixer.desk_student_config()
    cfg.update(H=16, L=2, G=2, conv_channels=8, embed_dim=8, frames=49)
    cfg.update(over)
    return cfg


def write_feature_file(path, ids, blocks, teacher_name="py-teacher", layer="final"):
    """Independent writer for the teacher feature-file layout."""
    T, H = blocks[0].shape
    payload = b"".join(np.asarray(b, dtype="<f4").tobytes() for b in blocks)
    header = {
        "n_utts": len(ids),
        "T": T,
        "H_t": H,
        "dtype": "float32",
        "teacher_name": teacher_name,
        "layer": layer,
        "ids": list(ids),
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload) & 0xFFFFFFFF,
    }
    h = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(b"SVFT1" + struct.pack("<II", 1, len(h)) + h + payload)


def test_canonical_costs():
    mixer = svmixer.encoder_layer_cost(dict(svmixer.canonical_config(), block_variant="mlpmixer"), 149)
    assert mixer["total_params"] == 8576177
    tr = svmixer.transformer_layer_cost(1024, 2048, 149)
    assert tr["total_params"] == 8399872
    assert tr["total_macs"] == 1295370240
    sv = svmixer.encoder_layer_cost(None, 149)
    assert sv["total_params"] == sum(r["params"] for r in sv["rows"])
    assert sv["total_params"] < mixer["total_params"]


def test_frames():
    assert svmixer.frames_for_samples(48000) == 149
    assert svmixer.frames_for_samples(16000) == 49


def test_model_encode_and_census(tmp_path):
    cfg = tiny_config()
    m = svmixer.make_model(cfg, seed=3)
    assert m.verify_census()
    assert m.num_params == svmixer.count_params(cfg)["total_params"]
    wav = svmixer.synth_utterance(0, 0, samples=16000)
    out = m.encode(wav)
    assert out["embedding"].shape == (8,)
    assert math.isclose(float(out["layer_weights"].sum()), 1.0, rel_tol=1e-12)
    assert len(out["layer_outputs"]) == 3
    again = m.encode(wav)
    assert np.array_equal(out["embedding"], again["embedding"])

    path = str(tmp_path / "m.svmx")
    m.save(path)
    loaded = svmixer.load_model(path)
    assert json.loads(loaded.config) == json.loads(m.config)
    assert loaded.to_bytes() == m.to_bytes()


def test_encode_rejects_wrong_length():
    m = svmixer.make_model(tiny_config())
    with pytest.raises(svmixer.DimensionError):
        m.encode(np.zeros(12000))


def test_config_errors():
    with pytest.raises(svmixer.ConfigError):
        svmixer.make_model(tiny_config(G=3))
    assert issubclass(svmixer.ChecksumError, svmixer.FormatError)
    assert issubclass(svmixer.FormatError, svmixer.DataError)


def test_metrics():
    assert svmixer.eer([0.9, 0.8, 0.1, 0.2], [True, True, False, False])[0] == 0.0
    assert svmixer.min_dcf([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 0.0
    assert svmixer.cosine_score(np.array([1.0, 0.0]), np.array([1.0, 1.0])) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(svmixer.DataError):
        svmixer.eer([0.1], [True, False])


def test_feature_file_from_python_writer(tmp_path):
    rng = np.random.default_rng(0)
    blocks = [rng.standard_normal((149, 16)).astype(np.float32) for _ in range(2)]
    path = str(tmp_path / "t.svft")
    write_feature_file(path, ["spk0-utt0", "spk0-utt1"], blocks)
    f = svmixer.read_features(path)
    assert f["ids"] == ["spk0-utt0", "spk0-utt1"]
    assert (f["T"], f["H"]) == (149, 16)
    assert f["layer"] is None
    for got, want in zip(f["blocks"], blocks):
        assert np.array_equal(got, want.astype(np.float64))

    raw = bytearray(open(path, "rb").read())
    raw[-1] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(svmixer.ChecksumError):
        svmixer.read_features(path)


def test_feature_file_round_trip_through_core(tmp_path):
    path = str(tmp_path / "c.svft")
    blocks = [np.full((4, 3), 0.25), np.arange(12.0).reshape(4, 3)]
    svmixer.write_features(path, "t", ["a", "b"], blocks, layer=1)
    f = svmixer.read_features(path)
    assert f["layer"] == 1
    assert np.array_equal(f["blocks"][1], blocks[1])
    with pytest.raises(svmixer.DataError):
        svmixer.write_features(path, "t", ["a", "a"], blocks)


def test_wav_round_trip(tmp_path):
    path = str(tmp_path / "x.wav")
    x = np.array([0.0, 0.5, -1.0, 0.25])
    svmixer.write_wav(path, x)
    y, rate = svmixer.read_wav(path)
    assert rate == svmixer.SAMPLE_RATE
    assert np.array_equal(y, x)


def test_gradcheck():
    ok, rows = svmixer.gradcheck()
    assert ok
    assert all(r["passed"] for r in rows)


def test_tiny_training_is_deterministic():
    rc = tiny_config()
    rc.update(crop_seconds=1.0, n_speakers=4, utterances_per_speaker=4, val_utts_per_speaker=2,
              batch_size=4, max_steps=2, hard_k=2)
    m1, info1 = svmixer.train_synthetic(rc)
    m2, info2 = svmixer.train_synthetic(rc)
    assert info1["steps"] == 2
    assert info1["step_losses"] == info2["step_losses"]
    assert m1.to_bytes() == m2.to_bytes()
    assert all(math.isfinite(v) for v in info1["step_losses"])
