import numpy as np
import pytest

from avse import checkpoint, model


def test_blob_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    blobs = {
        "a/w": rng.standard_normal((3, 4)).astype(np.float32),
        "bn/a/mean": rng.standard_normal(4).astype(np.float32),
        "scalarish": np.float32(2.5).reshape(()),
        "deep": rng.standard_normal((2, 3, 4)).astype(np.float32),
    }
    path = tmp_path / "m.ckpt"
    checkpoint.write_checkpoint(path, blobs)
    back = checkpoint.read_checkpoint(path)
    assert set(back) == set(blobs)
    for name in blobs:
        assert back[name].shape == np.asarray(blobs[name]).shape
        assert np.array_equal(back[name], np.asarray(blobs[name], dtype=np.float32))


def test_file_header(tmp_path):
    path = tmp_path / "m.ckpt"
    checkpoint.write_checkpoint(path, {"x": np.zeros(2, dtype=np.float32)})
    raw = path.read_bytes()
    assert raw[:4] == b"AVSE"
    version, count = np.frombuffer(raw[4:12], dtype="<u4")
    assert version == 1 and count == 1


def test_write_is_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    blobs = {f"p{i}": rng.standard_normal(5).astype(np.float32) for i in range(6)}
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    checkpoint.write_checkpoint(a, blobs)
    checkpoint.write_checkpoint(b, dict(reversed(list(blobs.items()))))
    assert a.read_bytes() == b.read_bytes()


def test_rejects_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.read_checkpoint(path)
    good = tmp_path / "good.ckpt"
    checkpoint.write_checkpoint(good, {"x": np.ones((4, 4), dtype=np.float32)})
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(good.read_bytes()[:-20])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.read_checkpoint(trunc)


def test_model_parameters_round_trip(tmp_path):
    cfg = model.NetConfig.toy(visual_dim=8, mag_channels=12, phase_channels=8, n_mels=6,
                              freq_bins=9)
    mp = model.ModelParameters(cfg, seed=3)
    mp.bn_states["audio/block00"].mean += 0.25  # make stats non-trivial
    path = tmp_path / "model.ckpt"
    checkpoint.write_checkpoint(path, mp.to_blobs())
    restored = model.ModelParameters.from_blobs(checkpoint.read_checkpoint(path))
    assert restored.cfg == cfg
    for name, p in mp.params.items():
        assert np.array_equal(restored.params[name].values, p.values), name
    for name, st in mp.bn_states.items():
        assert np.array_equal(restored.bn_states[name].mean, st.mean)
        assert np.array_equal(restored.bn_states[name].var, st.var)


def test_bn_stats_use_reserved_prefix():
    mp = model.ModelParameters(model.NetConfig.toy(), seed=0)
    blobs = mp.to_blobs()
    bn_names = [n for n in blobs if n.startswith("bn/")]
    assert len(bn_names) == 2 * len(mp.bn_states)
    assert all(n.endswith(("/mean", "/var")) for n in bn_names)


def test_missing_parameter_detected(tmp_path):
    cfg = model.NetConfig.toy(visual_dim=8, mag_channels=12, phase_channels=8, n_mels=6,
                              freq_bins=9)
    mp = model.ModelParameters(cfg, seed=3)
    blobs = mp.to_blobs()
    del blobs["mask/w"]
    path = tmp_path / "broken.ckpt"
    checkpoint.write_checkpoint(path, blobs)
    with pytest.raises(ValueError, match="mask/w"):
        model.ModelParameters.from_blobs(checkpoint.read_checkpoint(path))
