import numpy as np
import pytest

from fcos.checkpoint import (
    checkpoint_training_meta,
    load_checkpoint,
    read_container,
    save_checkpoint,
    write_container,
)
from fcos.engine import forward
from fcos.errors import (
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from fcos.fusion import FusionConfig, prune_model_channels
from fcos.models import build_model


def test_round_trip_is_bitwise(tmp_path):
    g = build_model("residual-cnn1d", seed=12)
    path = tmp_path / "model.ckpt"
    save_checkpoint(g, path, {"epochs": 3, "seed": 12, "dataset_fingerprint": "abc"})
    loaded = load_checkpoint(path)
    assert loaded.state_signature() == g.state_signature()
    assert loaded.preds == g.preds
    assert loaded.input_shape == g.input_shape
    assert loaded.num_classes == g.num_classes
    assert sorted(map(sorted, loaded.coupled_groups)) == sorted(map(sorted, g.coupled_groups))
    for a, b in zip(loaded.nodes, g.nodes):
        assert (a.id, a.kind, a.c_in, a.c_out, a.k, a.stride, a.pad_l, a.pad_r, a.frozen, a.tag) == (
            b.id, b.kind, b.c_in, b.c_out, b.k, b.stride, b.pad_l, b.pad_r, b.frozen, b.tag,
        )
        for name in a.params:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
    # saving the loaded graph reproduces identical bytes
    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2, {"epochs": 3, "seed": 12, "dataset_fingerprint": "abc"})
    assert path.read_bytes() == path2.read_bytes()


def test_training_meta_round_trip(tmp_path):
    g = build_model("plain-cnn1d", widths=[8, 8], input_shape=(2, 64), seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(g, path, {"epochs": 7, "seed": 5, "dataset_fingerprint": "ff00"})
    assert checkpoint_training_meta(path) == {
        "epochs": 7, "seed": 5, "dataset_fingerprint": "ff00",
    }


def test_corrupt_payload_byte_is_checksum_error(tmp_path):
    g = build_model("plain-cnn1d", widths=[8, 8], input_shape=(2, 64), seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(g, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointChecksumError):
        load_checkpoint(path)


def test_version_mismatch_is_distinct_error(tmp_path):
    g = build_model("plain-cnn1d", widths=[8, 8], input_shape=(2, 64), seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(g, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99  # bump the little-endian version field
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_truncated_file_is_distinct_error(tmp_path):
    g = build_model("plain-cnn1d", widths=[8, 8], input_shape=(2, 64), seed=1)
    path = tmp_path / "m.ckpt"
    save_checkpoint(g, path)
    raw = path.read_bytes()
    # drop the tail but keep the crc32 trailer consistent with the remaining body
    import struct
    import zlib

    body = raw[8:-4][: len(raw) // 2]
    path.write_bytes(raw[:8] + body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_bad_magic_is_format_error(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(CheckpointFormatError):
        read_container(path)


def test_container_round_trips_mixed_dtypes(tmp_path):
    path = tmp_path / "c.bin"
    recs = [
        ("f32", np.arange(6, dtype=np.float32).reshape(2, 3)),
        ("f64", np.linspace(0, 1, 4)),
        ("i64", np.array([-1, 2, 3], dtype=np.int64)),
        ("u8", np.array([0, 1, 2], dtype=np.uint8)),
        ("scalar", np.float32(3.5)),
    ]
    write_container(path, {"container": "test", "k": 1}, recs)
    desc, loaded = read_container(path)
    assert desc == {"container": "test", "k": 1}
    for name, arr in recs:
        got = loaded[name]
        assert got.dtype == np.asarray(arr).dtype
        np.testing.assert_array_equal(got, np.asarray(arr))


def test_pruned_model_logits_identical_after_round_trip(tmp_path):
    g = build_model("residual-cnn1d", seed=8)
    pruned, _ = prune_model_channels(g, FusionConfig(keep_ratio=0.25))
    path = tmp_path / "pruned.ckpt"
    save_checkpoint(pruned, path)
    loaded = load_checkpoint(path)
    x = np.random.default_rng(1).normal(size=(4, 2, 128)).astype(np.float32)
    np.testing.assert_array_equal(forward(pruned, x), forward(loaded, x))
