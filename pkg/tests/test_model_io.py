import json
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import texgrad as tg
from texgrad import layers as L
from texgrad import model_io as io
from texgrad.errors import ManifestMismatchError, UnknownLayerError

MIB = 1024 * 1024


def big_model(rng, input_dim=2559, units=1024):
    """Dense(1024) on 2559 inputs: exactly 10 MiB of float32 weights."""
    m = L.sequential()
    m.add(L.dense(units=units, input_dim=input_dim), initialize=False)
    m.set_weights([rng.uniform(-1, 1, (input_dim, units)).astype(np.float32),
                   rng.uniform(-1, 1, units).astype(np.float32)])
    return m


def small_model(seed=4):
    m = L.sequential(seed=seed)
    m.add(L.dense(units=8, input_dim=3, activation="relu"))
    m.add(L.dense(units=2, activation="sigmoid"))
    m.compile(optimizer=L.sgd(0.05))
    return m


def shard_sizes(path):
    return sorted((p.name, p.stat().st_size) for p in path.glob("weights.bin.shard*"))


def test_ten_mib_shards_4_4_2(cpu, tmp_path, rng):
    m = big_model(rng)
    io.save(m, tmp_path)
    assert shard_sizes(tmp_path) == [("weights.bin.shard1", 4 * MIB), ("weights.bin.shard2", 4 * MIB),
                                     ("weights.bin.shard3", 2 * MIB)]
    loaded = io.load(tmp_path)
    for a, b in zip(m.get_weights(), loaded.get_weights()):
        assert a.tobytes() == b.tobytes()


def test_one_kib_single_shard(cpu, tmp_path, rng):
    weights = [("w", rng.uniform(size=256).astype(np.float32))]
    data, specs = io.encode_weights(weights)
    io.write_artifacts(io.ModelArtifacts({"class_name": "Sequential", "config": {"layers": []}}, specs, data), tmp_path)
    assert shard_sizes(tmp_path) == [("weights.bin.shard1", 1024)]


def test_split_shards_arithmetic():
    assert [len(s) for s in io.split_shards(b"x" * 10, 4)] == [4, 4, 2]
    assert io.split_shards(b"") == []
    assert io.shard_name(1) == "weights.bin.shard1"


def test_manifest_format(cpu, tmp_path):
    m = small_model()
    io.save(m, tmp_path)
    doc = json.loads((tmp_path / "model.json").read_text(encoding="utf-8"))
    group = doc["weightsManifest"][0]
    assert group["paths"] == ["weights.bin.shard1"]
    assert group["byteOrder"] == "little"
    assert [w["name"] for w in group["weights"]] == ["dense_1/kernel", "dense_1/bias",
                                                     "dense_2/kernel", "dense_2/bias"]
    raw = (tmp_path / "weights.bin.shard1").read_bytes()
    assert group["shardCrc32"] == [zlib.crc32(raw)]
    first = np.frombuffer(raw[:4], "<f4")[0]
    assert first == m.get_weights()[0].ravel()[0]


def test_round_trip_bitwise_and_predict(cpu, tmp_path):
    m = small_model()
    x, y = tg.tensor(np.ones((2, 3), np.float32)), tg.tensor(np.zeros((2, 2), np.float32))
    m.fit(x, y, epochs=3)
    io.save(m, tmp_path)
    loaded = io.load(tmp_path)
    assert loaded.get_config() == m.get_config()
    for a, b in zip(m.get_weights(), loaded.get_weights()):
        assert a.tobytes() == b.tobytes()
    assert m.predict(x).numpy().tobytes() == loaded.predict(x).numpy().tobytes()
    assert loaded.compiled and loaded.optimizer.learning_rate == 0.05


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 300), st.floats(-100, 100), st.floats(0, 50), st.integers(0, 2**31))
def test_quantization_error_bound(n, center, spread, seed):
    w = (center + np.random.default_rng(seed).uniform(-spread, spread, n)).astype(np.float32)
    codes, lo, scale = io.quantize_uint8(w)
    back = io.dequantize_uint8(codes, lo, scale)
    assert codes.dtype == np.uint8
    if w.max() == w.min():
        assert scale == 1 and not codes.any() and np.array_equal(back, w)
    else:
        assert np.all(np.abs(back.astype(np.float64) - w) <= scale / 2 * (1 + 1e-6) + 1e-6 * abs(lo))


def test_quantized_size_ratio(cpu, tmp_path, rng):
    m = big_model(rng, input_dim=255, units=256)
    full, quant = tmp_path / "full", tmp_path / "quant"
    io.save(m, full)
    art = io.save(m, quant, quantize=True)
    total = lambda p: sum(size for _, size in shard_sizes(p))
    assert total(quant) / total(full) == 0.25
    overhead = (quant / "model.json").stat().st_size - (full / "model.json").stat().st_size
    assert 0 < overhead < 1024
    loaded = io.load(quant)
    for spec, orig, got in zip(art.weight_specs, m.get_weights(), loaded.get_weights()):
        scale = spec["quantization"]["scale"]
        assert np.max(np.abs(orig.astype(np.float64) - got)) <= scale / 2 + 1e-6


def test_truncated_shard(cpu, tmp_path):
    io.save(small_model(), tmp_path)
    shard = tmp_path / "weights.bin.shard1"
    shard.write_bytes(shard.read_bytes()[:-4])
    with pytest.raises(ManifestMismatchError) as exc:
        io.load(tmp_path)
    assert exc.value.code == "MANIFEST_MISMATCH"


def test_permuted_paths_detected(cpu, tmp_path, rng):
    io.save(big_model(rng), tmp_path)
    doc_path = tmp_path / "model.json"
    doc = json.loads(doc_path.read_text())
    paths = doc["weightsManifest"][0]["paths"]
    doc["weightsManifest"][0]["paths"] = [paths[1], paths[0], paths[2]]
    doc_path.write_text(json.dumps(doc))
    with pytest.raises(ManifestMismatchError):
        io.load(tmp_path)


def test_unknown_layer(cpu, tmp_path):
    io.save(small_model(), tmp_path)
    doc_path = tmp_path / "model.json"
    doc = json.loads(doc_path.read_text())
    doc["modelTopology"]["config"]["layers"][0]["class_name"] = "Conv2D"
    doc_path.write_text(json.dumps(doc))
    with pytest.raises(UnknownLayerError):
        io.load(tmp_path)


def test_prune_for_inference(cpu, tmp_path):
    m = small_model()
    art = io.to_artifacts(m)
    pruned = io.prune_for_inference(art)
    assert pruned.training_config is None
    assert io.prune_for_inference(pruned).model_json() == pruned.model_json()
    assert len(json.dumps(pruned.model_json())) <= len(json.dumps(art.model_json()))
    io.write_artifacts(pruned, tmp_path)
    loaded = io.load(tmp_path)
    assert not loaded.compiled
    x = tg.tensor(np.ones((1, 3), np.float32))
    assert loaded.predict(x).numpy().tobytes() == m.predict(x).numpy().tobytes()
