"""Web model format: ``model.json`` topology plus sharded little-endian weights.

Weights are concatenated in manifest order and cut into shards of exactly
``SHARD_BYTES`` (the last one may be shorter). Optional affine uint8
quantization stores ``min`` and ``scale`` per weight; a code ``v`` decodes
to ``min + v * scale``.
"""
from __future__ import annotations

import copy
import json
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ManifestMismatchError, UnknownLayerError
from .layers import SGD, Dense, Sequential

SHARD_BYTES = 4 * 1024 * 1024
MODEL_FILE = "model.json"
FORMAT = "texgrad-layers-model"
BYTE_ORDER = "little"


def shard_name(k: int) -> str:
    return f"weights.bin.shard{k}"


def split_shards(data: bytes, shard_bytes: int = SHARD_BYTES) -> list[bytes]:
    if not data:
        return []
    return [data[i:i + shard_bytes] for i in range(0, len(data), shard_bytes)]


def quantize_uint8(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Affine uint8 codes; returns (codes, min, scale)."""
    w = np.asarray(values, np.float64).reshape(-1)
    if w.size == 0:
        return np.zeros(0, np.uint8), 0.0, 1.0
    lo, hi = float(w.min()), float(w.max())
    if hi == lo:
        return np.zeros(w.size, np.uint8), lo, 1.0
    scale = (hi - lo) / 255.0
    codes = np.clip(np.rint((w - lo) / scale), 0, 255).astype(np.uint8)
    return codes, lo, scale


def dequantize_uint8(codes: np.ndarray, minimum: float, scale: float) -> np.ndarray:
    return (minimum + np.asarray(codes, np.float64) * scale).astype(np.float32)


def encode_weights(named: Sequence[tuple[str, np.ndarray]], quantize: bool = False
                   ) -> tuple[bytes, list[dict[str, Any]]]:
    chunks, specs = [], []
    for name, value in named:
        arr = np.asarray(value, np.float32)
        spec: dict[str, Any] = {"name": name, "shape": list(arr.shape), "dtype": "float32"}
        if quantize:
            codes, lo, scale = quantize_uint8(arr)
            spec["quantization"] = {"dtype": "uint8", "min": lo, "scale": scale}
            chunks.append(codes.tobytes())
        else:
            chunks.append(arr.astype("<f4").tobytes())
        specs.append(spec)
    return b"".join(chunks), specs


def spec_nbytes(spec: dict[str, Any]) -> int:
    count = int(np.prod(spec["shape"], dtype=np.int64))
    return count * (1 if "quantization" in spec else 4)


def decode_weights(data: bytes, specs: Sequence[dict[str, Any]]) -> dict[str, np.ndarray]:
    expected = sum(spec_nbytes(s) for s in specs)
    if len(data) != expected:
        raise ManifestMismatchError(f"weight data has {len(data)} bytes, manifest specifies {expected}")
    out, offset = {}, 0
    for spec in specs:
        n = spec_nbytes(spec)
        raw = data[offset:offset + n]
        offset += n
        q = spec.get("quantization")
        if q is not None:
            if q.get("dtype") != "uint8":
                raise ManifestMismatchError(f"unsupported quantization dtype {q.get('dtype')!r}")
            arr = dequantize_uint8(np.frombuffer(raw, np.uint8), q["min"], q["scale"])
        else:
            arr = np.frombuffer(raw, "<f4").astype(np.float32)
        out[spec["name"]] = arr.reshape(spec["shape"])
    return out


@dataclass
class ModelArtifacts:
    topology: dict[str, Any]
    weight_specs: list[dict[str, Any]]
    weight_data: bytes
    training_config: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def weight_bytes(self) -> int:
        return len(self.weight_data)

    def manifest(self) -> list[dict[str, Any]]:
        shards = split_shards(self.weight_data)
        return [{
            "paths": [shard_name(k) for k in range(1, len(shards) + 1)],
            "weights": copy.deepcopy(self.weight_specs),
            "byteLength": len(self.weight_data),
            "shardSizes": [len(s) for s in shards],
            "shardCrc32": [zlib.crc32(s) for s in shards],
            "byteOrder": BYTE_ORDER,
        }]

    def model_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"format": FORMAT, "modelTopology": copy.deepcopy(self.topology),
                               "weightsManifest": self.manifest()}
        if self.training_config is not None:
            doc["trainingConfig"] = copy.deepcopy(self.training_config)
        return doc


def to_artifacts(model: Sequential, quantize: bool = False) -> ModelArtifacts:
    if not model.layers:
        raise ValueError("cannot save a model without layers")
    named = [(w.name, w.numpy()) for w in model.weights]
    data, specs = encode_weights(named, quantize)
    topology = {"class_name": "Sequential", "config": model.get_config()}
    training = None
    if model.compiled:
        training = {"loss": model.loss, "optimizer_config": model.optimizer.get_config()}
    return ModelArtifacts(topology, specs, data, training)


def prune_for_inference(artifacts: ModelArtifacts) -> ModelArtifacts:
    """Drop training-only content (loss and optimizer configuration)."""
    return ModelArtifacts(copy.deepcopy(artifacts.topology), copy.deepcopy(artifacts.weight_specs),
                          artifacts.weight_data, None, dict(artifacts.extra))


def write_artifacts(artifacts: ModelArtifacts, location: str | os.PathLike) -> Path:
    root = Path(location)
    root.mkdir(parents=True, exist_ok=True)
    for k, chunk in enumerate(split_shards(artifacts.weight_data), start=1):
        (root / shard_name(k)).write_bytes(chunk)
    text = json.dumps(artifacts.model_json(), indent=2, sort_keys=True)
    (root / MODEL_FILE).write_text(text + "\n", encoding="utf-8")
    return root


def save(model: Sequential, location: str | os.PathLike, quantize: bool = False,
         include_optimizer: bool = True) -> ModelArtifacts:
    artifacts = to_artifacts(model, quantize)
    if not include_optimizer:
        artifacts = prune_for_inference(artifacts)
    write_artifacts(artifacts, location)
    return artifacts


class DirectoryLoader:
    """Reads artifacts from a local directory; other transports can mirror this interface."""

    def __init__(self, location: str | os.PathLike):
        self.root = Path(location)

    def read_json(self) -> dict[str, Any]:
        return json.loads((self.root / MODEL_FILE).read_text(encoding="utf-8"))

    def read_bytes(self, path: str) -> bytes:
        return (self.root / path).read_bytes()

    def load(self) -> ModelArtifacts:
        doc = self.read_json()
        specs: list[dict[str, Any]] = []
        data = bytearray()
        for group in doc.get("weightsManifest", []):
            order = group.get("byteOrder", BYTE_ORDER)
            if order != BYTE_ORDER:
                raise ManifestMismatchError(f"unsupported byte order {order!r}")
            chunk = bytearray()
            for i, path in enumerate(group["paths"]):
                shard = self.read_bytes(path)
                sizes, crcs = group.get("shardSizes"), group.get("shardCrc32")
                if sizes is not None and (i >= len(sizes) or len(shard) != sizes[i]):
                    raise ManifestMismatchError(f"shard {path} has {len(shard)} bytes, manifest expects "
                                                f"{sizes[i] if sizes and i < len(sizes) else '?'}")
                if crcs is not None and (i >= len(crcs) or zlib.crc32(shard) != crcs[i]):
                    raise ManifestMismatchError(f"shard {path} content does not match its checksum")
                chunk += shard
            want = sum(spec_nbytes(s) for s in group["weights"])
            if len(chunk) != want or len(chunk) != group.get("byteLength", want):
                raise ManifestMismatchError(
                    f"weight group has {len(chunk)} bytes; specs need {want}, "
                    f"manifest declares {group.get('byteLength', want)}")
            specs.extend(group["weights"])
            data += chunk
        return ModelArtifacts(doc["modelTopology"], specs, bytes(data), doc.get("trainingConfig"))


def from_artifacts(artifacts: ModelArtifacts) -> Sequential:
    topo = artifacts.topology
    if topo.get("class_name") != "Sequential":
        raise UnknownLayerError(f"unsupported model class {topo.get('class_name')!r}")
    weights = decode_weights(artifacts.weight_data, artifacts.weight_specs)
    model = Sequential()
    for spec in topo["config"]["layers"]:
        if spec.get("class_name") != "Dense":
            raise UnknownLayerError(f"unknown layer type {spec.get('class_name')!r}")
        cfg = spec["config"]
        model.add(Dense(cfg["units"], input_dim=cfg.get("input_dim"),
                        activation=cfg.get("activation", "linear"), name=cfg.get("name")),
                  initialize=False)
    values = []
    for w in model.weights:
        if w.name not in weights:
            raise ManifestMismatchError(f"manifest has no weight named {w.name!r}")
        values.append(weights[w.name])
    model.set_weights(values)
    training = artifacts.training_config
    if training is not None:
        opt = training.get("optimizer_config", {})
        if opt.get("class_name", "SGD") != "SGD":
            raise ManifestMismatchError(f"unknown optimizer {opt.get('class_name')!r}")
        model.compile(training.get("loss", "meanSquaredError"), SGD(opt.get("learning_rate", 0.01)))
    return model


def load(location: str | os.PathLike | DirectoryLoader) -> Sequential:
    loader = location if isinstance(location, DirectoryLoader) else DirectoryLoader(location)
    return from_artifacts(loader.load())
