"""Binary checkpoints holding named MLPs.

Layout (little-endian)::

    magic     8 bytes  b"DSNCKPT1"
    version   u32      (currently 1)
    count     u32      number of nets
    per net:
      name_len  u16, name  utf-8 bytes
      layers    u32
      per layer:
        rows u32, cols u32, activation u8 (0 = relu, 1 = identity)
        weight  rows*cols f64 row-major
        bias    rows f64

Nets are written in the order given; the standard names are ``encoder``,
``head``, ``classifier`` and optionally ``response`` (the max-response
net) and ``pretrained`` (the classifier before alternating training, used
by every policy other than ``dsn``).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClipClassifier
from .errors import FormatError
from .numeric import Layer, Mlp
from .sampler import ObservationNet
from .synthgen import atomic_write_bytes

MAGIC = b"DSNCKPT1"
VERSION = 1
_ACT_CODES = {"relu": 0, "identity": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


def encode_nets(nets: dict[str, Mlp]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(nets))]
    for name, net in nets.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            rows, cols = layer.weight.shape
            parts.append(struct.pack("<IIB", rows, cols, _ACT_CODES[layer.activation]))
            parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_nets(buf: bytes) -> dict[str, Mlp]:
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated checkpoint: need {n} bytes", off)
        chunk = buf[off: off + n]
        off += n
        return chunk

    magic = take(8)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 8)
    nets: dict[str, Mlp] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (n_layers,) = struct.unpack("<I", take(4))
        layers = []
        for _ in range(n_layers):
            at = off
            rows, cols, act = struct.unpack("<IIB", take(9))
            if act not in _ACT_NAMES:
                raise FormatError(f"unknown activation code {act}", at)
            w = np.frombuffer(take(rows * cols * 8), dtype="<f8").reshape(rows, cols).astype(np.float64)
            b = np.frombuffer(take(rows * 8), dtype="<f8").astype(np.float64)
            layers.append(Layer(w, b, _ACT_NAMES[act]))
        try:
            nets[name] = Mlp(layers)
        except ValueError as exc:
            raise FormatError(f"net {name!r}: {exc}", off) from None
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return nets


@dataclass
class ModelBundle:
    obs: ObservationNet
    clf: ClipClassifier
    response: ClipClassifier | None = None
    pretrained: ClipClassifier | None = None

    def baseline_classifier(self) -> ClipClassifier:
        """Classifier for the non-DSN policies: the pretrained one when stored."""
        return self.pretrained if self.pretrained is not None else self.clf


def model_nets(bundle: ModelBundle) -> dict[str, Mlp]:
    nets = {"encoder": bundle.obs.encoder, "head": bundle.obs.head, "classifier": bundle.clf.net}
    if bundle.response is not None:
        nets["response"] = bundle.response.net
    if bundle.pretrained is not None:
        nets["pretrained"] = bundle.pretrained.net
    return nets


def save_checkpoint(path, bundle: ModelBundle) -> str:
    data = encode_nets(model_nets(bundle))
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    nets = decode_nets(path.read_bytes())
    missing = {"encoder", "head", "classifier"} - nets.keys()
    if missing:
        raise FormatError(f"checkpoint lacks nets {sorted(missing)}")
    optional = {k: ClipClassifier(nets[k]) if k in nets else None for k in ("response", "pretrained")}
    return ModelBundle(ObservationNet(nets["encoder"], nets["head"]), ClipClassifier(nets["classifier"]), **optional)
