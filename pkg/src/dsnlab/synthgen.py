"""Synthetic videos with planted discriminative clips.

A video of class ``j`` is an ``M x N x D`` grid of clip features. In each
non-background section exactly one clip carries the class signature
(``s * sig_j + noise``); the other clips are noise, or with probability
``kappa`` a confuser carrying some other class's signature.

Binary layout (little-endian) written by :func:`write_dataset`::

    magic         8 bytes  b"DSNDATA1"
    version       u32      (currently 1)
    num_classes   u32
    sections      u32
    clips         u32
    feature_dim   u32
    signal        f64
    noise_sigma   f64
    background    f64
    confuser      f64
    train_count   u32
    test_count    u32
    seed          u64
    signatures    num_classes * feature_dim f64
    then per video (train split then test split, id order):
    video_id      u32
    label         u32
    planted       sections * i32   (-1 = background section)
    features      sections * clips * feature_dim f64
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .numeric import Prng

MAGIC = b"DSNDATA1"
VERSION = 1
_HEADER = struct.Struct("<8sI4I4d2IQ")


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 10
    sections: int = 2
    clips_per_section: int = 3
    feature_dim: int = 16
    signal_strength: float = 2.0
    noise_sigma: float = 1.0
    background_section_prob: float = 0.0
    confuser_prob: float = 0.2
    train_count: int = 2000
    test_count: int = 1000
    seed: int = 7

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        for name in ("sections", "clips_per_section", "feature_dim", "train_count", "test_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.signal_strength < 0:
            raise ConfigError("signal_strength must be >= 0")
        if not self.noise_sigma > 0:
            raise ConfigError("noise_sigma must be > 0")
        if not 0.0 <= self.background_section_prob < 1.0:
            raise ConfigError("background_section_prob must lie in [0, 1)")
        if not 0.0 <= self.confuser_prob < 1.0:
            raise ConfigError("confuser_prob must lie in [0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")


@dataclass
class SyntheticVideo:
    video_id: int
    label: int
    features: np.ndarray  # (M, N, D)
    planted: np.ndarray  # (M,) int, -1 where the section is background

    def __eq__(self, other):
        if not isinstance(other, SyntheticVideo):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.label == other.label
            and np.array_equal(self.planted, other.planted)
            and self.features.tobytes() == other.features.tobytes()
        )


@dataclass
class Dataset:
    spec: DatasetSpec
    signatures: np.ndarray  # (J, D) unit rows
    train: list[SyntheticVideo]
    test: list[SyntheticVideo]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.signatures.tobytes() == other.signatures.tobytes()
            and self.train == other.train
            and self.test == other.test
        )


def _make_video(video_id: int, spec: DatasetSpec, signatures: np.ndarray, rng: Prng):
    J, M, N = spec.num_classes, spec.sections, spec.clips_per_section
    s, sigma = spec.signal_strength, spec.noise_sigma
    label = int(rng.integers(J))
    feats = rng.normal(sigma, size=(M, N, spec.feature_dim))
    planted = np.full(M, -1, dtype=np.int32)
    for m in range(M):
        if rng.random() >= spec.background_section_prob:
            planted[m] = rng.integers(N)
        for n in range(N):
            if n == planted[m]:
                feats[m, n] += s * signatures[label]
            elif rng.random() < spec.confuser_prob:
                other = int(rng.integers(J - 1))
                other += other >= label
                feats[m, n] += s * signatures[other]
    return SyntheticVideo(video_id, label, feats, planted)


def generate_dataset(spec: DatasetSpec, rng: Prng | None = None) -> Dataset:
    spec.validate()
    if rng is None:
        rng = Prng(spec.seed).substream("data")
    sig = rng.normal(size=(spec.num_classes, spec.feature_dim))
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    total = spec.train_count + spec.test_count
    videos = [_make_video(i, spec, sig, rng) for i in range(total)]
    return Dataset(spec, sig, videos[: spec.train_count], videos[spec.train_count:])


def encode_dataset(ds: Dataset) -> bytes:
    sp = ds.spec
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, sp.num_classes, sp.sections, sp.clips_per_section,
            sp.feature_dim, sp.signal_strength, sp.noise_sigma,
            sp.background_section_prob, sp.confuser_prob,
            sp.train_count, sp.test_count, sp.seed,
        ),
        ds.signatures.astype("<f8").tobytes(),
    ]
    for v in ds.train + ds.test:
        parts.append(struct.pack("<II", v.video_id, v.label))
        parts.append(v.planted.astype("<i4").tobytes())
        parts.append(v.features.astype("<f8").tobytes())
    return b"".join(parts)


def decode_dataset(buf: bytes) -> Dataset:
    if len(buf) < 8:
        raise FormatError("file too short for magic", len(buf))
    if buf[:8] != MAGIC:
        raise FormatError(f"bad magic {buf[:8]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header", len(buf))
    head = _HEADER.unpack_from(buf, 0)
    version = head[1]
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    spec = DatasetSpec(*head[2:])
    try:
        spec.validate()
    except ConfigError as exc:
        raise FormatError(f"invalid spec in header: {exc}", 12) from None
    J, M, N, D = spec.num_classes, spec.sections, spec.clips_per_section, spec.feature_dim
    off = _HEADER.size

    def take(nbytes: int) -> bytes:
        nonlocal off
        if off + nbytes > len(buf):
            raise FormatError(f"truncated payload: need {nbytes} bytes", off)
        chunk = buf[off: off + nbytes]
        off += nbytes
        return chunk

    sig = np.frombuffer(take(J * D * 8), dtype="<f8").reshape(J, D).astype(np.float64)
    videos = []
    for _ in range(spec.train_count + spec.test_count):
        start = off
        vid, label = struct.unpack("<II", take(8))
        planted = np.frombuffer(take(M * 4), dtype="<i4").astype(np.int32)
        feats = np.frombuffer(take(M * N * D * 8), dtype="<f8").reshape(M, N, D).astype(np.float64)
        if label >= J or np.any(planted >= N) or np.any(planted < -1):
            raise FormatError(f"video {vid} has out-of-range label or planted index", start)
        videos.append(SyntheticVideo(vid, label, feats, planted))
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return Dataset(spec, sig, videos[: spec.train_count], videos[spec.train_count:])


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_dataset(ds: Dataset, path) -> str:
    """Write ``ds`` atomically; returns the SHA-256 of the file contents."""
    data = encode_dataset(ds)
    atomic_write_bytes(path, data)
    return hashlib.sha256(data).hexdigest()


def read_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


def spec_field_names() -> list[str]:
    return [f.name for f in fields(DatasetSpec)]
