"""Channel generators and training/evaluation datasets.

Three channel families are provided:

* ``rayleigh`` -- i.i.d. CN(0, 1) entries.
* ``los`` -- per-user ULA steering vector toward an angle drawn uniformly in
  (-pi/3, pi/3) with a random common phase, mixed with Rayleigh scatter at a
  Ricean factor (in dB).
* ``nlos`` -- per-user sum of ``num_paths`` steering vectors with CN(0, 1)
  gains and angles uniform in (-pi/2, pi/2), scaled by ``1/sqrt(num_paths)``.

All three have unit average entry power.

Dataset file layout (little endian)::

    offset  size  field
    0       4     magic b"OBPD"
    4       4     format version (u32)
    8       4     U (u32)
    12      4     B (u32)
    16      4     K (u32)
    20      4     channel kind tag (u32)
    24      4     constellation order (u32)
    28      8     seed (u64)
    36      4     CRC32 of payload (u32)
    40      8     Ricean factor in dB (f64)
    48      8     antenna spacing in wavelengths (f64)
    56      4     number of NLoS paths (u32)
    60      4     zero padding
    64      ...   payload: per sample s, H, x0, AHA as complex128 (re, im
                  interleaved), matrices row-major

Joint datasets (kind tag 3) interleave LoS and NLoS samples: even indices
are LoS, odd indices NLoS.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import modulation
from .linalg import as_complex_matrix, as_complex_vector, gram
from .precoders import build_A
from .rng import derive_seed, stream

MAGIC = b"OBPD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIIIIIQIddIxxxx")
assert HEADER.size == 64


class ChannelKind(enum.IntEnum):
    RAYLEIGH = 0
    LOS = 1
    NLOS = 2
    JOINT = 3

    @classmethod
    def parse(cls, value) -> "ChannelKind":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown channel kind {value!r}") from None
        return cls(value)


class DatasetFormatError(ValueError):
    """A dataset file failed a magic, version, checksum or structure check."""


@dataclass
class ChannelModelConfig:
    kind: ChannelKind = ChannelKind.RAYLEIGH
    U: int = 8
    B: int = 128
    ricean_factor_dB: float = 10.0
    antenna_spacing_wavelengths: float = 0.5
    num_paths: int = 20
    seed: int = 0

    def __post_init__(self):
        self.kind = ChannelKind.parse(self.kind)
        if self.U < 1 or self.B < 1:
            raise ValueError("U and B must be positive")
        if self.U > self.B:
            raise ValueError(f"need U <= B, got U={self.U}, B={self.B}")
        if self.num_paths < 1:
            raise ValueError("num_paths must be at least 1")
        if not self.antenna_spacing_wavelengths > 0:
            raise ValueError("antenna spacing must be positive")
        if math.isnan(self.ricean_factor_dB):
            raise ValueError("Ricean factor must be a number")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.name.lower()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ChannelModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown channel config fields: {sorted(unknown)}")
        return cls(**doc)


def _steering(theta: np.ndarray, B: int, spacing: float) -> np.ndarray:
    b = np.arange(B)
    return np.exp(2j * np.pi * spacing * np.sin(np.asarray(theta))[..., None] * b)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def gen_rayleigh(U: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """``U x B`` matrix of i.i.d. CN(0, 1) entries."""
    if U > B:
        raise ValueError(f"need U <= B, got U={U}, B={B}")
    return _cn(rng, (U, B))


def gen_los(config: ChannelModelConfig, rng: np.random.Generator) -> np.ndarray:
    U, B = config.U, config.B
    theta = rng.uniform(-np.pi / 3, np.pi / 3, size=U)
    phase = np.exp(2j * np.pi * rng.uniform(size=U))[:, None]
    los = phase * _steering(theta, B, config.antenna_spacing_wavelengths)
    scatter = _cn(rng, (U, B))
    kf = config.ricean_factor_dB
    if math.isinf(kf):
        return los if kf > 0 else scatter
    k_lin = 10.0 ** (kf / 10.0)
    return np.sqrt(k_lin / (k_lin + 1)) * los + np.sqrt(1 / (k_lin + 1)) * scatter


def gen_nlos(config: ChannelModelConfig, rng: np.random.Generator) -> np.ndarray:
    U, B, P = config.U, config.B, config.num_paths
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=(U, P))
    gains = _cn(rng, (U, P))
    paths = _steering(theta, B, config.antenna_spacing_wavelengths)  # (U, P, B)
    return np.einsum("up,upb->ub", gains, paths) / np.sqrt(P)


def gen_channel(config: ChannelModelConfig, rng: np.random.Generator) -> np.ndarray:
    if config.kind is ChannelKind.RAYLEIGH:
        return gen_rayleigh(config.U, config.B, rng)
    if config.kind is ChannelKind.LOS:
        return gen_los(config, rng)
    if config.kind is ChannelKind.NLOS:
        return gen_nlos(config, rng)
    raise ValueError("joint is a dataset composition, not a channel model")


@dataclass
class ChannelSample:
    s: np.ndarray
    H: np.ndarray
    x0: np.ndarray
    AHA: np.ndarray


def make_sample(H, s) -> ChannelSample:
    """Bundle ``(s, H)`` with the precomputed ``x0 = H^H s`` and ``A^H A``."""
    H = as_complex_matrix(H, "H")
    s = as_complex_vector(s, "s")
    if H.shape[0] != s.shape[0]:
        raise ValueError(f"H has {H.shape[0]} rows but s has {s.shape[0]} entries")
    if not np.any(s):
        raise ValueError("symbol vector s must be nonzero")
    return ChannelSample(s, H, H.conj().T @ s, gram(build_A(H, s)))


def draw_sample(config: ChannelModelConfig, rng: np.random.Generator) -> tuple[ChannelSample, np.ndarray]:
    """One channel plus uniformly drawn 16-QAM symbols; also returns the bits."""
    H = gen_channel(config, rng)
    bits = modulation.random_bits(rng, config.U)
    return make_sample(H, modulation.modulate(bits, config.U)), bits


@dataclass
class Dataset:
    samples: list[ChannelSample]
    config: ChannelModelConfig
    constellation_order: int = 16
    seed: int = field(default=None)

    def __post_init__(self):
        if self.seed is None:
            self.seed = self.config.seed
        if not self.samples:
            raise ValueError("dataset needs at least one sample")
        U, B = self.config.U, self.config.B
        for k, smp in enumerate(self.samples):
            if smp.H.shape != (U, B):
                raise ValueError(f"sample {k} has H of shape {smp.H.shape}, expected {(U, B)}")

    @property
    def K(self) -> int:
        return len(self.samples)

    @property
    def sample_kinds(self) -> list[str]:
        if self.config.kind is ChannelKind.JOINT:
            return ["los" if k % 2 == 0 else "nlos" for k in range(self.K)]
        return [self.config.kind.name.lower()] * self.K

    def stacked(self) -> dict[str, np.ndarray]:
        """Arrays with a leading sample axis: ``s, H, x0, AHA``."""
        return {name: np.stack([getattr(smp, name) for smp in self.samples])
                for name in ("s", "H", "x0", "AHA")}

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return _header_fields(self) == _header_fields(other) and _payload(self) == _payload(other)


def generate_dataset(config: ChannelModelConfig, K: int) -> Dataset:
    """``K`` samples; sample ``k`` uses its own stream derived from ``(seed, k)``."""
    if K < 1:
        raise ValueError("K must be positive")
    if config.kind is ChannelKind.JOINT:
        return generate_joint_dataset(config, K)
    samples = [draw_sample(config, stream(config.seed, "data", k))[0] for k in range(K)]
    return Dataset(samples, config)


def generate_joint_dataset(config: ChannelModelConfig, K: int) -> Dataset:
    """Interleave ``ceil(K/2)`` LoS and ``floor(K/2)`` NLoS samples."""
    parts = {}
    for kind, count in ((ChannelKind.LOS, (K + 1) // 2), (ChannelKind.NLOS, K // 2)):
        sub = replace(config, kind=kind, seed=derive_seed(config.seed, kind.name.lower()))
        parts[kind] = [draw_sample(sub, stream(sub.seed, "data", k))[0] for k in range(count)]
    samples = [parts[ChannelKind.LOS if k % 2 == 0 else ChannelKind.NLOS][k // 2] for k in range(K)]
    return Dataset(samples, replace(config, kind=ChannelKind.JOINT))


def _payload(ds: Dataset) -> bytes:
    chunks = []
    for smp in ds.samples:
        for arr in (smp.s, smp.H, smp.x0, smp.AHA):
            chunks.append(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    return b"".join(chunks)


def _header_fields(ds: Dataset) -> tuple:
    c = ds.config
    return (c.U, c.B, ds.K, int(c.kind), ds.constellation_order, ds.seed,
            float(c.ricean_factor_dB), float(c.antenna_spacing_wavelengths), c.num_paths)


def _sample_bytes(U: int, B: int) -> int:
    return 16 * (U + U * B + B + B * B)


def save_dataset(ds: Dataset, path) -> None:
    payload = _payload(ds)
    U, B, K, kind, order, seed, kf, spacing, paths = _header_fields(ds)
    header = HEADER.pack(MAGIC, FORMAT_VERSION, U, B, K, kind, order, seed,
                         zlib.crc32(payload), kf, spacing, paths)
    Path(path).write_bytes(header + payload)


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise DatasetFormatError(f"{path}: file shorter than the {HEADER.size}-byte header")
    (magic, version, U, B, K, kind, order, seed, crc,
     kf, spacing, paths) = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported format version {version}")
    payload = raw[HEADER.size:]
    if zlib.crc32(payload) != crc:
        raise DatasetFormatError(f"{path}: payload checksum mismatch")
    per = _sample_bytes(U, B)
    if K == 0 or len(payload) != K * per:
        raise DatasetFormatError(
            f"{path}: header declares K={K} samples ({K * per} bytes) but payload has {len(payload)} bytes"
        )
    config = ChannelModelConfig(ChannelKind(kind), U, B, kf, spacing, paths, seed)
    flat = np.frombuffer(payload, dtype="<c16").astype(np.complex128).reshape(K, per // 16)
    splits = np.cumsum([U, U * B, B])
    samples = []
    for row in flat:
        s, H, x0, AHA = np.split(row, splits)
        samples.append(ChannelSample(s.copy(), H.reshape(U, B).copy(), x0.copy(), AHA.reshape(B, B).copy()))
    return Dataset(samples, config, order, seed)


def manifest(ds: Dataset, path=None) -> str:
    kinds = ds.sample_kinds
    doc = {
        "path": str(path) if path is not None else None,
        "K": ds.K,
        "U": ds.config.U,
        "B": ds.config.B,
        "constellation_order": ds.constellation_order,
        "seed": ds.seed,
        "config": ds.config.to_dict(),
        "sample_kind_counts": {k: kinds.count(k) for k in sorted(set(kinds))},
        "payload_crc32": zlib.crc32(_payload(ds)),
    }
    return json.dumps(doc, sort_keys=True)
