"""Binary checkpoint container for the TCN ("BSLP") and frequency CNN ("BSLF").

Layout, all little-endian::

    magic         4 bytes
    version       u16
    n_fields      u16, then n_fields x i32 config fields
    norm stats    2 x 6 x f64 (per-channel mean, std)
    trained       u8
    n_tensors     u32
    per tensor    u8 ndim, ndim x u32 dims, f32 values (ParamStore order)
    crc32         u32 over every preceding byte
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .baselines import FreqCnn, FreqCnnConfig
from .errors import (
    BadMagicError,
    ChecksumError,
    CheckpointShapeError,
    TruncatedError,
    VersionError,
)
from .tcn import TcnConfig, TcnModel

VERSION = 1
MAGIC = {"tcn": b"BSLP", "freqcnn": b"BSLF"}


def _encode_config(model) -> list[int]:
    c = model.config
    if isinstance(model, TcnModel):
        return [c.input_channels, c.window_length, c.kernel_size, c.convs_per_block, c.channels,
                int(round(c.dropout_rate * 1000)), *c.fc_widths, c.num_classes, len(c.dilations), *c.dilations]
    return [c.dft_length, c.kernel_size, c.fc_width, int(round(c.dropout_rate * 1000)),
            len(c.conv_channels), *c.conv_channels]


def _decode_config(kind: str, f: list[int]):
    try:
        if kind == "tcn":
            n_dil = f[9]
            if len(f) != 10 + n_dil:
                raise CheckpointShapeError("config field count does not match the dilation count")
            return TcnConfig(input_channels=f[0], window_length=f[1], kernel_size=f[2], convs_per_block=f[3],
                             channels=f[4], dropout_rate=f[5] / 1000, fc_widths=(f[6], f[7]),
                             num_classes=f[8], dilations=tuple(f[10:10 + n_dil]))
        n_conv = f[4]
        if len(f) != 5 + n_conv:
            raise CheckpointShapeError("config field count does not match the conv layer count")
        return FreqCnnConfig(dft_length=f[0], kernel_size=f[1], fc_width=f[2], dropout_rate=f[3] / 1000,
                             conv_channels=tuple(f[5:5 + n_conv]))
    except IndexError as exc:
        raise CheckpointShapeError("config block too short") from exc


def to_bytes(model) -> bytes:
    fields = _encode_config(model)
    parts = [MAGIC[model.kind], struct.pack("<HH", VERSION, len(fields)), struct.pack(f"<{len(fields)}i", *fields)]
    parts.append(np.asarray(model.norm_mean, "<f8").tobytes() + np.asarray(model.norm_std, "<f8").tobytes())
    parts.append(struct.pack("<BI", int(model.trained), len(model.params)))
    for _, p in model.params.items():
        parts.append(struct.pack(f"<B{p.ndim}I", p.ndim, *p.shape))
        parts.append(p.astype("<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save(model, path) -> None:
    Path(path).write_bytes(to_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.off = buf, 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.off + n})")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes, expected_config=None):
    """Rebuild a model; ``expected_config`` (optional) must match the stored one."""
    r = _Reader(buf)
    magic = r.take(4)
    kinds = {v: k for k, v in MAGIC.items()}
    if magic not in kinds:
        raise BadMagicError(f"unknown checkpoint magic {magic!r}")
    kind = kinds[magic]
    version, n_fields = r.unpack("<HH")
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {VERSION}")
    fields = list(r.unpack(f"<{n_fields}i"))
    mean = np.frombuffer(r.take(48), "<f8").astype(np.float64)
    std = np.frombuffer(r.take(48), "<f8").astype(np.float64)
    trained, n_tensors = r.unpack("<BI")
    tensors = []
    for _ in range(n_tensors):
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        count = int(np.prod(shape))
        tensors.append(np.frombuffer(r.take(4 * count), "<f4").reshape(shape).astype(np.float64))
    (crc,) = r.unpack("<I")
    if r.off != len(buf):
        raise ChecksumError(f"{len(buf) - r.off} trailing bytes after checksum")
    if zlib.crc32(buf[:r.off - 4]) != crc:
        raise ChecksumError("checkpoint CRC32 mismatch")

    config = _decode_config(kind, fields)
    if expected_config is not None and expected_config != config:
        raise CheckpointShapeError(f"checkpoint holds {config}, expected {expected_config}")
    model = TcnModel(config, np.random.default_rng(0)) if kind == "tcn" else FreqCnn(config, np.random.default_rng(0))
    names = model.params.names()
    if len(names) != len(tensors):
        raise CheckpointShapeError(f"checkpoint has {len(tensors)} tensors, config implies {len(names)}")
    for name, t in zip(names, tensors):
        if model.params[name].shape != t.shape:
            raise CheckpointShapeError(f"{name}: stored shape {t.shape}, config implies {model.params[name].shape}")
        model.params.set(name, t)
    model.set_normalization(mean, std)
    model.trained = bool(trained)
    return model


def load(path, expected_config=None):
    return from_bytes(Path(path).read_bytes(), expected_config)
