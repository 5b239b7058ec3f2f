"""Binary checkpoint format (all integers little-endian).

    offset 0   4s   magic b"DSEG"
           4   u32  version (1)
           8   u8   arch tag (0 proposed, 1 unet), u8 upsample tag (0 bilinear, 1 transposed)
          10   u32 x 11  in_channels, base_width, stage_widths[5], dense_units,
                         attn_ratio, se_ratio, spatial_kernel
               u32  out_channels
               u32  entry count
    per entry: u16 name length, name (utf-8), u8 trainable, u8 ndim,
               u32 x ndim dims, float32 data (little-endian, row-major)

Entries appear in ParamStore insertion order, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .errors import CheckpointError
from .models import ARCHS, Model, ModelSpec, build_model

MAGIC = b"DSEG"
VERSION = 1
UPSAMPLE_MODES = ("bilinear", "transposed")
_SPEC_FMT = "<BB12I"


def _encode_spec(spec: ModelSpec) -> bytes:
    return struct.pack(
        _SPEC_FMT,
        ARCHS.index(spec.arch), UPSAMPLE_MODES.index(spec.upsample),
        spec.in_channels, spec.base_width, *spec.stage_widths,
        spec.dense_units, spec.attn_ratio, spec.se_ratio, spec.spatial_kernel, spec.out_channels,
    )


def encode(model: Model) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _encode_spec(model.spec), struct.pack("<I", len(model.params))]
    for name, entry in model.params.items():
        raw = name.encode("utf-8")
        data = entry.tensor.data
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", int(entry.trainable), data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path: Union[str, os.PathLike]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint while reading {what}", offset=self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(buf: bytes) -> Model:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic, not a DSEG checkpoint", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})", offset=4)
    spec_at = r.pos
    fields = r.unpack(_SPEC_FMT, "model spec")
    arch_tag, up_tag = fields[0], fields[1]
    if arch_tag >= len(ARCHS) or up_tag >= len(UPSAMPLE_MODES):
        raise CheckpointError("unknown architecture or upsample tag", offset=spec_at)
    ints = fields[2:]
    spec = ModelSpec(
        arch=ARCHS[arch_tag], in_channels=ints[0], base_width=ints[1], stage_widths=tuple(ints[2:7]),
        dense_units=ints[7], attn_ratio=ints[8], se_ratio=ints[9], spatial_kernel=ints[10],
        out_channels=ints[11], upsample=UPSAMPLE_MODES[up_tag],
    )
    (count,) = r.unpack("<I", "entry count")
    entries = []
    for i in range(count):
        at = r.pos
        (nlen,) = r.unpack("<H", f"entry {i} name length")
        name = r.take(nlen, f"entry {i} name").decode("utf-8")
        trainable, ndim = r.unpack("<BB", f"entry {name} flags")
        dims = r.unpack(f"<{ndim}I", f"entry {name} dims")
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size, f"entry {name} data"), dtype="<f4").reshape(dims)
        entries.append((at, name, bool(trainable), data))
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last entry", offset=r.pos)

    model = build_model(spec)
    expected = model.params.signature()
    if len(expected) != len(entries):
        raise CheckpointError(f"checkpoint has {len(entries)} entries, spec implies {len(expected)}")
    for (at, name, trainable, data), (ename, eshape, etrain) in zip(entries, expected):
        if name != ename or data.shape != eshape or trainable != etrain:
            raise CheckpointError(
                f"entry {name!r} {data.shape} does not match spec entry {ename!r} {eshape}", offset=at
            )
    for _, name, _, data in entries:
        model.params[name].data[...] = data
    return model.eval()


def load_checkpoint(path: Union[str, os.PathLike]) -> Model:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from None
    return decode(buf)
