"""
名前付きテンソルアーカイブ（.dgst）の読み書き。

レイアウト:
    MAGIC (8 byte)
    header  "<IQ32s"  manifest 長 / payload 長 / manifest の SHA-256
    manifest  flatbuffers (TensorArchive.ArchiveManifest)
    payload   各テンソルのリトルエンディアン生バイト列を登録順に連結

同じ入力からは常に同じバイト列になる（save→load→save がバイト一致）。
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import flatbuffers
import numpy as np

from Domain.errors import CheckpointCorruptError, DTypeMismatchError
from TensorArchive import ArchiveManifest as fb_manifest
from TensorArchive import TensorEntry as fb_entry
from TensorArchive.ArchiveManifest import ArchiveManifest
from TensorArchive.DType import DType

MAGIC = b"DGSTARC1"
_HEADER = struct.Struct("<IQ32s")
HEADER_SIZE = len(MAGIC) + _HEADER.size

_DTYPE_TAGS = {
    np.dtype("float32"): DType.Float32,
    np.dtype("float64"): DType.Float64,
    np.dtype("int64"): DType.Int64,
    np.dtype("uint8"): DType.UInt8,
}
_TAG_DTYPES = {tag: dt for dt, tag in _DTYPE_TAGS.items()}


@dataclass
class NamedTensors:
    """
    アーカイブ 1 個分の中身。tensors は登録順を保つ。
    """

    tensors: list[tuple[str, np.ndarray]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.tensors)


def dtype_tag(dtype: np.dtype) -> int:
    try:
        return _DTYPE_TAGS[np.dtype(dtype)]
    except KeyError as e:
        raise DTypeMismatchError(f"unsupported tensor dtype {dtype}") from e


def _le_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    return arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def encode(archive: NamedTensors) -> bytes:
    payloads = [(name, np.asarray(arr), _le_bytes(arr)) for name, arr in archive.tensors]
    names = [name for name, _, _ in payloads]
    if len(set(names)) != len(names):
        raise ValueError("archive tensor names must be unique")

    builder = flatbuffers.Builder(1024)
    entry_offsets = []
    position = 0
    for name, arr, raw in payloads:
        name_off = builder.CreateString(name)
        shape_off = builder.CreateNumpyVector(np.asarray(arr.shape, dtype=np.uint32))
        digest_off = builder.CreateByteVector(hashlib.sha256(raw).digest())
        fb_entry.Start(builder)
        fb_entry.AddName(builder, name_off)
        fb_entry.AddDtype(builder, dtype_tag(arr.dtype))
        fb_entry.AddShape(builder, shape_off)
        fb_entry.AddOffset(builder, position)
        fb_entry.AddLength(builder, len(raw))
        fb_entry.AddSha256(builder, digest_off)
        entry_offsets.append(fb_entry.End(builder))
        position += len(raw)

    fb_manifest.StartEntriesVector(builder, len(entry_offsets))
    for off in reversed(entry_offsets):
        builder.PrependUOffsetTRelative(off)
    entries_off = builder.EndVector()
    meta_off = builder.CreateString(
        json.dumps(archive.metadata, sort_keys=True, separators=(",", ":"))
    )
    fb_manifest.Start(builder)
    fb_manifest.AddEntries(builder, entries_off)
    fb_manifest.AddMetadata(builder, meta_off)
    builder.Finish(fb_manifest.End(builder))
    manifest = bytes(builder.Output())

    header = _HEADER.pack(len(manifest), position, hashlib.sha256(manifest).digest())
    return b"".join([MAGIC, header, manifest, *(raw for _, _, raw in payloads)])


def decode(blob: bytes) -> NamedTensors:
    """
    バイト列を検証しながら読み出す。途中で不整合があれば何も返さずに例外を送出する。
    """
    if len(blob) < HEADER_SIZE or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointCorruptError("not a tensor archive (bad magic or truncated header)")
    manifest_len, payload_len, manifest_digest = _HEADER.unpack_from(blob, len(MAGIC))
    if len(blob) != HEADER_SIZE + manifest_len + payload_len:
        raise CheckpointCorruptError(
            f"archive size mismatch (expected {HEADER_SIZE + manifest_len + payload_len}, got {len(blob)})"
        )
    manifest_bytes = blob[HEADER_SIZE : HEADER_SIZE + manifest_len]
    if hashlib.sha256(manifest_bytes).digest() != manifest_digest:
        raise CheckpointCorruptError("manifest checksum mismatch")
    payload = memoryview(blob)[HEADER_SIZE + manifest_len :]

    try:
        manifest = ArchiveManifest.GetRootAs(manifest_bytes, 0)
        metadata = json.loads((manifest.Metadata() or b"{}").decode("utf-8"))
        entries = [manifest.Entries(i) for i in range(manifest.EntriesLength())]
    except (ValueError, IndexError, struct.error, UnicodeDecodeError) as e:
        raise CheckpointCorruptError(f"unreadable manifest: {e}") from e

    tensors: list[tuple[str, np.ndarray]] = []
    for entry in entries:
        name = entry.Name().decode("utf-8")
        tag = entry.Dtype()
        if tag not in _TAG_DTYPES:
            raise DTypeMismatchError(f"{name}: unknown dtype tag {tag}")
        dtype = _TAG_DTYPES[tag]
        shape = tuple(int(entry.Shape(j)) for j in range(entry.ShapeLength()))
        start, length = entry.Offset(), entry.Length()
        if start + length > payload_len:
            raise CheckpointCorruptError(f"{name}: payload range out of bounds")
        if length != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise CheckpointCorruptError(f"{name}: byte length does not match shape {shape}")
        raw = bytes(payload[start : start + length])
        digest = bytes(entry.Sha256(j) for j in range(entry.Sha256Length()))
        if hashlib.sha256(raw).digest() != digest:
            raise CheckpointCorruptError(f"{name}: payload checksum mismatch")
        array = np.frombuffer(raw, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(shape)
        tensors.append((name, array))
    return NamedTensors(tensors=tensors, metadata=metadata)


def write_archive(path: Union[str, Path], archive: NamedTensors) -> bytes:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode(archive)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    return blob


def read_archive(path: Union[str, Path]) -> NamedTensors:
    return decode(Path(path).read_bytes())
