"""Checkpoint container: magic "CKP1", u32 LE header length, UTF-8 JSON
header, u32 LE tensor count, then per tensor: u32 LE name length, UTF-8
name, u32 LE rank, u32 LE dims, binary64 LE values row-major.

The same container stores Adam state in a ".opt" sidecar: the header keeps
the scalar state, tensors "m.<name>" / "v.<name>" keep the moments.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .optim import AdamState, ParamSet

CKP_MAGIC = b"CKP1"


def _pack_tensors(tensors: dict[str, np.ndarray]) -> bytes:
    chunks = [struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(chunks)


def _write_container(path, header: dict, tensors: dict[str, np.ndarray]) -> None:
    header_raw = json.dumps(header, sort_keys=True).encode("utf-8")
    body = CKP_MAGIC + struct.pack("<I", len(header_raw)) + header_raw + _pack_tensors(tensors)
    Path(path).write_bytes(body)


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CKP_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    off = 4
    try:
        (header_len,) = struct.unpack_from("<I", raw, off)
        off += 4
        if off + header_len > len(raw):
            raise FormatError(f"{path}: truncated header at byte {len(raw)}")
        header = json.loads(raw[off:off + header_len].decode("utf-8"))
        off += header_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            if off + 8 * size > len(raw):
                raise FormatError(f"{path}: truncated tensor {name!r} at byte {len(raw)}")
            arr = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(dims)
            off += 8 * size
            if name in tensors:
                raise FormatError(f"{path}: duplicate tensor name {name!r}")
            tensors[name] = arr.astype(np.float64)
        if off != len(raw):
            raise FormatError(f"{path}: trailing data at byte {off}")
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: corrupt checkpoint: {e}") from None
    return header, tensors


def write_checkpoint(path, header: dict, params: ParamSet) -> None:
    _write_container(path, header, {name: t.data for name, t in params.items()})


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Returns (header, tensors); caller validates the header's config."""
    return _read_container(path)


def write_adam_state(path, state: AdamState) -> None:
    header = {"step": state.step, "lr": state.lr, "beta1": state.beta1,
              "beta2": state.beta2, "eps": state.eps}
    tensors: dict[str, np.ndarray] = {}
    for name, arr in state.m.items():
        tensors[f"m.{name}"] = arr
    for name, arr in state.v.items():
        tensors[f"v.{name}"] = arr
    _write_container(path, header, tensors)


def read_adam_state(path) -> AdamState:
    header, tensors = _read_container(path)
    state = AdamState(lr=float(header["lr"]), beta1=float(header["beta1"]),
                      beta2=float(header["beta2"]), eps=float(header["eps"]),
                      step=int(header["step"]))
    for name, arr in tensors.items():
        if name.startswith("m."):
            state.m[name[2:]] = arr.copy()
        elif name.startswith("v."):
            state.v[name[2:]] = arr.copy()
        else:
            raise FormatError(f"{path}: unexpected tensor {name!r} in optimizer state")
    if set(state.m) != set(state.v):
        raise FormatError(f"{path}: first/second moment names do not match")
    return state
