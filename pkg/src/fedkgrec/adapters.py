"""Bit-exact named-tensor container (FLAT format) and the LoRA size model.

Layout: 8-byte magic ``FLATv001``, 8-byte little-endian header length, UTF-8
JSON header (entry names, shapes, dtypes, payload offsets, free-form meta),
then the concatenated raw little-endian payloads.  save/load round-trips are
byte-identical, which the federation digests and the cross-implementation
trainer checks rely on.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, HeaderMismatch, TruncatedPayload

MAGIC = b"FLATv001"

DTYPE_F32 = "f32"
DTYPE_PACKED4 = "u8-packed-4bit"
_DTYPES = (DTYPE_F32, DTYPE_PACKED4)


def _expected_nbytes(shape: tuple[int, ...], dtype: str) -> int:
    n = 1
    for dim in shape:
        n *= dim
    if dtype == DTYPE_F32:
        return 4 * n
    if dtype == DTYPE_PACKED4:
        return (n + 1) // 2
    raise ValueError(f"unknown dtype {dtype!r}")


@dataclass(frozen=True)
class TensorEntry:
    shape: tuple[int, ...]
    dtype: str
    data: bytes

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"unknown dtype {self.dtype!r}")
        if any(d < 0 for d in self.shape):
            raise ValueError(f"negative dimension in {self.shape}")
        expected = _expected_nbytes(self.shape, self.dtype)
        if len(self.data) != expected:
            raise ValueError(f"payload is {len(self.data)} bytes, expected {expected}")

    @property
    def n_elements(self) -> int:
        n = 1
        for dim in self.shape:
            n *= dim
        return n


@dataclass(frozen=True)
class AdapterTensors:
    """Ordered name → tensor map plus free-form metadata (e.g. LoRA rank)."""

    entries: dict[str, TensorEntry] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return sum(e.n_elements for e in self.entries.values())

    def array(self, name: str) -> np.ndarray:
        """Decode a tensor to a fresh numpy array (f32 or unpacked nibbles)."""
        entry = self.entries[name]
        if entry.dtype == DTYPE_F32:
            return np.frombuffer(entry.data, dtype="<f4").reshape(entry.shape).copy()
        return unpack4(entry.data, entry.n_elements).reshape(entry.shape)

    def replace_array(self, name: str, values: np.ndarray) -> "AdapterTensors":
        entry = self.entries[name]
        if tuple(values.shape) != entry.shape:
            raise ValueError(f"{name}: shape {values.shape} != {entry.shape}")
        if entry.dtype == DTYPE_F32:
            data = np.ascontiguousarray(values, dtype="<f4").tobytes()
        else:
            data = pack4(values.reshape(-1))
        entries = dict(self.entries)
        entries[name] = TensorEntry(entry.shape, entry.dtype, data)
        return AdapterTensors(entries, dict(self.meta))


def from_arrays(named: dict[str, np.ndarray], meta: dict | None = None) -> AdapterTensors:
    entries = {
        name: TensorEntry(tuple(arr.shape), DTYPE_F32, np.ascontiguousarray(arr, dtype="<f4").tobytes())
        for name, arr in named.items()
    }
    return AdapterTensors(entries, dict(meta or {}))


def pack4(values: np.ndarray) -> bytes:
    """Pack integer values 0..15 two per byte, low nibble first."""
    flat = np.asarray(values, dtype=np.uint8).reshape(-1)
    if flat.size and (flat.max() > 15):
        raise ValueError("4-bit values must be in 0..15")
    if flat.size % 2:
        flat = np.concatenate([flat, np.zeros(1, dtype=np.uint8)])
    low = flat[0::2]
    high = flat[1::2]
    return (low | (high << 4)).astype(np.uint8).tobytes()


def unpack4(data: bytes, n: int) -> np.ndarray:
    packed = np.frombuffer(data, dtype=np.uint8)
    out = np.empty(2 * packed.size, dtype=np.uint8)
    out[0::2] = packed & 0x0F
    out[1::2] = packed >> 4
    return out[:n]


# -- serialization ---------------------------------------------------------------


def serialize(adapter: AdapterTensors) -> bytes:
    header_entries = []
    offset = 0
    payloads = []
    for name, entry in adapter.entries.items():
        header_entries.append(
            {
                "name": name,
                "shape": list(entry.shape),
                "dtype": entry.dtype,
                "offset": offset,
                "nbytes": len(entry.data),
            }
        )
        payloads.append(entry.data)
        offset += len(entry.data)
    header = {"entries": header_entries, "meta": adapter.meta}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, struct.pack("<Q", len(header_bytes)), header_bytes, *payloads])


def deserialize(blob: bytes) -> AdapterTensors:
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}")
    if len(blob) < len(MAGIC) + 8:
        raise TruncatedPayload("missing header length")
    (header_len,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    if len(blob) < header_start + header_len:
        raise TruncatedPayload("header shorter than declared")
    try:
        header = json.loads(blob[header_start : header_start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatch(f"header is not valid JSON: {exc}")
    if not isinstance(header, dict) or "entries" not in header:
        raise HeaderMismatch("header lacks an entries list")

    payload = blob[header_start + header_len :]
    entries: dict[str, TensorEntry] = {}
    total = 0
    for spec in header["entries"]:
        try:
            name = spec["name"]
            shape = tuple(int(d) for d in spec["shape"])
            dtype = spec["dtype"]
            offset = int(spec["offset"])
            nbytes = int(spec["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderMismatch(f"bad entry record: {exc}")
        if name in entries:
            raise HeaderMismatch(f"duplicate tensor name {name!r}")
        if dtype not in _DTYPES:
            raise HeaderMismatch(f"{name}: unknown dtype {dtype!r}")
        if nbytes != _expected_nbytes(shape, dtype):
            raise HeaderMismatch(f"{name}: nbytes {nbytes} does not match shape/dtype")
        if offset + nbytes > len(payload):
            raise TruncatedPayload(f"{name}: payload ends before offset {offset}+{nbytes}")
        entries[name] = TensorEntry(shape, dtype, bytes(payload[offset : offset + nbytes]))
        total += nbytes
    if total != len(payload):
        raise HeaderMismatch(f"payload is {len(payload)} bytes, entries account for {total}")
    return AdapterTensors(entries, header.get("meta", {}))


def save_adapter(adapter: AdapterTensors, path: str | Path) -> None:
    """Atomic write: the file never exists in a partially-written state."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(serialize(adapter))
    os.replace(tmp, path)


def load_adapter(path: str | Path) -> AdapterTensors:
    return deserialize(Path(path).read_bytes())


def digest(adapter: AdapterTensors) -> str:
    return hashlib.sha256(serialize(adapter)).hexdigest()


# -- toy LoRA fixture ---------------------------------------------------------------

DEFAULT_LORA_RANK = 16
DEFAULT_LORA_ALPHA = 64


def make_lora_adapter(
    n_layers: int = 2,
    hidden_dim: int = 64,
    rank: int = DEFAULT_LORA_RANK,
    alpha: int = DEFAULT_LORA_ALPHA,
    seed: int = 0,
    quant_bits: int = 4,
) -> AdapterTensors:
    """Toy adapter with the low-rank A/B tensor pair per layer.

    Tensor shapes follow the usual LoRA layout (A: rank×dim, B: dim×rank);
    rank/alpha/bits ride along as metadata and feed the size model only.
    """
    rng = np.random.default_rng(seed)
    named = {}
    for layer in range(n_layers):
        named[f"layers.{layer}.attn.lora_A"] = rng.normal(0, 0.02, size=(rank, hidden_dim))
        named[f"layers.{layer}.attn.lora_B"] = np.zeros((hidden_dim, rank))
    return from_arrays(
        named,
        meta={"lora_rank": rank, "lora_alpha": alpha, "quant_bits": quant_bits},
    )
