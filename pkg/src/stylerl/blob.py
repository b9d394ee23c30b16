"""Binary packing helpers for checkpoint blobs.

Everything is little-endian and fixed-width so blobs round-trip bit-exactly
across platforms. Arrays are always float64 unless packed as int64.
"""

from __future__ import annotations

import struct

import numpy as np

from stylerl.errors import CheckpointError


class Writer:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, data: bytes):
        self._parts.append(data)

    def u8(self, value: int):
        self._parts.append(struct.pack("<B", value))

    def u32(self, value: int):
        self._parts.append(struct.pack("<I", value))

    def u64(self, value: int):
        self._parts.append(struct.pack("<Q", value))

    def f64(self, value: float):
        self._parts.append(struct.pack("<d", float(value)))

    def text(self, value: str):
        data = value.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def array(self, arr: np.ndarray):
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            code = 0
        elif arr.dtype == np.int64:
            code = 1
        else:
            raise CheckpointError(f"unsupported array dtype {arr.dtype}")
        self.u8(code)
        self.u8(arr.ndim)
        for dim in arr.shape:
            self.u64(dim)
        self.raw(arr.astype("<f8" if code == 0 else "<i8").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def raw(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CheckpointError("truncated blob")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.raw(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.raw(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.raw(8))[0]

    def text(self) -> str:
        n = self.u32()
        return self.raw(n).decode("utf-8")

    def array(self) -> np.ndarray:
        code = self.u8()
        ndim = self.u8()
        shape = tuple(self.u64() for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        dtype = "<f8" if code == 0 else "<i8"
        arr = np.frombuffer(self.raw(count * 8), dtype=dtype).reshape(shape)
        return arr.astype(np.float64 if code == 0 else np.int64)

    def expect_magic(self, magic: bytes, what: str):
        got = self.raw(len(magic))
        if got != magic:
            raise CheckpointError(f"bad magic for {what}: {got!r}")

    def done(self) -> bool:
        return self._pos == len(self._data)
