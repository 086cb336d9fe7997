"""Length-prefixed canonical binary encoding shared by every wire format."""

from __future__ import annotations

import struct

VERSION = 1

_U8 = struct.Struct(">B")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class DecodeError(ValueError):
    """Raised when a byte string does not parse as the expected structure."""


class Writer:
    def __init__(self, version: int | None = VERSION):
        self._parts: list[bytes] = []
        if version is not None:
            self.u8(version)

    def u8(self, value: int) -> "Writer":
        self._parts.append(_U8.pack(value))
        return self

    def u32(self, value: int) -> "Writer":
        self._parts.append(_U32.pack(value))
        return self

    def u64(self, value: int) -> "Writer":
        if value < 0:
            raise ValueError("u64 fields are non-negative")
        self._parts.append(_U64.pack(value))
        return self

    def blob(self, data: bytes) -> "Writer":
        self._parts.append(_U32.pack(len(data)) + bytes(data))
        return self

    def text(self, value: str) -> "Writer":
        return self.blob(value.encode("utf-8"))

    def blobs(self, items) -> "Writer":
        items = list(items)
        self.u32(len(items))
        for item in items:
            self.blob(item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, version: int | None = VERSION):
        self._data = bytes(data)
        self._pos = 0
        if version is not None:
            got = self.u8()
            if got != version:
                raise DecodeError(f"unsupported version tag {got}")

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError("truncated input")
        chunk = self._data[self._pos:self._pos + n]
        self._pos += n
        return chunk

    def u8(self) -> int:
        return _U8.unpack(self._take(1))[0]

    def u32(self) -> int:
        return _U32.unpack(self._take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self._take(8))[0]

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8 text field") from exc

    def blobs(self) -> list[bytes]:
        return [self.blob() for _ in range(self.u32())]

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def done(self) -> None:
        if self.remaining:
            raise DecodeError(f"{self.remaining} trailing bytes")
