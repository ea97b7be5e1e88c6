"""Minimal length-prefixed binary encoding used for every signed or hashed structure."""

from __future__ import annotations

import struct


class Encoder:
    def __init__(self):
        self._parts: list[bytes] = []

    def u8(self, value: int) -> "Encoder":
        self._parts.append(struct.pack(">B", value))
        return self

    def u32(self, value: int) -> "Encoder":
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> "Encoder":
        self._parts.append(struct.pack(">Q", value))
        return self

    def i64(self, value: int) -> "Encoder":
        self._parts.append(struct.pack(">q", value))
        return self

    def raw(self, data: bytes) -> "Encoder":
        self._parts.append(bytes(data))
        return self

    def blob(self, data: bytes) -> "Encoder":
        self.u32(len(data))
        return self.raw(data)

    def text(self, value: str) -> "Encoder":
        return self.blob(value.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Decoder:
    """Reads what :class:`Encoder` wrote. Raises ``ValueError`` on truncation."""

    def __init__(self, data: bytes):
        self._data = memoryview(bytes(data))
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if n < 0 or end > len(self._data):
            raise ValueError("truncated input")
        chunk = self._data[self._pos:end].tobytes()
        self._pos = end
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def i64(self) -> int:
        return struct.unpack(">q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        return self.blob().decode("utf-8")

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def expect_end(self) -> None:
        if self.remaining:
            raise ValueError(f"{self.remaining} trailing bytes")
