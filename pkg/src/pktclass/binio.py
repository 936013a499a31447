"""Little-endian binary record helpers shared by the dataset and model file formats."""

from __future__ import annotations

import struct

from .errors import ChecksumMismatch, TruncatedRecord

# CRC-64/XZ: reflected poly 0x42F0E1EBA9EA3693, init/xorout all-ones.
_CRC64_POLY = 0xC96C5795D7870F42


def _make_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ _CRC64_POLY if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC64_TABLE = _make_table()


def crc64(data: bytes | memoryview) -> int:
    crc = 0xFFFFFFFFFFFFFFFF
    table = _CRC64_TABLE
    for b in bytes(data):
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFFFFFFFFFF


class Writer:
    """Accumulates little-endian fields; ``finish`` appends the CRC64 trailer."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def raw(self, data: bytes) -> None:
        self._buf += data

    def u8(self, value: int) -> None:
        self._buf += struct.pack("<B", value)

    def u16(self, value: int) -> None:
        self._buf += struct.pack("<H", value)

    def u32(self, value: int) -> None:
        self._buf += struct.pack("<I", value)

    def u64(self, value: int) -> None:
        self._buf += struct.pack("<Q", value)

    def str16(self, text: str) -> None:
        data = text.encode("utf-8")
        if len(data) > 0xFFFF:
            raise ValueError("string too long for u16 length prefix")
        self.u16(len(data))
        self.raw(data)

    def str32(self, text: str) -> None:
        data = text.encode("utf-8")
        self.u32(len(data))
        self.raw(data)

    def finish(self) -> bytes:
        body = bytes(self._buf)
        return body + struct.pack("<Q", crc64(body))


class Reader:
    """Bounds-checked reader over a complete file image."""

    def __init__(self, data: bytes, what: str = "file") -> None:
        self._data = data
        self._pos = 0
        self._what = what

    @property
    def pos(self) -> int:
        return self._pos

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def raw(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise TruncatedRecord(f"{self._what}: needed {n} bytes at offset {self._pos}")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return struct.unpack("<B", self.raw(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.raw(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.raw(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.raw(8))[0]

    def str16(self) -> str:
        return self.raw(self.u16()).decode("utf-8")

    def str32(self) -> str:
        return self.raw(self.u32()).decode("utf-8")


def check_trailer(data: bytes, what: str = "file") -> bytes:
    """Validate the trailing CRC64 and return the body without it."""
    if len(data) < 8:
        raise TruncatedRecord(f"{what}: shorter than its checksum trailer")
    body, trailer = data[:-8], data[-8:]
    expected = struct.unpack("<Q", trailer)[0]
    actual = crc64(body)
    if actual != expected:
        raise ChecksumMismatch(
            f"{what}: checksum {actual:#018x} does not match stored {expected:#018x}"
        )
    return body
