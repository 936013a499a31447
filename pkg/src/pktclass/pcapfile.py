"""Classic pcap reading, plus a writer used by tests and tooling.

Layout: 24-byte global header (magic, version, thiszone, sigfigs, snaplen,
network), then per-record 16-byte headers (ts_sec, ts_usec, incl_len,
orig_len) followed by the captured bytes, all in the file's own endianness.
Both magic endiannesses are accepted; nanosecond-magic files are read with
timestamps down-converted to microseconds. pcapng is rejected up front.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .errors import BadMagic, CorruptRecord, TruncatedHeader, TruncatedRecord, UnreadableFile

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
MAX_FRAME_LEN = 65535

MAGIC_MICRO = 0xA1B2C3D4
MAGIC_NANO = 0xA1B23C4D

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = 101


@dataclass
class CaptureFrame:
    """One captured frame: timestamp, link type code, captured bytes, wire length."""

    ts_sec: int
    ts_usec: int
    link_type: int
    data: bytes
    original_length: int


@dataclass
class CaptureSource:
    """A validated pcap file; iterate to obtain frames in on-disk order."""

    path: Path
    label_hint: Optional[str]
    link_type: int
    frame_count: Optional[int] = None  # populated after a complete iteration
    _byteorder: str = "<"
    _nanosecond: bool = False
    _iter: Optional[Iterator[CaptureFrame]] = field(default=None, repr=False)

    def frames(self) -> Iterator[CaptureFrame]:
        """Yield every frame; a fresh pass over the file each call."""
        fmt = self._byteorder + "IIII"
        count = 0
        try:
            fh = open(self.path, "rb")
        except OSError as exc:
            raise UnreadableFile(f"cannot open {self.path}: {exc}") from exc
        with fh:
            fh.seek(GLOBAL_HEADER_LEN)
            while True:
                header = fh.read(RECORD_HEADER_LEN)
                if not header:
                    break
                if len(header) < RECORD_HEADER_LEN:
                    raise TruncatedRecord(
                        f"{self.path}: file ends inside a record header"
                    )
                ts_sec, ts_frac, incl_len, orig_len = struct.unpack(fmt, header)
                if incl_len > MAX_FRAME_LEN:
                    raise CorruptRecord(
                        f"{self.path}: record claims {incl_len} captured bytes"
                    )
                if incl_len > orig_len:
                    raise CorruptRecord(
                        f"{self.path}: captured length {incl_len} exceeds wire length {orig_len}"
                    )
                data = fh.read(incl_len)
                if len(data) < incl_len:
                    raise TruncatedRecord(
                        f"{self.path}: record claims {incl_len} bytes, "
                        f"{len(data)} remain"
                    )
                ts_usec = ts_frac // 1000 if self._nanosecond else ts_frac
                count += 1
                yield CaptureFrame(ts_sec, ts_usec, self.link_type, data, orig_len)
        self.frame_count = count

    def __iter__(self) -> Iterator[CaptureFrame]:
        return self.frames()

    def next_frame(self) -> Optional[CaptureFrame]:
        """Sequential access; returns None at end of file."""
        if self._iter is None:
            self._iter = self.frames()
        return next(self._iter, None)


def open_capture(path: str | Path) -> CaptureSource:
    """Validate the global header of a classic pcap file and return a source."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            header = fh.read(GLOBAL_HEADER_LEN)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    if len(header) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"{path}: {len(header)} bytes, global header needs 24")

    magic_le = struct.unpack("<I", header[:4])[0]
    magic_be = struct.unpack(">I", header[:4])[0]
    if magic_le in (MAGIC_MICRO, MAGIC_NANO):
        byteorder, nanosecond = "<", magic_le == MAGIC_NANO
    elif magic_be in (MAGIC_MICRO, MAGIC_NANO):
        byteorder, nanosecond = ">", magic_be == MAGIC_NANO
    else:
        raise BadMagic(f"{path}: magic {header[:4].hex()} is not a classic pcap")

    _, _, _, _, _, network = struct.unpack(byteorder + "HHiIII", header[4:])
    return CaptureSource(
        path=path,
        label_hint=path.stem,
        link_type=network,
        _byteorder=byteorder,
        _nanosecond=nanosecond,
    )


def write_pcap(
    path: str | Path,
    frames,
    *,
    link_type: int = LINKTYPE_ETHERNET,
    byteorder: str = "<",
    nanosecond: bool = False,
    snaplen: int = MAX_FRAME_LEN,
) -> None:
    """Write frames (CaptureFrame or raw bytes) as a classic pcap file."""
    magic = MAGIC_NANO if nanosecond else MAGIC_MICRO
    out = bytearray()
    out += struct.pack(byteorder + "IHHiIII", magic, 2, 4, 0, 0, snaplen, link_type)
    for frame in frames:
        if isinstance(frame, CaptureFrame):
            ts_sec, ts_usec, data, orig = (
                frame.ts_sec,
                frame.ts_usec,
                frame.data,
                frame.original_length,
            )
        else:
            ts_sec, ts_usec, data, orig = 0, 0, bytes(frame), len(frame)
        ts_frac = ts_usec * 1000 if nanosecond else ts_usec
        out += struct.pack(byteorder + "IIII", ts_sec, ts_frac, len(data), orig)
        out += data
    Path(path).write_bytes(out)
