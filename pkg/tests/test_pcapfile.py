from __future__ import annotations

import struct

import numpy as np
import pytest

import framefactory as ff
from pktclass import pcapfile
from pktclass.errors import (
    BadMagic,
    CorruptRecord,
    TruncatedHeader,
    TruncatedRecord,
    UnreadableFile,
)
from pktclass.pcapfile import CaptureFrame, open_capture, write_pcap


def test_empty_capture(tmp_path):
    path = tmp_path / "empty.pcap"
    write_pcap(path, [])
    source = open_capture(path)
    assert list(source.frames()) == []
    assert source.frame_count == 0


def test_single_ethernet_frame(tmp_path):
    payload = bytes(range(60))
    path = tmp_path / "one.pcap"
    write_pcap(path, [CaptureFrame(10, 20, 1, payload, 60)])
    source = open_capture(path)
    assert source.link_type == pcapfile.LINKTYPE_ETHERNET
    frames = list(source)
    assert len(frames) == 1
    assert frames[0].data == payload
    assert frames[0].ts_sec == 10 and frames[0].ts_usec == 20
    assert frames[0].original_length == 60
    assert source.frame_count == 1


def test_byteswapped_magic_matches_native(tmp_path):
    frames = [bytes([i]) * (i + 1) for i in range(5)]
    native, swapped = tmp_path / "le.pcap", tmp_path / "be.pcap"
    write_pcap(native, frames)
    write_pcap(swapped, frames, byteorder=">")
    native_data = [f.data for f in open_capture(native)]
    swapped_data = [f.data for f in open_capture(swapped)]
    assert native_data == swapped_data == frames


def test_nanosecond_magic_downconverts(tmp_path):
    path = tmp_path / "nano.pcap"
    write_pcap(path, [CaptureFrame(1, 123456, 1, b"x", 1)], nanosecond=True)
    [frame] = list(open_capture(path))
    assert frame.ts_usec == 123456


def test_frame_order_preserved(tmp_path):
    path = tmp_path / "two.pcap"
    write_pcap(path, [b"first", b"second"])
    source = open_capture(path)
    assert source.next_frame().data == b"first"
    assert source.next_frame().data == b"second"
    assert source.next_frame() is None


def test_truncated_record_raises(tmp_path):
    path = tmp_path / "short.pcap"
    write_pcap(path, [])
    with open(path, "ab") as fh:
        fh.write(struct.pack("<IIII", 0, 0, 100, 100))
        fh.write(b"\x00" * 40)
    source = open_capture(path)
    with pytest.raises(TruncatedRecord):
        list(source.frames())


def test_partial_record_header_raises(tmp_path):
    path = tmp_path / "cut.pcap"
    write_pcap(path, [])
    with open(path, "ab") as fh:
        fh.write(b"\x00" * 7)
    with pytest.raises(TruncatedRecord):
        list(open_capture(path).frames())


def test_zero_length_record_yields_empty_frame(tmp_path):
    path = tmp_path / "zero.pcap"
    write_pcap(path, [b""])
    [frame] = list(open_capture(path))
    assert frame.data == b""


def test_header_shorter_than_24_bytes(tmp_path):
    path = tmp_path / "stub.pcap"
    path.write_bytes(b"\xd4\xc3\xb2\xa1\x02\x00")
    with pytest.raises(TruncatedHeader):
        open_capture(path)


def test_unknown_magic_rejected(tmp_path):
    path = tmp_path / "png.pcap"
    path.write_bytes(b"\x0a\x0d\x0d\x0a" + bytes(20))  # pcapng section header
    with pytest.raises(BadMagic):
        open_capture(path)


def test_missing_file():
    with pytest.raises(UnreadableFile):
        open_capture("/nonexistent/q.pcap")


def test_captured_longer_than_wire_rejected(tmp_path):
    path = tmp_path / "lying.pcap"
    write_pcap(path, [])
    with open(path, "ab") as fh:
        fh.write(struct.pack("<IIII", 0, 0, 10, 4))
        fh.write(b"\x00" * 10)
    with pytest.raises(CorruptRecord):
        list(open_capture(path).frames())


def test_roundtrip_1000_random_frames(tmp_path):
    rng = np.random.default_rng(42)
    frames = [
        CaptureFrame(
            ts_sec=int(rng.integers(0, 2**31)),
            ts_usec=int(rng.integers(0, 1_000_000)),
            link_type=1,
            data=rng.integers(0, 256, size=int(rng.integers(0, 300)), dtype=np.uint8).tobytes(),
            original_length=0,
        )
        for _ in range(1000)
    ]
    for frame in frames:
        frame.original_length = len(frame.data)
    path = tmp_path / "rt.pcap"
    write_pcap(path, frames)
    back = list(open_capture(path))
    assert len(back) == 1000
    assert all(a.data == b.data for a, b in zip(frames, back))
    assert all(a.ts_sec == b.ts_sec and a.ts_usec == b.ts_usec for a, b in zip(frames, back))


def test_two_reads_identical(ethernet_fixture):
    source = open_capture(ethernet_fixture)
    first = [(f.data, f.ts_sec, f.ts_usec) for f in source.frames()]
    second = [(f.data, f.ts_sec, f.ts_usec) for f in source.frames()]
    assert first == second


def test_fixture_endianness_variants_agree(data_dir):
    reference = [f.data for f in open_capture(data_dir / "frames_ethernet.pcap")]
    for name in ("frames_ethernet_be.pcap", "frames_ethernet_nano.pcap"):
        assert [f.data for f in open_capture(data_dir / name)] == reference


def test_label_hint_from_filename(tmp_path):
    path = tmp_path / "skype_chat1a.pcap"
    write_pcap(path, [])
    assert open_capture(path).label_hint == "skype_chat1a"


def test_writer_roundtrips_fixture_frames(tmp_path):
    cases = ff.fixture_frames()
    path = tmp_path / "fixture.pcap"
    write_pcap(path, [data for _, data, _ in cases])
    back = list(open_capture(path))
    assert [f.data for f in back] == [data for _, data, _ in cases]
