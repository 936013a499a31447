"""Hand-assembled Ethernet/IPv4/TCP/UDP frames for fixtures and golden files.

Everything is built byte-by-byte with struct so tests have a constructive
oracle for what the preprocessing stages must produce.
"""

from __future__ import annotations

import struct

from pktclass.pcapfile import CaptureFrame, LINKTYPE_ETHERNET
from pktclass.preprocess import DiscardReason

FIN, SYN, RST, PSH, ACK = 0x01, 0x02, 0x04, 0x08, 0x10

SRC_MAC = bytes.fromhex("02005e100001")
DST_MAC = bytes.fromhex("02005e100002")


def ip_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += int.from_bytes(header[i : i + 2], "big")
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ipv4(
    payload: bytes,
    proto: int,
    src: str = "10.0.2.15",
    dst: str = "93.184.216.34",
    *,
    options: bytes = b"",
    ttl: int = 64,
    identification: int = 0x1234,
    frag_offset: int = 0,
    more_fragments: bool = False,
    total_length: int | None = None,
    version_ihl: int | None = None,
    trailer: bytes = b"",
) -> bytes:
    assert len(options) % 4 == 0
    ihl = 5 + len(options) // 4
    if version_ihl is None:
        version_ihl = 0x40 | ihl
    if total_length is None:
        total_length = ihl * 4 + len(payload)
    flags_frag = (0x2000 if more_fragments else 0) | (frag_offset & 0x1FFF)
    src_b = bytes(int(p) for p in src.split("."))
    dst_b = bytes(int(p) for p in dst.split("."))
    head = struct.pack(
        ">BBHHHBBH4s4s",
        version_ihl,
        0,
        total_length,
        identification,
        flags_frag,
        ttl,
        proto,
        0,
        src_b,
        dst_b,
    )
    head = head[:10] + struct.pack(">H", ip_checksum(head + options)) + head[12:] + options
    return head + payload + trailer


def tcp(
    payload: bytes = b"",
    sport: int = 40000,
    dport: int = 443,
    *,
    flags: int = PSH | ACK,
    options: bytes = b"",
    seq: int = 1,
    ack: int = 1,
) -> bytes:
    assert len(options) % 4 == 0
    data_offset = 5 + len(options) // 4
    header = struct.pack(
        ">HHIIBBHHH", sport, dport, seq, ack, data_offset << 4, flags, 64240, 0, 0
    )
    return header + options + payload


def udp(payload: bytes = b"", sport: int = 40000, dport: int = 9000) -> bytes:
    return struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload


def ether(payload: bytes, ethertype: int = 0x0800, vlan: int | None = None) -> bytes:
    if vlan is None:
        return DST_MAC + SRC_MAC + struct.pack(">H", ethertype) + payload
    return (
        DST_MAC
        + SRC_MAC
        + struct.pack(">HH", 0x8100, vlan)
        + struct.pack(">H", ethertype)
        + payload
    )


def frame(data: bytes, link_type: int = LINKTYPE_ETHERNET, ts: tuple[int, int] = (0, 0)) -> CaptureFrame:
    return CaptureFrame(
        ts_sec=ts[0], ts_usec=ts[1], link_type=link_type, data=data, original_length=len(data)
    )


def expected_vector(ip_header: bytes, transport_header: bytes, payload: bytes, is_udp: bool) -> bytes:
    """Constructive oracle: mask addresses, pad UDP headers, fit to 1500."""
    masked = ip_header[:12] + bytes(8) + ip_header[20:]
    transport = transport_header + bytes(12) if is_udp else transport_header
    raw = masked + transport + payload
    return raw[:1500] if len(raw) >= 1500 else raw + bytes(1500 - len(raw))


KEEP = "keep"


def fixture_frames() -> list[tuple[str, bytes, object]]:
    """(name, ethernet frame bytes, expected outcome) covering the filter matrix."""
    cases: list[tuple[str, bytes, object]] = []

    def add(name: str, data: bytes, expect: object) -> None:
        cases.append((name, data, expect))

    add("tcp_data", ether(ipv4(tcp(b"GET / HTTP/1.1\r\n"), 6)), KEEP)
    add("tcp_syn", ether(ipv4(tcp(flags=SYN), 6)), DiscardReason.HANDSHAKE_NO_PAYLOAD)
    add("tcp_synack", ether(ipv4(tcp(flags=SYN | ACK), 6)), DiscardReason.HANDSHAKE_NO_PAYLOAD)
    add("tcp_ack", ether(ipv4(tcp(flags=ACK), 6)), DiscardReason.HANDSHAKE_NO_PAYLOAD)
    add("tcp_finack", ether(ipv4(tcp(flags=FIN | ACK), 6)), DiscardReason.HANDSHAKE_NO_PAYLOAD)
    add("tcp_rst", ether(ipv4(tcp(flags=RST), 6)), DiscardReason.HANDSHAKE_NO_PAYLOAD)
    add("tcp_ack_payload", ether(ipv4(tcp(b"0123456789", flags=ACK), 6)), KEEP)
    add("udp_data", ether(ipv4(udp(b"\x17\x03\x03\x00\x10" + bytes(16)), 17)), KEEP)
    add("udp_dns_query", ether(ipv4(udp(b"\x12\x34\x01\x00", dport=53), 17)), DiscardReason.DNS)
    add("udp_dns_resp", ether(ipv4(udp(b"\x12\x34\x81\x80", sport=53, dport=40001), 17)), DiscardReason.DNS)
    add("tcp_dns", ether(ipv4(tcp(b"\x00\x20" + bytes(32), dport=53), 6)), DiscardReason.DNS)
    add("arp", ether(bytes(28), ethertype=0x0806), DiscardReason.NON_IP)
    add("ipv6", ether(b"\x60" + bytes(39), ethertype=0x86DD), DiscardReason.NON_IP)
    add("vlan_tcp", ether(ipv4(tcp(b"tagged payload"), 6), vlan=100), KEEP)
    add("vlan_arp", ether(bytes(28), ethertype=0x0806, vlan=100), DiscardReason.NON_IP)
    add("icmp", ether(ipv4(b"\x08\x00\xf7\xff\x00\x00\x00\x00", 1)), DiscardReason.UNSUPPORTED_TRANSPORT)
    add(
        "udp_fragment",
        ether(ipv4(bytes(64), 17, frag_offset=185)),
        DiscardReason.UNSUPPORTED_TRANSPORT,
    )
    add(
        "bad_ihl",
        ether(ipv4(tcp(b"x"), 6, version_ihl=0x44)),
        DiscardReason.MALFORMED_HEADER,
    )
    add(
        "truncated_ip",
        ether(ipv4(tcp(b"y"), 6, total_length=400)),
        DiscardReason.MALFORMED_HEADER,
    )
    add(
        "ip_options",
        ether(ipv4(tcp(b"with options"), 6, options=b"\x01\x01\x01\x00")),
        KEEP,
    )
    add(
        "tcp_options",
        ether(ipv4(tcp(b"sacked", options=b"\x01\x01\x01\x01\x02\x04\x05\xb4\x01\x01\x04\x02"), 6)),
        KEEP,
    )
    add("udp_empty", ether(ipv4(udp(b"", dport=9999), 17)), KEEP)
    add("exact_1500", ether(ipv4(tcp(bytes(range(256)) * 5 + bytes(180)), 6)), KEEP)
    add("oversize", ether(ipv4(tcp(b"\xab" * 1800), 6)), KEEP)
    add(
        "ether_padding",
        ether(ipv4(tcp(b"tiny", flags=ACK), 6, trailer=b"\x00" * 10)),
        KEEP,
    )
    add("runt", b"\x02\x00\x5e\x10\x00\x01\x02\x00", DiscardReason.MALFORMED_HEADER)
    add("empty", b"", DiscardReason.MALFORMED_HEADER)
    return cases
