"""Turn raw frames into fixed-length normalized byte vectors.

Pipeline per frame: strip the link header, parse IPv4/TCP/UDP, drop
uninformative packets (bare handshake segments, DNS), pad UDP headers to the
TCP header length, zero the IP address fields, then truncate/zero-pad the
packet to 1500 bytes and scale each byte by 1/255.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Union

import numpy as np

from .pcapfile import CaptureFrame, CaptureSource, LINKTYPE_ETHERNET, LINKTYPE_RAW_IP

VECTOR_LEN = 1500
DNS_PORT = 53

ETHER_HEADER_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100

IP_PROTO_TCP = 6
IP_PROTO_UDP = 17

UDP_HEADER_LEN = 8
PADDED_UDP_HEADER_LEN = 20  # match the typical TCP header length

# offsets of the source/destination address fields inside the IPv4 header
IP_SRC_OFFSET = 12
IP_ADDR_END = 20


class DiscardReason(enum.Enum):
    HANDSHAKE_NO_PAYLOAD = "HandshakeNoPayload"
    DNS = "DNS"
    NON_IP = "NonIP"
    UNSUPPORTED_TRANSPORT = "UnsupportedTransport"
    MALFORMED_HEADER = "MalformedHeader"


class Transport(enum.Enum):
    TCP = 6
    UDP = 17


@dataclass(frozen=True)
class TcpFlags:
    syn: bool = False
    ack: bool = False
    fin: bool = False
    rst: bool = False

    def any_handshake(self) -> bool:
        return self.syn or self.ack or self.fin or self.rst


@dataclass(frozen=True)
class ParsedPacket:
    ip_header: bytes
    transport: Transport
    transport_header: bytes
    payload: bytes
    flags: TcpFlags
    src_port: int
    dst_port: int


@dataclass(frozen=True)
class PacketVector:
    """A 1500-byte packet image; ``values`` is the /255-scaled float view."""

    raw: bytes
    source_offset: tuple[str, int] = ("", -1)

    @property
    def values(self) -> np.ndarray:
        return np.frombuffer(self.raw, dtype=np.uint8).astype(np.float32) / 255.0


@dataclass
class DiscardStats:
    counts: dict[DiscardReason, int] = field(
        default_factory=lambda: {reason: 0 for reason in DiscardReason}
    )
    kept: int = 0
    frames: int = 0

    def record(self, outcome: Union[PacketVector, DiscardReason]) -> None:
        self.frames += 1
        if isinstance(outcome, DiscardReason):
            self.counts[outcome] += 1
        else:
            self.kept += 1

    @property
    def discarded(self) -> int:
        return sum(self.counts.values())


def strip_link_header(frame: CaptureFrame) -> Union[bytes, DiscardReason]:
    """Remove the link-layer header, returning the IPv4 packet bytes."""
    data = frame.data
    if frame.link_type == LINKTYPE_ETHERNET:
        if len(data) < ETHER_HEADER_LEN:
            return DiscardReason.MALFORMED_HEADER
        ethertype = int.from_bytes(data[12:14], "big")
        offset = ETHER_HEADER_LEN
        if ethertype == ETHERTYPE_VLAN:  # one 802.1Q tag
            if len(data) < offset + 4:
                return DiscardReason.MALFORMED_HEADER
            ethertype = int.from_bytes(data[16:18], "big")
            offset += 4
        if ethertype != ETHERTYPE_IPV4:
            return DiscardReason.NON_IP
        return data[offset:]
    if frame.link_type == LINKTYPE_RAW_IP:
        if not data:
            return DiscardReason.MALFORMED_HEADER
        if data[0] >> 4 != 4:
            return DiscardReason.NON_IP
        return data
    return DiscardReason.NON_IP


def parse_ip_packet(data: bytes) -> Union[ParsedPacket, DiscardReason]:
    """Split an IPv4 packet into header, transport header and payload."""
    if len(data) < 20:
        return DiscardReason.MALFORMED_HEADER
    version = data[0] >> 4
    ihl = data[0] & 0x0F
    if version != 4 or ihl < 5:
        return DiscardReason.MALFORMED_HEADER
    header_len = ihl * 4
    total_length = int.from_bytes(data[2:4], "big")
    if header_len > len(data) or total_length < header_len or total_length > len(data):
        return DiscardReason.MALFORMED_HEADER
    # trailing bytes beyond total_length are link-layer padding, never payload
    packet = data[:total_length]

    fragment_offset = int.from_bytes(packet[6:8], "big") & 0x1FFF
    if fragment_offset > 0:
        # non-first fragment: no transport header to parse
        return DiscardReason.UNSUPPORTED_TRANSPORT

    protocol = packet[9]
    ip_header = packet[:header_len]
    rest = packet[header_len:]

    if protocol == IP_PROTO_TCP:
        if len(rest) < 20:
            return DiscardReason.MALFORMED_HEADER
        data_offset = rest[12] >> 4
        th_len = data_offset * 4
        if data_offset < 5 or th_len > len(rest):
            return DiscardReason.MALFORMED_HEADER
        flag_bits = rest[13]
        flags = TcpFlags(
            syn=bool(flag_bits & 0x02),
            ack=bool(flag_bits & 0x10),
            fin=bool(flag_bits & 0x01),
            rst=bool(flag_bits & 0x04),
        )
        return ParsedPacket(
            ip_header=ip_header,
            transport=Transport.TCP,
            transport_header=rest[:th_len],
            payload=rest[th_len:],
            flags=flags,
            src_port=int.from_bytes(rest[0:2], "big"),
            dst_port=int.from_bytes(rest[2:4], "big"),
        )
    if protocol == IP_PROTO_UDP:
        if len(rest) < UDP_HEADER_LEN:
            return DiscardReason.MALFORMED_HEADER
        return ParsedPacket(
            ip_header=ip_header,
            transport=Transport.UDP,
            transport_header=rest[:UDP_HEADER_LEN],
            payload=rest[UDP_HEADER_LEN:],
            flags=TcpFlags(),
            src_port=int.from_bytes(rest[0:2], "big"),
            dst_port=int.from_bytes(rest[2:4], "big"),
        )
    return DiscardReason.UNSUPPORTED_TRANSPORT


def should_discard(pkt: ParsedPacket) -> Optional[DiscardReason]:
    """Drop payload-free handshake segments and DNS traffic."""
    if pkt.transport is Transport.TCP and not pkt.payload and pkt.flags.any_handshake():
        return DiscardReason.HANDSHAKE_NO_PAYLOAD
    if DNS_PORT in (pkt.src_port, pkt.dst_port):
        return DiscardReason.DNS
    return None


def pad_udp_header(pkt: ParsedPacket) -> ParsedPacket:
    """Zero-extend the 8-byte UDP header to the 20-byte TCP header length."""
    if pkt.transport is not Transport.UDP:
        return pkt
    padded = pkt.transport_header + bytes(PADDED_UDP_HEADER_LEN - UDP_HEADER_LEN)
    return replace(pkt, transport_header=padded)


def mask_ip_addresses(pkt: ParsedPacket) -> ParsedPacket:
    """Zero the source and destination address fields of the IPv4 header."""
    header = bytearray(pkt.ip_header)
    header[IP_SRC_OFFSET:IP_ADDR_END] = bytes(IP_ADDR_END - IP_SRC_OFFSET)
    return replace(pkt, ip_header=bytes(header))


def vectorize(pkt: ParsedPacket, source: tuple[str, int] = ("", -1)) -> PacketVector:
    """Concatenate header/transport/payload, then truncate or zero-pad to 1500."""
    raw = pkt.ip_header + pkt.transport_header + pkt.payload
    if len(raw) >= VECTOR_LEN:
        raw = raw[:VECTOR_LEN]
    else:
        raw = raw + bytes(VECTOR_LEN - len(raw))
    return PacketVector(raw=raw, source_offset=source)


def process_frame(
    frame: CaptureFrame, source: tuple[str, int] = ("", -1)
) -> Union[PacketVector, DiscardReason]:
    """Full pipeline for one frame; total over arbitrary input bytes."""
    stripped = strip_link_header(frame)
    if isinstance(stripped, DiscardReason):
        return stripped
    parsed = parse_ip_packet(stripped)
    if isinstance(parsed, DiscardReason):
        return parsed
    reason = should_discard(parsed)
    if reason is not None:
        return reason
    return vectorize(mask_ip_addresses(pad_udp_header(parsed)), source)


def preprocess_capture(source: CaptureSource) -> tuple[list[PacketVector], DiscardStats]:
    """Run the pipeline over a capture; vector order follows frame order."""
    stats = DiscardStats()
    vectors: list[PacketVector] = []
    for index, frame in enumerate(source.frames()):
        outcome = process_frame(frame, (str(source.path), index))
        stats.record(outcome)
        if isinstance(outcome, PacketVector):
            vectors.append(outcome)
    return vectors, stats


def iter_vectors(
    source: CaptureSource, stats: Optional[DiscardStats] = None
) -> Iterable[PacketVector]:
    """Streaming variant of :func:`preprocess_capture`."""
    for index, frame in enumerate(source.frames()):
        outcome = process_frame(frame, (str(source.path), index))
        if stats is not None:
            stats.record(outcome)
        if isinstance(outcome, PacketVector):
            yield outcome
