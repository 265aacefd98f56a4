"""Classic pcap I/O and Ethernet/IP/TCP/UDP frame codecs.

Only the original libpcap container is supported: 24-byte global header,
magic 0xa1b2c3d4 (either byte order), microsecond timestamps, link type 1
(Ethernet). pcapng, nanosecond captures, and exotic link layers are
rejected with explicit errors rather than skipped, because a silently
half-read capture would poison everything trained on it.

The frame codec is intentionally narrow: Ethernet II carrying IPv4 or the
fixed IPv6 header, then TCP or UDP. Fragments, IPv6 extension chains, and
truncated snapshots are reported to the caller as skips, not errors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NANO = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERNET_HEADER_LEN = 14

PROTO_TCP = 6
PROTO_UDP = 17


class PcapError(ValueError):
    """Base class for malformed or unsupported capture input."""


class PcapFormatError(PcapError):
    """Structurally invalid pcap data; the message names the byte offset."""


class UnsupportedLinkTypeError(PcapError):
    """Well-formed pcap whose link layer this reader does not decode."""


def _as_bytes(capture: bytes | BinaryIO) -> bytes:
    if isinstance(capture, (bytes, bytearray, memoryview)):
        return bytes(capture)
    return capture.read()


def read_frames(capture: bytes | BinaryIO) -> Iterator[tuple[int, bytes]]:
    """Yield (timestamp_us, frame_bytes) for every record in a classic pcap.

    timestamp_us is absolute (seconds*1e6 + micros as written). Raises
    PcapFormatError on truncated or unrecognized structure and
    UnsupportedLinkTypeError for link types other than Ethernet.
    """
    data = _as_bytes(capture)
    if len(data) < GLOBAL_HEADER_LEN:
        raise PcapFormatError(
            f"truncated global header at offset 0: need {GLOBAL_HEADER_LEN} bytes, "
            f"have {len(data)}"
        )
    magic_le = struct.unpack_from("<I", data, 0)[0]
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif struct.unpack_from(">I", data, 0)[0] == PCAP_MAGIC:
        endian = ">"
    elif magic_le == PCAP_MAGIC_NANO or struct.unpack_from(">I", data, 0)[0] == PCAP_MAGIC_NANO:
        raise PcapFormatError(
            "nanosecond-resolution pcap magic at offset 0; only the classic "
            "microsecond format is supported"
        )
    else:
        raise PcapFormatError(f"bad pcap magic 0x{magic_le:08x} at offset 0")

    _magic, _vmaj, _vmin, _zone, _sigfigs, _snaplen, network = struct.unpack_from(
        endian + "IHHiIII", data, 0
    )
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkTypeError(
            f"unsupported link type {network}; only Ethernet (1) is handled"
        )

    offset = GLOBAL_HEADER_LEN
    while offset < len(data):
        if len(data) - offset < RECORD_HEADER_LEN:
            raise PcapFormatError(
                f"truncated record header at offset {offset}: need "
                f"{RECORD_HEADER_LEN} bytes, have {len(data) - offset}"
            )
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack_from(
            endian + "IIII", data, offset
        )
        body_start = offset + RECORD_HEADER_LEN
        if len(data) - body_start < incl_len:
            raise PcapFormatError(
                f"truncated record body at offset {body_start}: header claims "
                f"{incl_len} bytes, have {len(data) - body_start}"
            )
        if ts_usec >= 1_000_000:
            raise PcapFormatError(
                f"invalid microsecond field {ts_usec} at offset {offset}"
            )
        # Snap-length-truncated frames are passed through as-is; the segment
        # decoder notices the short IP length and reports them as skips.
        yield ts_sec * 1_000_000 + ts_usec, data[body_start : body_start + incl_len]
        offset = body_start + incl_len


def write_capture(frames: list[tuple[int, bytes]]) -> bytes:
    """Serialize (timestamp_us, frame) pairs into a classic pcap byte string."""
    out = bytearray()
    out += struct.pack("<IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)
    for ts_us, frame in frames:
        out += struct.pack(
            "<IIII", ts_us // 1_000_000, ts_us % 1_000_000, len(frame), len(frame)
        )
        out += frame
    return bytes(out)


# ---------------------------------------------------------------------------
# frame decoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecodedSegment:
    """One TCP segment or UDP datagram pulled out of an Ethernet frame."""

    src_addr: str
    dst_addr: str
    src_port: int
    dst_port: int
    protocol: int  # PROTO_TCP or PROTO_UDP
    payload: bytes
    tcp_seq: int | None


def _ipv4_to_str(raw: bytes) -> str:
    return ".".join(str(b) for b in raw)


def _ipv6_to_str(raw: bytes) -> str:
    import ipaddress

    return str(ipaddress.IPv6Address(raw))


def decode_frame(frame: bytes) -> DecodedSegment | None:
    """Decode one Ethernet frame down to its transport payload.

    Returns None for anything out of scope (non-IP ethertypes, fragments,
    IPv6 extension chains, non-TCP/UDP, or frames cut short by the snap
    length); the caller counts those as skips.
    """
    if len(frame) < ETHERNET_HEADER_LEN:
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    if ethertype == ETHERTYPE_IPV4:
        return _decode_ipv4(frame[ETHERNET_HEADER_LEN:])
    if ethertype == ETHERTYPE_IPV6:
        return _decode_ipv6(frame[ETHERNET_HEADER_LEN:])
    return None


def _decode_ipv4(packet: bytes) -> DecodedSegment | None:
    if len(packet) < 20:
        return None
    version_ihl = packet[0]
    if version_ihl >> 4 != 4:
        return None
    header_len = (version_ihl & 0x0F) * 4
    if header_len < 20 or len(packet) < header_len:
        return None
    total_len = struct.unpack_from(">H", packet, 2)[0]
    flags_frag = struct.unpack_from(">H", packet, 6)[0]
    if flags_frag & 0x2000 or flags_frag & 0x1FFF:
        return None  # fragmented; reassembly is out of scope
    protocol = packet[9]
    src = _ipv4_to_str(packet[12:16])
    dst = _ipv4_to_str(packet[16:20])
    if total_len < header_len or total_len > len(packet):
        return None
    return _decode_transport(packet[header_len:total_len], protocol, src, dst)


def _decode_ipv6(packet: bytes) -> DecodedSegment | None:
    if len(packet) < 40:
        return None
    if packet[0] >> 4 != 6:
        return None
    payload_len = struct.unpack_from(">H", packet, 4)[0]
    next_header = packet[6]
    src = _ipv6_to_str(packet[8:24])
    dst = _ipv6_to_str(packet[24:40])
    if len(packet) < 40 + payload_len:
        return None
    # Extension-header chains are out of scope; only a direct TCP/UDP
    # next-header is decoded.
    return _decode_transport(packet[40 : 40 + payload_len], next_header, src, dst)


def _decode_transport(
    segment: bytes, protocol: int, src: str, dst: str
) -> DecodedSegment | None:
    if protocol == PROTO_TCP:
        if len(segment) < 20:
            return None
        src_port, dst_port, seq = struct.unpack_from(">HHI", segment, 0)
        data_offset = (segment[12] >> 4) * 4
        if data_offset < 20 or len(segment) < data_offset:
            return None
        return DecodedSegment(
            src, dst, src_port, dst_port, PROTO_TCP, segment[data_offset:], seq
        )
    if protocol == PROTO_UDP:
        if len(segment) < 8:
            return None
        src_port, dst_port, udp_len = struct.unpack_from(">HHH", segment, 0)
        if udp_len < 8 or len(segment) < udp_len:
            return None
        return DecodedSegment(
            src, dst, src_port, dst_port, PROTO_UDP, segment[8:udp_len], None
        )
    return None


# ---------------------------------------------------------------------------
# frame encoding (used by the simulated-device companion to emit captures)
# ---------------------------------------------------------------------------


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total > 0xFFFF:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _mac_for(addr_raw: bytes) -> bytes:
    # Locally administered MAC derived from the IP so frames are stable.
    tail = (addr_raw * 6)[:4]
    return b"\x02\x00" + tail


def encode_frame(
    src_addr: str,
    dst_addr: str,
    src_port: int,
    dst_port: int,
    protocol: int,
    payload: bytes,
    tcp_seq: int = 0,
    tcp_ack: int = 0,
    ip_id: int = 0,
) -> bytes:
    """Build a full Ethernet frame around one transport payload.

    Checksums are computed for real; parsers downstream may rely on them.
    IPv4 or IPv6 is chosen from the address form.
    """
    import ipaddress

    src_ip = ipaddress.ip_address(src_addr)
    dst_ip = ipaddress.ip_address(dst_addr)
    if src_ip.version != dst_ip.version:
        raise ValueError("mixed IPv4/IPv6 endpoints in one frame")

    if protocol == PROTO_TCP:
        transport = struct.pack(
            ">HHIIBBHHH",
            src_port,
            dst_port,
            tcp_seq & 0xFFFFFFFF,
            tcp_ack & 0xFFFFFFFF,
            5 << 4,
            0x18,  # PSH|ACK
            65535,
            0,
            0,
        )
        transport += payload
    elif protocol == PROTO_UDP:
        transport = struct.pack(">HHHH", src_port, dst_port, 8 + len(payload), 0)
        transport += payload
    else:
        raise ValueError(f"unsupported transport protocol {protocol}")

    src_raw = src_ip.packed
    dst_raw = dst_ip.packed
    if src_ip.version == 4:
        pseudo = src_raw + dst_raw + struct.pack(">BBH", 0, protocol, len(transport))
        transport = _fill_transport_checksum(transport, protocol, pseudo)
        ip_header = struct.pack(
            ">BBHHHBBH4s4s",
            0x45,
            0,
            20 + len(transport),
            ip_id & 0xFFFF,
            0x4000,  # don't fragment
            64,
            protocol,
            0,
            src_raw,
            dst_raw,
        )
        ip_header = ip_header[:10] + struct.pack(">H", _checksum(ip_header)) + ip_header[12:]
        packet = ip_header + transport
        ethertype = ETHERTYPE_IPV4
    else:
        pseudo = src_raw + dst_raw + struct.pack(">IHBB", len(transport), 0, 0, protocol)
        transport = _fill_transport_checksum(transport, protocol, pseudo)
        ip_header = struct.pack(
            ">IHBB16s16s",
            6 << 28,
            len(transport),
            protocol,
            64,
            src_raw,
            dst_raw,
        )
        packet = ip_header + transport
        ethertype = ETHERTYPE_IPV6

    return (
        _mac_for(dst_raw)
        + _mac_for(src_raw)
        + struct.pack(">H", ethertype)
        + packet
    )


def _fill_transport_checksum(transport: bytes, protocol: int, pseudo: bytes) -> bytes:
    offset = 16 if protocol == PROTO_TCP else 6
    checksum = _checksum(pseudo + transport)
    if protocol == PROTO_UDP and checksum == 0:
        checksum = 0xFFFF
    return transport[:offset] + struct.pack(">H", checksum) + transport[offset + 2 :]
