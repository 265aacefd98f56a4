"""Classic-pcap reader/writer and Ethernet/IP/transport codec tests."""

import struct

import pytest

from replaycheck import pcap


def make_header(magic=pcap.PCAP_MAGIC, linktype=pcap.LINKTYPE_ETHERNET, endian="<"):
    return struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype)


def make_record(ts_sec, ts_usec, frame, endian="<"):
    return struct.pack(endian + "IIII", ts_sec, ts_usec, len(frame), len(frame)) + frame


def tcp_frame(payload=b"hello", src="10.0.0.1", dst="10.0.0.2", sport=5000, dport=80, seq=1):
    return pcap.encode_frame(src, dst, sport, dport, pcap.PROTO_TCP, payload, tcp_seq=seq)


class TestReadFrames:
    def test_header_only_capture_yields_nothing(self):
        assert list(pcap.read_frames(make_header())) == []

    def test_little_endian_frames(self):
        frame = tcp_frame()
        data = make_header() + make_record(10, 250, frame)
        assert list(pcap.read_frames(data)) == [(10_000_250, frame)]

    def test_byte_swapped_capture(self):
        frame = tcp_frame()
        data = make_header(endian=">") + make_record(3, 7, frame, endian=">")
        assert list(pcap.read_frames(data)) == [(3_000_007, frame)]

    def test_nanosecond_magic_rejected(self):
        data = make_header(magic=pcap.PCAP_MAGIC_NANO)
        with pytest.raises(pcap.PcapFormatError, match="nanosecond"):
            list(pcap.read_frames(data))

    def test_garbage_magic_rejected_with_offset(self):
        with pytest.raises(pcap.PcapFormatError, match="offset 0"):
            list(pcap.read_frames(b"\x00" * 24))

    def test_unsupported_link_type(self):
        data = make_header(linktype=105)  # 802.11
        with pytest.raises(pcap.UnsupportedLinkTypeError):
            list(pcap.read_frames(data))

    def test_truncated_global_header(self):
        with pytest.raises(pcap.PcapFormatError):
            list(pcap.read_frames(make_header()[:20]))

    def test_truncated_record_header_names_offset(self):
        data = make_header() + b"\x01\x02\x03"
        with pytest.raises(pcap.PcapFormatError, match="offset 24"):
            list(pcap.read_frames(data))

    def test_truncated_frame_body(self):
        frame = tcp_frame()
        record = make_record(0, 0, frame)
        with pytest.raises(pcap.PcapFormatError):
            list(pcap.read_frames(make_header() + record[:-5]))

    def test_microseconds_field_out_of_range(self):
        data = make_header() + make_record(0, 1_000_000, tcp_frame())
        with pytest.raises(pcap.PcapFormatError):
            list(pcap.read_frames(data))

    def test_write_then_read_round_trip(self):
        frames = [(1_000_000, tcp_frame(b"a")), (2_500_000, tcp_frame(b"bb", seq=2))]
        assert list(pcap.read_frames(pcap.write_capture(frames))) == frames


class TestDecodeFrame:
    def test_tcp_ipv4_round_trip(self):
        payload = b"\x00\x01binary\xff"
        frame = pcap.encode_frame(
            "192.168.1.10", "192.168.1.20", 4321, 8888, pcap.PROTO_TCP, payload,
            tcp_seq=777,
        )
        seg = pcap.decode_frame(frame)
        assert seg is not None
        assert (seg.src_addr, seg.dst_addr) == ("192.168.1.10", "192.168.1.20")
        assert (seg.src_port, seg.dst_port) == (4321, 8888)
        assert seg.protocol == pcap.PROTO_TCP
        assert seg.payload == payload
        assert seg.tcp_seq == 777

    def test_udp_ipv4_round_trip(self):
        frame = pcap.encode_frame(
            "10.0.0.1", "10.0.0.2", 9999, 5353, pcap.PROTO_UDP, b"datagram"
        )
        seg = pcap.decode_frame(frame)
        assert seg.payload == b"datagram"
        assert seg.protocol == pcap.PROTO_UDP
        assert seg.tcp_seq is None

    def test_tcp_ipv6_round_trip(self):
        frame = pcap.encode_frame(
            "fd00::1", "fd00::2", 1234, 80, pcap.PROTO_TCP, b"six", tcp_seq=5
        )
        seg = pcap.decode_frame(frame)
        assert (seg.src_addr, seg.dst_addr) == ("fd00::1", "fd00::2")
        assert seg.payload == b"six"

    def test_zero_payload_decodes_to_empty(self):
        frame = pcap.encode_frame("10.0.0.1", "10.0.0.2", 1, 2, pcap.PROTO_TCP, b"")
        assert pcap.decode_frame(frame).payload == b""

    def test_non_ip_ethertype_skipped(self):
        frame = b"\x02" * 12 + b"\x08\x06" + b"\x00" * 28  # ARP
        assert pcap.decode_frame(frame) is None

    def test_ipv4_fragment_skipped(self):
        frame = bytearray(tcp_frame())
        # set more-fragments flag in the IPv4 header
        frame[14 + 6] = 0x20
        assert pcap.decode_frame(bytes(frame)) is None

    def test_ipv4_options_respected(self):
        base = tcp_frame(b"opt")
        ip = bytearray(base[14:])
        transport = ip[20:]
        ip_with_opts = bytearray(ip[:20]) + b"\x01\x01\x01\x01" + transport
        ip_with_opts[0] = 0x46  # IHL 6
        struct.pack_into(">H", ip_with_opts, 2, len(ip_with_opts))
        seg = pcap.decode_frame(bytes(base[:14]) + bytes(ip_with_opts))
        assert seg is not None
        assert seg.payload == b"opt"

    def test_snap_truncated_frame_skipped(self):
        frame = tcp_frame(b"full payload")
        assert pcap.decode_frame(frame[:40]) is None

    def test_other_ip_protocol_skipped(self):
        frame = bytearray(tcp_frame())
        frame[14 + 9] = 1  # ICMP
        assert pcap.decode_frame(bytes(frame)) is None


class TestChecksums:
    def ones_complement_sum(self, data):
        if len(data) % 2:
            data += b"\x00"
        total = sum(struct.unpack(f">{len(data) // 2}H", data))
        while total > 0xFFFF:
            total = (total & 0xFFFF) + (total >> 16)
        return total

    def test_ipv4_header_checksum_valid(self):
        frame = tcp_frame()
        assert self.ones_complement_sum(frame[14:34]) == 0xFFFF

    def test_tcp_checksum_valid_over_pseudo_header(self):
        frame = tcp_frame(b"checkme")
        ip = frame[14:34]
        transport = frame[34:]
        pseudo = ip[12:16] + ip[16:20] + struct.pack(">BBH", 0, 6, len(transport))
        assert self.ones_complement_sum(pseudo + transport) == 0xFFFF

    def test_udp_checksum_valid(self):
        frame = pcap.encode_frame("10.1.1.1", "10.1.1.2", 53, 53, pcap.PROTO_UDP, b"q")
        ip = frame[14:34]
        transport = frame[34:]
        pseudo = ip[12:16] + ip[16:20] + struct.pack(">BBH", 0, 17, len(transport))
        assert self.ones_complement_sum(pseudo + transport) == 0xFFFF
