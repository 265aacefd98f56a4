"""Capture model: endpoints, transport-payload records, and flows.

A capture is reduced to the payload-bearing traffic between exactly two
endpoints (the controlling app and the device). Everything else is
unrelated noise and is dropped. Flows group a run of consecutive
requests with the run of responses that follows, which is the unit the
replay engine works with.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import BinaryIO, Iterable, Iterator

from . import pcap


class Transport(str, Enum):
    TCP = "tcp"
    UDP = "udp"


class Direction(Enum):
    REQUEST = "request"  # app -> device
    RESPONSE = "response"  # device -> app
    UNRELATED = "unrelated"


_PROTO_FOR = {Transport.TCP: pcap.PROTO_TCP, Transport.UDP: pcap.PROTO_UDP}
_TRANSPORT_FOR = {pcap.PROTO_TCP: Transport.TCP, pcap.PROTO_UDP: Transport.UDP}


@dataclass(frozen=True)
class Endpoint:
    """One side of the observed session: IP address plus port."""

    address: str
    port: int

    def __post_init__(self):
        canonical = str(ipaddress.ip_address(self.address))
        object.__setattr__(self, "address", canonical)
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")

    def __str__(self) -> str:
        if ":" in self.address:
            return f"[{self.address}]:{self.port}"
        return f"{self.address}:{self.port}"


def parse_endpoint(text: str) -> Endpoint:
    """Parse 'host:port' or '[v6]:port' into an Endpoint."""
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected ADDRESS:PORT, got {text!r}")
    host = host.strip("[]")
    return Endpoint(host, int(port))


@dataclass(frozen=True)
class PacketRecord:
    """One transport payload with its direction endpoints.

    timestamp is microseconds since the capture epoch (the first frame in
    the capture). payload is never empty; zero-payload segments are
    dropped during parsing.
    """

    timestamp: int
    src: Endpoint
    dst: Endpoint
    transport: Transport
    payload: bytes

    def __post_init__(self):
        if len(self.payload) == 0:
            raise ValueError("PacketRecord payload must be non-empty")


@dataclass(frozen=True)
class SessionConfig:
    """The app/device endpoint pair a capture is interpreted against."""

    app: Endpoint
    device: Endpoint
    transport_filter: Transport | None = None

    def __post_init__(self):
        if self.app == self.device:
            raise ValueError("app and device endpoints must differ")


@dataclass(frozen=True)
class Flow:
    """A maximal run of requests followed by the responses to them.

    requests is never empty; responses may be (a trailing command the
    device never answered still gets replayed).
    """

    requests: tuple[PacketRecord, ...]
    responses: tuple[PacketRecord, ...]

    def __post_init__(self):
        if not self.requests:
            raise ValueError("Flow.requests must be non-empty")


@dataclass
class CaptureNotes:
    """Diagnostics from one parse, for operator-facing summaries."""

    frames_total: int = 0
    frames_skipped: int = 0
    records_matched: int = 0
    zero_payload_dropped: int = 0
    retransmissions_dropped: int = 0
    sequence_regressions: int = 0

    def summary(self) -> str:
        parts = [
            f"{self.frames_total} frames",
            f"{self.records_matched} matched payload records",
        ]
        if self.frames_skipped:
            parts.append(f"{self.frames_skipped} undecodable/unrelated-layer frames")
        if self.zero_payload_dropped:
            parts.append(f"{self.zero_payload_dropped} empty-payload segments dropped")
        if self.retransmissions_dropped:
            parts.append(f"{self.retransmissions_dropped} retransmissions dropped")
        if self.sequence_regressions:
            parts.append(
                f"{self.sequence_regressions} TCP sequence regressions "
                "(multiple connections merged into one stream)"
            )
        return ", ".join(parts)


def classify_direction(record: PacketRecord, config: SessionConfig) -> Direction:
    if record.src == config.app and record.dst == config.device:
        return Direction.REQUEST
    if record.src == config.device and record.dst == config.app:
        return Direction.RESPONSE
    return Direction.UNRELATED


def iter_records(
    frames: Iterable[tuple[int, bytes]],
    config: SessionConfig,
    notes: CaptureNotes | None = None,
) -> Iterator[PacketRecord]:
    """Pull-based record stream over (timestamp_us, frame) pairs.

    This is the live-source entry point: any iterable of raw frames works,
    not just a pcap file. The first frame (matched or not) defines the
    capture epoch. Identical TCP retransmissions (same endpoints, same
    sequence number, same payload) are dropped on the fly.
    """
    notes = notes if notes is not None else CaptureNotes()
    epoch: int | None = None
    seen_tcp: set[tuple[Endpoint, Endpoint, int, bytes]] = set()
    # Highest sequence byte seen so far per direction, to flag captures in
    # which several connections were merged into one record stream.
    seq_high: dict[tuple[Endpoint, Endpoint], int] = {}

    for ts_us, frame in frames:
        notes.frames_total += 1
        if epoch is None:
            epoch = ts_us
        segment = pcap.decode_frame(frame)
        if segment is None:
            notes.frames_skipped += 1
            continue
        transport = _TRANSPORT_FOR.get(segment.protocol)
        if transport is None:
            notes.frames_skipped += 1
            continue
        if config.transport_filter is not None and transport != config.transport_filter:
            notes.frames_skipped += 1
            continue
        try:
            src = Endpoint(segment.src_addr, segment.src_port)
            dst = Endpoint(segment.dst_addr, segment.dst_port)
        except ValueError:
            notes.frames_skipped += 1
            continue
        if not (
            (src == config.app and dst == config.device)
            or (src == config.device and dst == config.app)
        ):
            notes.frames_skipped += 1
            continue
        if not segment.payload:
            notes.zero_payload_dropped += 1
            continue
        if transport == Transport.TCP and segment.tcp_seq is not None:
            key = (src, dst, segment.tcp_seq, segment.payload)
            if key in seen_tcp:
                notes.retransmissions_dropped += 1
                continue
            seen_tcp.add(key)
            direction = (src, dst)
            end = segment.tcp_seq + len(segment.payload)
            if direction in seq_high and segment.tcp_seq < seq_high[direction]:
                notes.sequence_regressions += 1
            seq_high[direction] = max(seq_high.get(direction, 0), end)
        record = PacketRecord(
            timestamp=ts_us - epoch,
            src=src,
            dst=dst,
            transport=transport,
            payload=segment.payload,
        )
        notes.records_matched += 1
        yield record


def parse_capture_with_notes(
    capture: bytes | BinaryIO, config: SessionConfig
) -> tuple[list[PacketRecord], CaptureNotes]:
    """parse_capture plus the diagnostics collected along the way."""
    notes = CaptureNotes()
    records = list(iter_records(pcap.read_frames(capture), config, notes))
    records.sort(key=lambda r: r.timestamp)  # stable; upholds ordering invariant
    return records, notes


def parse_capture(capture: bytes | BinaryIO, config: SessionConfig) -> list[PacketRecord]:
    """Extract the app/device payload records from a classic pcap capture.

    Returns records in timestamp order with transport payloads intact.
    Raises pcap.PcapError subclasses for malformed or unsupported files.
    """
    records, _ = parse_capture_with_notes(capture, config)
    return records


def segment_flows(records: list[PacketRecord], config: SessionConfig) -> list[Flow]:
    """Split a record list into request-run/response-run flows.

    A new flow begins at every request that follows a response (or at the
    first request). Unrelated records are dropped, as are responses seen
    before any request. Input must already be in timestamp order.
    """
    flows: list[Flow] = []
    requests: list[PacketRecord] = []
    responses: list[PacketRecord] = []
    for record in records:
        direction = classify_direction(record, config)
        if direction == Direction.UNRELATED:
            continue
        if direction == Direction.REQUEST:
            if responses:
                flows.append(Flow(tuple(requests), tuple(responses)))
                requests, responses = [], []
            requests.append(record)
        else:
            if requests:
                responses.append(record)
            # else: response with no preceding request; dropped
    if requests:
        flows.append(Flow(tuple(requests), tuple(responses)))
    return flows


def check_local_connectivity(records: list[PacketRecord]) -> bool:
    """True iff the capture contains any app/device traffic at all.

    When this fails there is nothing on the local network to assess and
    the pipeline stops before training.
    """
    return len(records) > 0
