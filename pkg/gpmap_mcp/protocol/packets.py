"""Packet wire format and per-step candidate libraries.

A packet record is little-endian, fixed layout:

    sender_id  u32
    step       u32
    dim        u32
    location   dim x f64
    mean       f64
    variance   f64

so a 2-D packet is 12 + 16 + 16 = 44 bytes. The run directory's
`packets.bin` frames each record as `<u32 length><u32 receiver_id>` followed
by the record bytes.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Mapping, Sequence, Tuple, Union

from gpmap_mcp.errors import IoFailure, MalformedPacket
from gpmap_mcp.model.gp import Point, as_point

LOGGER = logging.getLogger(__name__)

_HEADER = struct.Struct("<III")
_FRAME = struct.Struct("<II")
_U32_MAX = 2 ** 32 - 1

LibraryKey = Tuple[int, int]


@dataclass(frozen=True)
class Packet:
    location: Point
    mean: float
    variance: float
    sender_id: int
    step: int

    def __post_init__(self):
        object.__setattr__(self, "location", as_point(self.location))
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "sender_id", int(self.sender_id))
        object.__setattr__(self, "step", int(self.step))
        if not self.location:
            raise MalformedPacket("packet location has zero dimensions")
        values = self.location + (self.mean, self.variance)
        if not all(math.isfinite(v) for v in values):
            raise MalformedPacket(f"non-finite packet field: {values}")
        if not self.variance > 0:
            raise MalformedPacket(f"packet variance must be positive, got {self.variance}")
        for name in ("sender_id", "step"):
            v = getattr(self, name)
            if not 0 <= v <= _U32_MAX:
                raise MalformedPacket(f"{name} {v} does not fit in u32")

    @property
    def dim(self) -> int:
        return len(self.location)


def record_size(dim: int) -> int:
    return _HEADER.size + 8 * (dim + 2)


def encode_packet(p: Packet) -> bytes:
    n = p.dim
    return _HEADER.pack(p.sender_id, p.step, n) + struct.pack(f"<{n + 2}d", *p.location, p.mean, p.variance)


def decode_packet(buf: bytes) -> Packet:
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise MalformedPacket(f"truncated packet header: {len(buf)} bytes")
    sender_id, step, n = _HEADER.unpack_from(buf)
    if n < 1:
        raise MalformedPacket(f"packet dimension must be >= 1, got {n}")
    expected = record_size(n)
    if len(buf) != expected:
        raise MalformedPacket(f"packet of dim {n} needs {expected} bytes, got {len(buf)}")
    floats = struct.unpack_from(f"<{n + 2}d", buf, _HEADER.size)
    return Packet(floats[:n], floats[n], floats[n + 1], sender_id, step)


def write_packet_log(path: Union[str, Path], entries: Iterable[Tuple[int, Packet]]) -> int:
    """Write (receiver_id, packet) pairs to a framed binary log. Returns the record count."""
    count = 0
    try:
        with open(path, "wb") as f:
            for receiver_id, packet in entries:
                body = encode_packet(packet)
                f.write(_FRAME.pack(len(body), int(receiver_id)))
                f.write(body)
                count += 1
    except OSError as exc:
        raise IoFailure(f"cannot write packet log {path}: {exc}") from exc
    return count


def read_packet_log(path: Union[str, Path]) -> List[Tuple[int, Packet]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read packet log {path}: {exc}") from exc
    out: List[Tuple[int, Packet]] = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < _FRAME.size:
            raise MalformedPacket(f"truncated frame header at byte {pos}")
        length, receiver_id = _FRAME.unpack_from(data, pos)
        pos += _FRAME.size
        if len(data) - pos < length:
            raise MalformedPacket(f"truncated record at byte {pos}: need {length} bytes")
        out.append((receiver_id, decode_packet(data[pos:pos + length])))
        pos += length
    return out


@dataclass(frozen=True)
class CandidateLibrary:
    """Packets one receiver got this step, grouped per sending in-neighbour.

    `pooled()` is the union over senders in ascending sender id, each
    sender's packets in emission order. No deduplication.
    """

    per_edge: Tuple[Tuple[int, Tuple[Packet, ...]], ...] = ()

    @classmethod
    def from_edges(cls, edges: Mapping[int, Sequence[Packet]]) -> "CandidateLibrary":
        return cls(tuple((int(j), tuple(edges[j])) for j in sorted(edges)))

    def __len__(self) -> int:
        return sum(len(pkts) for _, pkts in self.per_edge)

    @property
    def senders(self) -> Tuple[int, ...]:
        return tuple(j for j, _ in self.per_edge)

    def pooled(self) -> List[Tuple[LibraryKey, Packet]]:
        return [((j, idx), p) for j, pkts in self.per_edge for idx, p in enumerate(pkts)]
