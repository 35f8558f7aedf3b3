"""Bit-exact message framing, channels, and traffic accounting.

Frame layout (all multi-byte integers little-endian):

    magic   4 bytes  0x44 0x41 0x47 0x31 ("DAG1")
    kind    1 byte
    round   8 bytes
    sender  4 bytes
    length  4 bytes  payload byte count
    payload

Model-share payloads are the raw 8-byte field-element words with no
extra count prefix (the frame length determines the element count), so
a share of a d-dimensional model is exactly 8*d payload bytes and a tag
share is exactly 8.

Two channel backends share the same semantics: an in-memory FIFO for
deterministic simulation and a TCP stream for networked runs.  Both
record every send into a :class:`TrafficLedger`.
"""

from __future__ import annotations

import socket
import struct
from collections import deque
from dataclasses import dataclass, field as dc_field
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from . import field
from .tags import tag_from_bytes, tag_to_bytes

MAGIC = b"DAG1"
HEADER = struct.Struct("<4sBQII")
MAX_PAYLOAD = (1 << 31) - 1


class MessageKind(IntEnum):
    SETUP_KEY = 0
    SEED_PAIR = 1
    MODEL_SHARE = 2
    TAG_SHARE = 3
    ONLINE_LIST = 4
    RESHARE_MODEL = 5
    RESHARE_TAG = 6
    PUBLISH_MODEL = 7
    PUBLISH_TAG = 8
    PARAM_DIGEST = 9
    ALARM = 10


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    round_index: int
    sender: int
    payload: bytes


class WireError(ValueError):
    """Malformed frame; ``offset`` is the byte position of the defect."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class BadMagicError(WireError):
    pass


class TruncatedFrameError(WireError):
    pass


class UnknownKindError(WireError):
    pass


class LengthMismatchError(WireError):
    pass


class LinkClosedError(RuntimeError):
    pass


def serialize(msg: Message) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise WireError(f"payload of {len(msg.payload)} bytes exceeds 2^31 limit")
    return HEADER.pack(MAGIC, int(msg.kind), msg.round_index, msg.sender,
                       len(msg.payload)) + msg.payload


def _parse_one(data: bytes, base: int) -> Tuple[Message, int]:
    if len(data) < HEADER.size:
        raise TruncatedFrameError("frame shorter than its header", base + len(data))
    magic, kind, round_index, sender, length = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}", base)
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise UnknownKindError(f"unknown message kind {kind}", base + 4) from None
    end = HEADER.size + length
    if len(data) < end:
        raise TruncatedFrameError("frame truncated mid-payload", base + len(data))
    return Message(kind, round_index, sender, bytes(data[HEADER.size:end])), end


def deserialize(data: bytes) -> Message:
    """Exact inverse of :func:`serialize` on a single well-formed frame."""
    msg, end = _parse_one(data, 0)
    if end != len(data):
        raise LengthMismatchError(
            f"{len(data) - end} trailing bytes after frame", end)
    return msg


def parse_frames(data: bytes) -> List[Message]:
    """Split a concatenation of frames back into the original sequence."""
    out = []
    pos = 0
    while pos < len(data):
        msg, used = _parse_one(data[pos:], pos)
        out.append(msg)
        pos += used
    return out


# -- payload layouts ---------------------------------------------------------

def pack_online_list(ids: Iterable[int]) -> bytes:
    ids = sorted(ids)
    return struct.pack(f"<{len(ids)}I", *ids)


def unpack_online_list(payload: bytes) -> List[int]:
    if len(payload) % 4 != 0:
        raise WireError("online list payload must be a multiple of 4 bytes")
    return list(struct.unpack(f"<{len(payload) // 4}I", payload))


def pack_publish_model(m: int, vec: np.ndarray) -> bytes:
    return struct.pack("<Q", m) + field.vec_to_raw(vec)


def unpack_publish_model(payload: bytes) -> Tuple[int, np.ndarray]:
    (m,) = struct.unpack("<Q", payload[:8])
    return m, field.vec_from_raw(payload[8:])


def pack_publish_tag(m: int, tag: int) -> bytes:
    return struct.pack("<Q", m) + tag_to_bytes(tag)


def unpack_publish_tag(payload: bytes) -> Tuple[int, int]:
    (m,) = struct.unpack("<Q", payload[:8])
    return m, tag_from_bytes(payload[8:])


def pack_alarm(round_index: int, expected_tag: int, computed_tag: int) -> bytes:
    return struct.pack("<QQQ", round_index, expected_tag, computed_tag)


def unpack_alarm(payload: bytes) -> Tuple[int, int, int]:
    return struct.unpack("<QQQ", payload)


# -- traffic accounting ------------------------------------------------------

@dataclass
class LinkTraffic:
    payload_bytes: int = 0
    total_bytes: int = 0
    messages: int = 0


@dataclass
class TrafficLedger:
    """Byte and message counts per (link name, round)."""

    entries: Dict[Tuple[str, int], LinkTraffic] = dc_field(default_factory=dict)

    def record(self, link: str, round_index: int, payload_len: int, frame_len: int) -> None:
        entry = self.entries.setdefault((link, round_index), LinkTraffic())
        entry.payload_bytes += payload_len
        entry.total_bytes += frame_len
        entry.messages += 1

    def payload_bytes(self, link: str, round_index: int) -> int:
        entry = self.entries.get((link, round_index))
        return entry.payload_bytes if entry else 0

    def total_bytes(self, link: str, round_index: int) -> int:
        entry = self.entries.get((link, round_index))
        return entry.total_bytes if entry else 0

    def round_payload(self, round_index: int, prefix: str = "") -> int:
        return sum(e.payload_bytes for (link, r), e in self.entries.items()
                   if r == round_index and link.startswith(prefix))


# -- channels ----------------------------------------------------------------

class MemoryLink:
    """Reliable ordered in-process channel with ledger accounting."""

    def __init__(self, name: str, ledger: Optional[TrafficLedger] = None):
        self.name = name
        self.ledger = ledger
        self._queue: deque = deque()
        self._closed = False

    def send(self, msg: Message) -> None:
        if self._closed:
            raise LinkClosedError(f"link {self.name} is closed")
        frame = serialize(msg)
        if self.ledger is not None:
            self.ledger.record(self.name, msg.round_index, len(msg.payload), len(frame))
        # Round-trip through bytes so both backends exercise the codec.
        self._queue.append(frame)

    def recv(self) -> Message:
        if not self._queue:
            if self._closed:
                raise LinkClosedError(f"link {self.name} is closed")
            raise LinkClosedError(f"link {self.name} has no pending message")
        return deserialize(self._queue.popleft())

    def pending(self) -> int:
        return len(self._queue)

    def close(self) -> None:
        self._closed = True


class SocketLink:
    """Length-framed message stream over a connected TCP socket."""

    def __init__(self, sock: socket.socket, name: str,
                 ledger: Optional[TrafficLedger] = None, timeout: Optional[float] = 10.0):
        self.name = name
        self.ledger = ledger
        self._sock = sock
        self._sock.settimeout(timeout)

    def send(self, msg: Message) -> None:
        frame = serialize(msg)
        if self.ledger is not None:
            self.ledger.record(self.name, msg.round_index, len(msg.payload), len(frame))
        self._sock.sendall(frame)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise LinkClosedError(f"link {self.name} closed mid-frame")
            buf.extend(chunk)
        return bytes(buf)

    def recv(self) -> Message:
        header = self._read_exact(HEADER.size)
        magic, kind, round_index, sender, length = HEADER.unpack(header)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        payload = self._read_exact(length) if length else b""
        return deserialize(header + payload)

    def close(self) -> None:
        self._sock.close()


def socket_link_pair(name: str, ledger: Optional[TrafficLedger] = None,
                     host: str = "127.0.0.1") -> Tuple[SocketLink, SocketLink]:
    """Connected (sender, receiver) TCP pair on the loopback interface."""
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind((host, 0))
    listener.listen(1)
    client = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    client.connect(listener.getsockname())
    server, _ = listener.accept()
    listener.close()
    return SocketLink(client, name, ledger), SocketLink(server, name)
