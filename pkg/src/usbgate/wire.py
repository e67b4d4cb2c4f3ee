"""Framing protocol between device endpoints, the gateway, and the sink.

One frame encapsulates one USB event (device connect/disconnect, a transfer,
or a transfer result).  The layout is fixed and little-endian so that
endpoints written in any language interoperate byte-for-byte:

    magic       4 bytes  "UGT1"
    version     u8       1
    kind        u8       FrameKind
    reserved    u16      0
    device_id   u32
    transfer_id u64
    payload_len u32
    payload     payload_len bytes (<= 1 MiB)

Payload conventions by kind:
  * DeviceConnect   -- concatenated raw descriptor blobs (device descriptor,
                       then each configuration tree) as the device would
                       answer enumeration.
  * ControlTransfer -- 8-byte setup packet, then optional data-stage bytes.
  * Bulk/Interrupt/IsoTransfer -- 1-byte endpoint address, then data bytes.
  * TransferResult  -- 1-byte status (0=ACK, 1=STALL, 2=ERROR), then
                       response data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

MAGIC = b"UGT1"
VERSION = 1
MAX_PAYLOAD = 1 << 20  # 1 MiB: bounds allocation from untrusted input

_HEADER = struct.Struct("<4sBBHIQI")
HEADER_LEN = _HEADER.size  # 24


class FrameKind(IntEnum):
    HELLO = 0
    DEVICE_CONNECT = 1
    DEVICE_DISCONNECT = 2
    CONTROL_TRANSFER = 3
    BULK_TRANSFER = 4
    INTERRUPT_TRANSFER = 5
    ISO_TRANSFER = 6
    TRANSFER_RESULT = 7


# Kinds whose transfer_id must strictly increase per device; all other kinds
# carry transfer_id 0.  TransferResult repeats the id of the transfer it
# answers, so it is excluded from the monotonic set.
TRANSFER_KINDS = frozenset(
    {
        FrameKind.CONTROL_TRANSFER,
        FrameKind.BULK_TRANSFER,
        FrameKind.INTERRUPT_TRANSFER,
        FrameKind.ISO_TRANSFER,
    }
)

DATA_TRANSFER_KINDS = frozenset(
    {FrameKind.BULK_TRANSFER, FrameKind.INTERRUPT_TRANSFER, FrameKind.ISO_TRANSFER}
)

# TransferResult status bytes
STATUS_ACK = 0
STATUS_STALL = 1
STATUS_ERROR = 2


class EncodeError(ValueError):
    """Frame violates an encoding invariant (oversize payload, bad field)."""


class MalformedFrame(ValueError):
    """Byte stream is not a valid frame; the sender is treated as malicious."""


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    device_id: int = 0
    transfer_id: int = 0
    payload: bytes = b""
    version: int = VERSION

    def validate(self) -> None:
        if self.version != VERSION:
            raise EncodeError(f"unsupported version {self.version}")
        if not isinstance(self.kind, FrameKind):
            raise EncodeError(f"unknown frame kind {self.kind!r}")
        if not 0 <= self.device_id <= 0xFFFFFFFF:
            raise EncodeError(f"device_id {self.device_id} out of u32 range")
        if not 0 <= self.transfer_id <= 0xFFFFFFFFFFFFFFFF:
            raise EncodeError(f"transfer_id {self.transfer_id} out of u64 range")
        if len(self.payload) > MAX_PAYLOAD:
            raise EncodeError(f"payload {len(self.payload)} bytes exceeds 1 MiB cap")
        if self.kind not in TRANSFER_KINDS and self.kind != FrameKind.TRANSFER_RESULT:
            if self.transfer_id != 0:
                raise EncodeError(f"non-transfer kind {self.kind.name} with transfer_id != 0")


def encode_frame(frame: Frame) -> bytes:
    """Serialize a frame; raises EncodeError if it violates invariants."""
    frame.validate()
    header = _HEADER.pack(
        MAGIC,
        frame.version,
        int(frame.kind),
        0,
        frame.device_id,
        frame.transfer_id,
        len(frame.payload),
    )
    return header + frame.payload


def decode_frame(buffer: bytes | memoryview) -> tuple[Frame, int] | None:
    """Decode one frame from the head of ``buffer``.

    Returns (frame, bytes_consumed), or None if the buffer holds a valid but
    incomplete prefix.  Raises MalformedFrame on bad magic/version/kind or an
    oversize declared payload; never reads past the declared frame boundary.
    """
    view = memoryview(buffer)
    if len(view) < HEADER_LEN:
        if bytes(view[: min(4, len(view))]) != MAGIC[: min(4, len(view))]:
            raise MalformedFrame("bad magic")
        return None
    magic, version, kind, _reserved, device_id, transfer_id, payload_len = _HEADER.unpack_from(view, 0)
    if magic != MAGIC:
        raise MalformedFrame("bad magic")
    if version != VERSION:
        raise MalformedFrame(f"bad version {version}")
    try:
        frame_kind = FrameKind(kind)
    except ValueError:
        raise MalformedFrame(f"unknown kind {kind}") from None
    if payload_len > MAX_PAYLOAD:
        raise MalformedFrame(f"declared payload {payload_len} exceeds 1 MiB cap")
    total = HEADER_LEN + payload_len
    if len(view) < total:
        return None
    payload = bytes(view[HEADER_LEN:total])
    return Frame(frame_kind, device_id, transfer_id, payload), total


class StreamDecoder:
    """Incremental decoder for one connection's byte stream.

    Single-owner: feed() must be called by one thread per connection.
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        """Append bytes and return every complete frame now available.

        Raises MalformedFrame as decode_frame does; after that the connection
        must be torn down (the decoder keeps no usable state).
        """
        self._buf.extend(data)
        frames: list[Frame] = []
        offset = 0
        with memoryview(self._buf) as view:
            while True:
                result = decode_frame(view[offset:])
                if result is None:
                    break
                frame, consumed = result
                frames.append(frame)
                offset += consumed
        if offset:
            del self._buf[:offset]
        return frames

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Payload packing helpers for the per-kind conventions above.

def pack_control(setup: bytes, data: bytes = b"") -> bytes:
    if len(setup) != 8:
        raise EncodeError(f"setup packet must be 8 bytes, got {len(setup)}")
    return setup + data


def unpack_control(payload: bytes) -> tuple[bytes, bytes]:
    if len(payload) < 8:
        raise MalformedFrame("control payload shorter than a setup packet")
    return payload[:8], payload[8:]


def pack_result(status: int, data: bytes = b"") -> bytes:
    if status not in (STATUS_ACK, STATUS_STALL, STATUS_ERROR):
        raise EncodeError(f"bad result status {status}")
    return bytes([status]) + data


def unpack_result(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 1:
        raise MalformedFrame("empty transfer-result payload")
    return payload[0], payload[1:]


def pack_data(endpoint: int, data: bytes = b"") -> bytes:
    if not 0 <= endpoint <= 0xFF:
        raise EncodeError(f"bad endpoint address {endpoint:#x}")
    return bytes([endpoint]) + data


def unpack_data(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 1:
        raise MalformedFrame("data-transfer payload missing endpoint byte")
    return payload[0], payload[1:]
