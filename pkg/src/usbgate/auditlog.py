"""Append-only audit log, deterministic replay, and remote log streaming.

File layout (little-endian throughout):

    magic "UGLG", u16 version = 1
    then records, each: u32 record_len, record bytes
    record: seq u64, t_mono_ns u64, origin u8, device_id u32, verdict u8,
            reason_len u16, reason (UTF-8), frame bytes

Origins: 0 = FromDevice (a captured device frame, replayable),
1 = ToBlue (bytes as forwarded), 2 = VerdictNote (one decision).  Verdict
byte 0 means "none" (used by the wall-clock open note); readers skip at most
one truncated trailing record with a warning.

Timestamps are monotonic so replay pacing survives wall-clock changes; the
wall clock is recorded once, in the open note.
"""

from __future__ import annotations

import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import IntEnum
from typing import IO, Iterable

from usbgate.core import GatewayCore, Recorder
from usbgate.engine import ChainSet, StatsStore, Verdict, VerdictKind
from usbgate.wire import decode_frame

LOG_MAGIC = b"UGLG"
LOG_VERSION = 1

_FILE_HEADER = struct.Struct("<4sH")
_RECORD_FIXED = struct.Struct("<QQBIBH")

_VERDICT_CODES: dict[VerdictKind | None, int] = {
    None: 0,
    VerdictKind.ALLOW: 1,
    VerdictKind.REWRITE: 2,
    VerdictKind.DROP: 3,
    VerdictKind.DISABLE_DEVICE: 4,
    VerdictKind.REDIRECT: 5,
}
_VERDICT_BY_CODE = {v: k for k, v in _VERDICT_CODES.items()}


class LogError(Exception):
    pass


class ReplayError(Exception):
    pass


class Origin(IntEnum):
    FROM_DEVICE = 0
    TO_BLUE = 1
    VERDICT_NOTE = 2


@dataclass(frozen=True)
class LogRecord:
    seq: int
    t_mono_ns: int
    origin: Origin
    device_id: int
    verdict: VerdictKind | None
    reason: str
    frame_bytes: bytes


def encode_record(record: LogRecord) -> bytes:
    reason = record.reason.encode("utf-8")
    if len(reason) > 0xFFFF:
        reason = reason[:0xFFFF]
    body = (
        _RECORD_FIXED.pack(
            record.seq,
            record.t_mono_ns,
            int(record.origin),
            record.device_id,
            _VERDICT_CODES[record.verdict],
            len(reason),
        )
        + reason
        + record.frame_bytes
    )
    return struct.pack("<I", len(body)) + body


def decode_record(body: bytes) -> LogRecord:
    if len(body) < _RECORD_FIXED.size:
        raise LogError(f"record body of {len(body)} bytes is shorter than the fixed header")
    seq, t, origin, device_id, verdict_code, reason_len = _RECORD_FIXED.unpack_from(body, 0)
    if origin > 2:
        raise LogError(f"unknown record origin {origin}")
    if verdict_code not in _VERDICT_BY_CODE:
        raise LogError(f"unknown verdict code {verdict_code}")
    offset = _RECORD_FIXED.size
    if offset + reason_len > len(body):
        raise LogError("record reason overruns the record body")
    reason = body[offset : offset + reason_len].decode("utf-8", errors="replace")
    return LogRecord(
        seq=seq,
        t_mono_ns=t,
        origin=Origin(origin),
        device_id=device_id,
        verdict=_VERDICT_BY_CODE[verdict_code],
        reason=reason,
        frame_bytes=body[offset + reason_len :],
    )


class LogWriter:
    """Single appender; when flush_each is unset, callers own durability."""

    def __init__(self, fh: IO[bytes], flush_each: bool = True, clock=time.monotonic_ns):
        self._fh = fh
        self._flush_each = flush_each
        self._clock = clock
        self._seq = 0
        self._last_t = 0
        self._lock = threading.Lock()
        self.on_record = lambda record: None
        self._fh.write(_FILE_HEADER.pack(LOG_MAGIC, LOG_VERSION))
        wallclock = datetime.now(timezone.utc).isoformat()
        self.append(Origin.VERDICT_NOTE, 0, None, f"log-open wallclock={wallclock}", b"")

    @classmethod
    def open(cls, path: str, flush_each: bool = True) -> "LogWriter":
        return cls(open(path, "wb"), flush_each=flush_each)

    def append(
        self,
        origin: Origin,
        device_id: int,
        verdict: VerdictKind | None,
        reason: str,
        frame_bytes: bytes,
    ) -> LogRecord:
        with self._lock:
            self._seq += 1
            self._last_t = max(self._last_t, self._clock())
            record = LogRecord(self._seq, self._last_t, origin, device_id, verdict, reason, frame_bytes)
            try:
                self._fh.write(encode_record(record))
                if self._flush_each:
                    self._fh.flush()
            except OSError as exc:
                raise LogError(f"log append failed: {exc}") from exc
        self.on_record(record)
        return record

    def flush(self) -> None:
        with self._lock:
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.flush()
            self._fh.close()


def read_log_bytes(data: bytes) -> tuple[list[LogRecord], list[str]]:
    """Total reader: any prefix of a valid log yields records + <= 1 warning."""
    if len(data) < _FILE_HEADER.size:
        return [], [f"log shorter than its {_FILE_HEADER.size}-byte header"]
    magic, version = _FILE_HEADER.unpack_from(data, 0)
    if magic != LOG_MAGIC:
        return [], ["not a gateway log (bad magic)"]
    if version != LOG_VERSION:
        return [], [f"unsupported log version {version}"]
    records: list[LogRecord] = []
    warnings: list[str] = []
    offset = _FILE_HEADER.size
    while offset < len(data):
        if offset + 4 > len(data):
            warnings.append(f"skipping truncated length field at offset {offset}")
            break
        (length,) = struct.unpack_from("<I", data, offset)
        if offset + 4 + length > len(data):
            warnings.append(f"skipping truncated trailing record at offset {offset}")
            break
        try:
            records.append(decode_record(data[offset + 4 : offset + 4 + length]))
        except LogError as exc:
            warnings.append(f"stopping at malformed record at offset {offset}: {exc}")
            break
        offset += 4 + length
    return records, warnings


def read_log(path: str) -> tuple[list[LogRecord], list[str]]:
    with open(path, "rb") as fh:
        return read_log_bytes(fh.read())


class GatewayRecorder(Recorder):
    """Adapts a LogWriter to the gateway core's hook points.

    With required=False (the default) storage failures are counted and
    forwarding continues; with required=True they propagate and the caller
    fails closed.
    """

    def __init__(self, writer: LogWriter, required: bool = False):
        self.writer = writer
        self.required = required
        self.write_errors = 0

    def _append(self, *args) -> None:
        try:
            self.writer.append(*args)
        except LogError:
            self.write_errors += 1
            if self.required:
                raise

    def from_device(self, device_id: int, frame_bytes: bytes) -> None:
        self._append(Origin.FROM_DEVICE, device_id, None, "", frame_bytes)

    def to_blue(self, device_id: int, frame_bytes: bytes) -> None:
        self._append(Origin.TO_BLUE, device_id, None, "", frame_bytes)

    def verdict_note(self, device_id: int, verdict: Verdict, policy: str | None) -> None:
        self._append(
            Origin.VERDICT_NOTE, device_id, verdict.kind, note_reason(policy, verdict.reason), b""
        )


def note_reason(policy: str | None, reason: str) -> str:
    return f"{policy or '-'}: {reason}"


# ---------------------------------------------------------------------------
# Replay


@dataclass(frozen=True)
class TranscriptEntry:
    device_id: int
    verdict: VerdictKind
    note: str

    def line(self) -> str:
        return f"{self.device_id} {self.verdict.value} {self.note}"


@dataclass
class Transcript:
    entries: list[TranscriptEntry]

    def to_bytes(self) -> bytes:
        return "\n".join(e.line() for e in self.entries).encode("utf-8")

    def __len__(self) -> int:
        return len(self.entries)


def transcript_from_records(records: Iterable[LogRecord]) -> Transcript:
    entries = [
        TranscriptEntry(r.device_id, r.verdict, r.reason)
        for r in records
        if r.origin is Origin.VERDICT_NOTE and r.verdict is not None
    ]
    return Transcript(entries)


class _TranscriptRecorder(Recorder):
    def __init__(self) -> None:
        self.entries: list[TranscriptEntry] = []

    def verdict_note(self, device_id: int, verdict: Verdict, policy: str | None) -> None:
        self.entries.append(TranscriptEntry(device_id, verdict.kind, note_reason(policy, verdict.reason)))


def replay(
    records: Iterable[LogRecord],
    config_text: str | None = None,
    chainset: ChainSet | None = None,
    add_signatures: Iterable[dict] | None = None,
    speed: str = "max",
    preset_resolutions: dict | None = None,
    conn_id: str = "replay",
) -> Transcript:
    """Re-send captured FromDevice frames through a fresh gateway core.

    Deterministic: identical (config, capture) pairs produce byte-identical
    transcripts.  add_signatures hot-adds signature objects before replay
    (the rematch workflow); speed="realtime" preserves inter-record gaps.
    """
    if speed not in ("max", "realtime"):
        raise ReplayError(f"unknown replay speed {speed!r}")
    from usbgate.policies.containment import PendingStore

    recorder = _TranscriptRecorder()
    core = GatewayCore(
        chainset=chainset,
        config_text=config_text,
        recorder=recorder,
        stats=StatsStore(),
        pending_store=PendingStore(preset=preset_resolutions or {}),
    )
    for sig in add_signatures or ():
        core.add_signature(sig)
    core.connect_endpoint(conn_id)

    last_seq = -1
    last_t: int | None = None
    for record in records:
        if record.origin is not Origin.FROM_DEVICE:
            continue
        if record.seq <= last_seq:
            raise ReplayError(f"records out of order: seq {record.seq} after {last_seq}")
        last_seq = record.seq
        if speed == "realtime" and last_t is not None:
            gap = (record.t_mono_ns - last_t) / 1e9
            if gap > 0:
                time.sleep(gap)
        last_t = record.t_mono_ns
        decoded = decode_frame(record.frame_bytes)
        if decoded is None:
            raise ReplayError(f"record seq {record.seq} holds a truncated frame")
        frame, _ = decoded
        core.handle_frame(conn_id, frame)
    return Transcript(recorder.entries)


def replay_to_network(
    records: Iterable[LogRecord], address: tuple[str, int], speed: str = "max"
) -> int:
    """Re-send captured device frames to a live gateway; returns frames sent."""
    if speed not in ("max", "realtime"):
        raise ReplayError(f"unknown replay speed {speed!r}")
    sent = 0
    last_t: int | None = None
    with socket.create_connection(address) as sock:
        for record in records:
            if record.origin is not Origin.FROM_DEVICE:
                continue
            if speed == "realtime" and last_t is not None:
                gap = (record.t_mono_ns - last_t) / 1e9
                if gap > 0:
                    time.sleep(gap)
            last_t = record.t_mono_ns
            sock.sendall(record.frame_bytes)
            sent += 1
    return sent


# ---------------------------------------------------------------------------
# Remote streaming


class RemoteLogSink:
    """Receiving end of remote logging: acks every record by seq.

    Wire protocol: on accept the sink sends the u64 seq of the last record
    it holds (0 when empty); the streamer then sends file-format framed
    records, and the sink acks each one with its u64 seq.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.create_server((host, port))
        self._server.settimeout(0.2)
        self.address = self._server.getsockname()
        self._lock = threading.Lock()
        self.records: list[LogRecord] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()

    @property
    def last_seq(self) -> int:
        with self._lock:
            return self.records[-1].seq if self.records else 0

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except (socket.timeout, OSError):
                continue
            try:
                self._handle(conn)
            except OSError:
                pass
            finally:
                conn.close()

    def _handle(self, conn: socket.socket) -> None:
        conn.sendall(struct.pack("<Q", self.last_seq))
        buf = b""
        while not self._stop.is_set():
            conn.settimeout(0.2)
            try:
                chunk = conn.recv(65536)
            except socket.timeout:
                continue
            if not chunk:
                return
            buf += chunk
            while len(buf) >= 4:
                (length,) = struct.unpack_from("<I", buf, 0)
                if len(buf) < 4 + length:
                    break
                record = decode_record(buf[4 : 4 + length])
                buf = buf[4 + length :]
                with self._lock:
                    self.records.append(record)
                conn.sendall(struct.pack("<Q", record.seq))

    def close(self) -> None:
        self._stop.set()
        self._thread.join(timeout=2)
        self._server.close()


class LogStreamer:
    """Forwards appended records to a RemoteLogSink, resumably.

    Unsent records buffer up to ``cap``; arrivals beyond that are dropped
    and counted.  On reconnect the server's last acked seq prunes the
    buffer, so nothing is re-sent twice.
    """

    def __init__(self, address: tuple[str, int], cap: int = 1024, retry_delay: float = 0.1):
        self.address = address
        self.cap = cap
        self.retry_delay = retry_delay
        self.dropped = 0
        self.acked_seq = 0
        self._buf: deque[LogRecord] = deque()
        self._cond = threading.Condition()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._pump, daemon=True)
        self._thread.start()

    def offer(self, record: LogRecord) -> None:
        with self._cond:
            if len(self._buf) >= self.cap:
                self.dropped += 1
                return
            self._buf.append(record)
            self._cond.notify()

    def _pump(self) -> None:
        while not self._stop.is_set():
            try:
                with socket.create_connection(self.address, timeout=1.0) as sock:
                    ack = sock.recv(8)
                    if len(ack) != 8:
                        raise OSError("short resume header")
                    (server_seq,) = struct.unpack("<Q", ack)
                    with self._cond:
                        while self._buf and self._buf[0].seq <= server_seq:
                            self._buf.popleft()
                        self.acked_seq = max(self.acked_seq, server_seq)
                    self._run_connection(sock)
            except OSError:
                self._stop.wait(self.retry_delay)

    def _run_connection(self, sock: socket.socket) -> None:
        while not self._stop.is_set():
            with self._cond:
                if not self._buf:
                    self._cond.wait(0.2)
                    continue
                record = self._buf[0]
            sock.sendall(encode_record(record))
            ack = b""
            while len(ack) < 8:
                chunk = sock.recv(8 - len(ack))
                if not chunk:
                    raise OSError("sink closed mid-ack")
                ack += chunk
            (seq,) = struct.unpack("<Q", ack)
            with self._cond:
                if self._buf and self._buf[0].seq == seq:
                    self._buf.popleft()
                self.acked_seq = max(self.acked_seq, seq)

    def close(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        self._thread.join(timeout=2)
