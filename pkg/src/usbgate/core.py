"""The gateway's deterministic core: sessions, chain dispatch, verdict
bookkeeping, and event emission.

The core owns no sockets.  Endpoint connections feed decoded frames in via
handle_frame(); the caller forwards the returned (possibly rewritten) frame
when the verdict allows.  Keying sessions by (connection, device_id) stops
one untrusted endpoint from speaking for another's devices.

Verdict notes are recorded for every processed frame, so a capture replayed
against the same configuration reproduces the decision transcript
byte-for-byte.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

from usbgate.descriptors import CLASS_NAMES
from usbgate.engine import (
    ChainSet,
    Decision,
    PolicyEngine,
    Services,
    StatsStore,
    Verdict,
    VerdictKind,
    load_config,
)
from usbgate.policies.containment import PendingStore
from usbgate.policies.signature import SignaturePolicy, parse_signature
from usbgate.session import DeviceSession
from usbgate.wire import Frame, FrameKind, encode_frame

EVENT_RING_SIZE = 4096


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    body: dict


class EventBus:
    """Gap-free sequenced event ring for the control plane."""

    def __init__(self, ring_size: int = EVENT_RING_SIZE):
        self._cond = threading.Condition()
        self._ring: list[Event] = []
        self._ring_size = ring_size
        self._seq = 0

    def emit(self, kind: str, body: dict) -> Event:
        with self._cond:
            self._seq += 1
            event = Event(self._seq, kind, body)
            self._ring.append(event)
            if len(self._ring) > self._ring_size:
                del self._ring[: len(self._ring) - self._ring_size]
            self._cond.notify_all()
        return event

    @property
    def last_seq(self) -> int:
        with self._cond:
            return self._seq

    def since(self, seq: int) -> list[Event]:
        with self._cond:
            return [e for e in self._ring if e.seq > seq]

    def wait_since(self, seq: int, timeout: float) -> list[Event]:
        with self._cond:
            events = [e for e in self._ring if e.seq > seq]
            if events:
                return events
            self._cond.wait(timeout)
            return [e for e in self._ring if e.seq > seq]


class Recorder:
    """Audit-log hook points; the default discards everything."""

    def from_device(self, device_id: int, frame_bytes: bytes) -> None:
        pass

    def to_blue(self, device_id: int, frame_bytes: bytes) -> None:
        pass

    def verdict_note(self, device_id: int, verdict: Verdict, policy: str | None) -> None:
        pass


SessionKey = tuple[str, int]


class GatewayCore:
    def __init__(
        self,
        chainset: ChainSet | None = None,
        config_text: str | None = None,
        recorder: Recorder | None = None,
        forward: Callable[[str | None, int, bytes], None] | None = None,
        stats: StatsStore | None = None,
        events: EventBus | None = None,
        pending_store: PendingStore | None = None,
    ):
        self.events = events or EventBus()
        self.recorder = recorder or Recorder()
        self.forward = forward or (lambda sink, device_id, data: None)
        self.services = Services(
            emit_event=self.events.emit,
            log_tap=self._log_tap,
            pending_store=pending_store or PendingStore(),
        )
        store = self.services.pending_store
        store.on_created = lambda d: self.events.emit("PendingDecisionCreated", d.as_json())
        store.on_resolved = lambda d: self.events.emit("DecisionResolved", d.as_json())
        if chainset is None:
            chainset = load_config(config_text, self.services)
        self.engine = PolicyEngine(chainset, stats=stats)
        self._lock = threading.RLock()
        self._tapped = False
        self.sessions: dict[SessionKey, DeviceSession] = {}
        self._conn_auth: dict[str, str | None] = {}
        self._disabled_keys: set[SessionKey] = set()

    # -- connection lifecycle ----------------------------------------------

    def connect_endpoint(self, conn_id: str, auth_subject: str | None = None) -> None:
        with self._lock:
            self._conn_auth[conn_id] = auth_subject

    def disconnect_endpoint(self, conn_id: str) -> None:
        with self._lock:
            self._conn_auth.pop(conn_id, None)
            for key in [k for k in self.sessions if k[0] == conn_id]:
                del self.sessions[key]
            self._disabled_keys = {k for k in self._disabled_keys if k[0] != conn_id}

    def endpoint_malformed(self, conn_id: str, reason: str) -> None:
        """A framing violation: every session on the connection is hostile."""
        with self._lock:
            for key, session in self.sessions.items():
                if key[0] == conn_id and not session.disabled:
                    session.disable(f"wire: {reason}")
                    self._disabled_keys.add(key)
                    self.events.emit("DeviceDisabled", self.session_json(key))

    # -- configuration -------------------------------------------------------

    def reload_config(self, config_text: str) -> None:
        self.engine.swap(load_config(config_text, self.services))

    def add_signature(self, obj: dict) -> str:
        """Hot-add one signature to every signature policy in the live set."""
        sig = parse_signature(obj)
        added = 0
        for policies in self.engine.chainset.chains.values():
            for policy in policies:
                if isinstance(policy, SignaturePolicy):
                    policy.db.add(sig)
                    added += 1
        if not added:
            raise ValueError("no signature policy in the active configuration")
        return sig.id

    # -- frames ----------------------------------------------------------------

    def handle_frame(self, conn_id: str, frame: Frame) -> Decision:
        with self._lock:
            self._tapped = False
            decision = self._dispatch(conn_id, frame)
            session = self.sessions.get((conn_id, frame.device_id))
            # a verdict note per captured frame keeps replay transcripts
            # aligned; disables are noted even when no log policy saw them
            if self._tapped or decision.verdict.kind is VerdictKind.DISABLE_DEVICE:
                self.recorder.verdict_note(frame.device_id, decision.verdict, decision.policy)
            if session is not None and session.disabled:
                key = (conn_id, frame.device_id)
                if key not in self._disabled_keys:
                    self._disabled_keys.add(key)
                    self.events.emit("DeviceDisabled", self.session_json(key))
            if decision.verdict.forwards:
                out = encode_frame(decision.frame)
                self.recorder.to_blue(frame.device_id, out)
                self.forward(decision.verdict.sink, frame.device_id, out)
            return decision

    def _dispatch(self, conn_id: str, frame: Frame) -> Decision:
        key = (conn_id, frame.device_id)
        kind = frame.kind

        if kind in (FrameKind.HELLO, FrameKind.DEVICE_DISCONNECT):
            if kind == FrameKind.DEVICE_DISCONNECT:
                self.sessions.pop(key, None)
                if key in self._disabled_keys:
                    decision = Decision(Verdict.drop("device disabled"), None, frame)
                    self.engine.stats.final(decision.verdict.kind)
                    return decision
            decision = Decision(Verdict.allow(), None, frame)
            self.engine.stats.final(decision.verdict.kind)
            return decision

        if kind == FrameKind.DEVICE_CONNECT:
            if key in self._disabled_keys:
                decision = Decision(Verdict.drop("device disabled: reconnect refused"), None, frame)
                self.engine.stats.final(decision.verdict.kind)
                return decision
            session = DeviceSession.from_connect(
                frame.device_id, frame.payload, auth_subject=self._conn_auth.get(conn_id)
            )
            self.sessions[key] = session
            decision = self.engine.process(session, frame)
            self.events.emit("DeviceConnected", self.session_json(key))
            return decision

        session = self.sessions.get(key)
        if session is None:
            decision = Decision(Verdict.drop("frame for an unknown device"), None, frame)
            self.engine.stats.final(decision.verdict.kind)
            return decision
        return self.engine.process(session, frame)

    # -- views ------------------------------------------------------------------

    def _log_tap(self, session: DeviceSession, frame: Frame) -> None:
        self._tapped = True
        self.recorder.from_device(session.device_id, encode_frame(frame))

    def session_json(self, key: SessionKey) -> dict:
        session = self.sessions[key]
        tree = session.tree
        triples = tree.all_class_triples() if tree else set()
        classes = sorted(f"{cls:02x}:{sub:02x}:{proto:02x}" for cls, sub, proto in triples)
        labels = sorted({CLASS_NAMES.get(cls, f"class {cls:#04x}") for cls, _, _ in triples})
        return {
            "id": f"{key[0]}.{key[1]}",
            "conn": key[0],
            "device_id": key[1],
            "state": session.state.value,
            "address": session.address,
            "id_vendor": f"{tree.device.idVendor:04x}" if tree else None,
            "id_product": f"{tree.device.idProduct:04x}" if tree else None,
            "classes": classes,
            "class_names": labels,
            "auth": session.auth_subject,
            "chain": session.chain_name,
            "disabled_reason": session.disabled_reason,
        }

    def devices_json(self, device_id: int | None = None) -> list[dict]:
        with self._lock:
            keys = sorted(self.sessions)
            return [
                self.session_json(k) for k in keys if device_id is None or k[1] == device_id
            ]

    def sessions_by_device(self) -> dict[int, dict]:
        """One inventory entry per device_id (sweeps use one connection)."""
        with self._lock:
            return {k[1]: self.session_json(k) for k in sorted(self.sessions)}

    def stats_json(self) -> dict:
        snap = self.engine.stats.snapshot()
        with self._lock:
            snap["devices"] = len(self.sessions)
            snap["devices_disabled"] = sum(1 for s in self.sessions.values() if s.disabled)
        return snap
