"""Signature policy: match frame payloads against a JSON pattern database
and permanently disable the offending device on a hit.

A signature's pattern is a list of byte tokens ("AA") and single-byte
wildcards ("??"), anchored either at a fixed payload offset or anywhere.
Patterns see the raw wire payload of a frame (for control transfers that
includes the 8-byte setup packet; for data transfers the leading endpoint
byte).  Optional device and frame matchers narrow where a pattern applies.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass

from usbgate.engine import ConfigError, Policy, Services, Verdict
from usbgate.resources import read_text_param
from usbgate.session import DeviceSession
from usbgate.wire import Frame, FrameKind

MAX_PATTERN_TOKENS = 256

_KIND_NAMES = {
    "Hello": FrameKind.HELLO,
    "DeviceConnect": FrameKind.DEVICE_CONNECT,
    "DeviceDisconnect": FrameKind.DEVICE_DISCONNECT,
    "ControlTransfer": FrameKind.CONTROL_TRANSFER,
    "BulkTransfer": FrameKind.BULK_TRANSFER,
    "InterruptTransfer": FrameKind.INTERRUPT_TRANSFER,
    "IsoTransfer": FrameKind.ISO_TRANSFER,
    "TransferResult": FrameKind.TRANSFER_RESULT,
}


def _hex_field(obj: dict, key: str) -> int | None:
    value = obj.get(key)
    if value is None:
        return None
    try:
        return int(value, 16) if isinstance(value, str) else int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad hex value for {key}: {value!r}") from None


@dataclass(frozen=True)
class Signature:
    id: str
    description: str
    tokens: tuple[int | None, ...]  # None is the single-byte wildcard
    offset: int | None  # None anchors anywhere
    id_vendor: int | None = None
    id_product: int | None = None
    device_class: int | None = None
    kind: FrameKind | None = None
    endpoint: int | None = None
    direction: str | None = None  # "in" / "out"

    def pattern_regex(self) -> re.Pattern:
        parts = [b"." if t is None else re.escape(bytes([t])) for t in self.tokens]
        return re.compile(b"".join(parts), re.DOTALL)


def parse_signature(obj: dict) -> Signature:
    if not isinstance(obj, dict):
        raise ConfigError("signature must be an object")
    sig_id = obj.get("id")
    if not sig_id or not isinstance(sig_id, str):
        raise ConfigError("signature missing string 'id'")
    raw_pattern = obj.get("pattern")
    if not isinstance(raw_pattern, list) or not raw_pattern:
        raise ConfigError(f"signature {sig_id}: pattern must be a non-empty list")
    if len(raw_pattern) > MAX_PATTERN_TOKENS:
        raise ConfigError(f"signature {sig_id}: pattern longer than {MAX_PATTERN_TOKENS} tokens")
    tokens: list[int | None] = []
    for tok in raw_pattern:
        if tok == "??":
            tokens.append(None)
            continue
        try:
            value = int(tok, 16)
        except (TypeError, ValueError):
            raise ConfigError(f"signature {sig_id}: bad hex token {tok!r}") from None
        if not 0 <= value <= 0xFF:
            raise ConfigError(f"signature {sig_id}: token {tok!r} out of byte range")
        tokens.append(value)

    anchor = obj.get("anchor", "Anywhere")
    if anchor == "Anywhere":
        offset = None
    elif isinstance(anchor, dict) and set(anchor) == {"AtOffset"} and isinstance(anchor["AtOffset"], int):
        offset = anchor["AtOffset"]
        if offset < 0:
            raise ConfigError(f"signature {sig_id}: negative anchor offset")
    else:
        raise ConfigError(f"signature {sig_id}: anchor must be \"Anywhere\" or {{\"AtOffset\": n}}")

    device_match = obj.get("device_match", {}) or {}
    frame_match = obj.get("frame_match", {}) or {}
    kind = None
    if "kind" in frame_match:
        kind = _KIND_NAMES.get(frame_match["kind"])
        if kind is None:
            raise ConfigError(f"signature {sig_id}: unknown frame kind {frame_match['kind']!r}")
    direction = frame_match.get("direction")
    if direction not in (None, "in", "out"):
        raise ConfigError(f"signature {sig_id}: direction must be 'in' or 'out'")

    return Signature(
        id=sig_id,
        description=obj.get("description", ""),
        tokens=tuple(tokens),
        offset=offset,
        id_vendor=_hex_field(device_match, "id_vendor"),
        id_product=_hex_field(device_match, "id_product"),
        device_class=_hex_field(device_match, "device_class"),
        kind=kind,
        endpoint=_hex_field(frame_match, "endpoint"),
        direction=direction,
    )


class SignatureDb:
    """Ordered signature store; first declared match wins, hot-adds append."""

    def __init__(self, signatures: list[Signature] | None = None):
        self._lock = threading.Lock()
        self._entries: list[tuple[Signature, re.Pattern]] = []
        for sig in signatures or []:
            self.add(sig)

    def add(self, sig: Signature) -> None:
        with self._lock:
            self._entries.append((sig, sig.pattern_regex()))

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def signatures(self) -> list[Signature]:
        with self._lock:
            return [sig for sig, _ in self._entries]

    def match(self, session: DeviceSession | None, frame: Frame) -> str | None:
        payload = frame.payload
        with self._lock:
            entries = list(self._entries)
        for sig, regex in entries:
            if not _device_applies(sig, session):
                continue
            if not _frame_applies(sig, frame):
                continue
            if sig.offset is not None:
                if regex.match(payload, sig.offset) and sig.offset + len(sig.tokens) <= len(payload):
                    return sig.id
            elif regex.search(payload):
                return sig.id
        return None


def _device_applies(sig: Signature, session: DeviceSession | None) -> bool:
    if sig.id_vendor is None and sig.id_product is None and sig.device_class is None:
        return True
    if session is None or session.tree is None:
        return False
    device = session.tree.device
    if sig.id_vendor is not None and device.idVendor != sig.id_vendor:
        return False
    if sig.id_product is not None and device.idProduct != sig.id_product:
        return False
    if sig.device_class is not None:
        classes = {device.bDeviceClass} | {t[0] for t in session.tree.all_class_triples()}
        if sig.device_class not in classes:
            return False
    return True


def _frame_applies(sig: Signature, frame: Frame) -> bool:
    if sig.kind is not None and frame.kind != sig.kind:
        return False
    if sig.endpoint is not None or sig.direction is not None:
        if frame.kind in (FrameKind.BULK_TRANSFER, FrameKind.INTERRUPT_TRANSFER, FrameKind.ISO_TRANSFER):
            if not frame.payload:
                return False
            address = frame.payload[0]
        elif frame.kind == FrameKind.CONTROL_TRANSFER and sig.endpoint is None:
            if not frame.payload:
                return False
            address = 0x80 if frame.payload[0] & 0x80 else 0
        else:
            return False
        if sig.endpoint is not None and address != sig.endpoint:
            return False
        if sig.direction is not None:
            is_in = bool(address & 0x80)
            if (sig.direction == "in") != is_in:
                return False
    return True


def load_signatures(json_text: str) -> SignatureDb:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"signature db is not valid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ConfigError("signature db root must be an array")
    return SignatureDb([parse_signature(obj) for obj in doc])


class SignaturePolicy(Policy):
    name = "signature"

    def __init__(self, params: dict, services: Services):
        super().__init__(params, services)
        if "signatures_file" in params:
            self.db = load_signatures(read_text_param(params["signatures_file"]))
        else:
            inline = params.get("signatures", [])
            if not isinstance(inline, list):
                raise ConfigError("signatures must be a list")
            self.db = SignatureDb([parse_signature(obj) for obj in inline])

    def _verdict(self, session: DeviceSession, frame: Frame) -> Verdict:
        hit = self.db.match(session, frame)
        if hit is None:
            return Verdict.allow()
        self.services.emit_event(
            "SignatureHit", {"signature": hit, "device_id": session.device_id, "kind": frame.kind.name}
        )
        return Verdict.disable(f"signature: {hit}")

    def on_connect(self, session: DeviceSession) -> Verdict:
        frame = Frame(FrameKind.DEVICE_CONNECT, session.device_id, 0, session.connect_payload)
        return self._verdict(session, frame)

    def on_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        return self._verdict(session, frame)
