"""Compliance and assertion checks: the sanitizing half of the gateway.

Connect-time: descriptor parse violations become verdicts, class shape
checks run over the claimed tree, and per-driver assertion rules (endpoint
templates with optional quirk rewrites) are applied.  Traffic-time: control
requests, transfer results, and data transfers are checked against the
device's state machine and connect-time claims; hub and HID report
descriptors fetched during enumeration get class-specific validation.

Verdict reasons are prefixed "compliance:" or "assertion:" depending on
which mechanism decided, so blocked outcomes stay attributable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from usbgate.descriptors import (
    DT_HID_REPORT,
    DT_HUB,
    DT_SS_HUB,
    REQ_GET_DESCRIPTOR,
    ConfigTree,
    DescriptorTree,
    SetupPacket,
    Severity,
    Violation,
    ViolationCode,
    ViolationError,
    parse_hub_descriptor,
    parse_setup,
    rewrite_string_descriptor,
)
from usbgate.engine import ConfigError, Policy, Services, Verdict
from usbgate.resources import read_text_param
from usbgate.session import DeviceSession
from usbgate.wire import (
    DATA_TRANSFER_KINDS,
    STATUS_ACK,
    TRANSFER_KINDS,
    Frame,
    FrameKind,
    MalformedFrame,
    pack_result,
    unpack_control,
    unpack_data,
    unpack_result,
)

# Usage pages with a defined assignment in the HID usage tables (vendor pages
# 0xFF00..0xFFFF included); anything else in a report descriptor is hostile.
HID_USAGE_PAGE_RANGES: tuple[tuple[int, int], ...] = (
    (0x01, 0x14),
    (0x20, 0x20),
    (0x40, 0x40),
    (0x80, 0x92),
    (0xF1D0, 0xF1D0),
    (0xFF00, 0xFFFF),
)

_EP_TYPE_BY_NAME = {"control": 0, "isochronous": 1, "bulk": 2, "interrupt": 3}


def usage_page_defined(page: int) -> bool:
    return any(lo <= page <= hi for lo, hi in HID_USAGE_PAGE_RANGES)


# ---------------------------------------------------------------------------
# HID report descriptors (short-item encoding)


@dataclass(frozen=True)
class HidItem:
    tag: int
    type: int  # 0=main, 1=global, 2=local
    size: int
    data: int

    @property
    def is_usage_page(self) -> bool:
        return self.type == 1 and self.tag == 0


def parse_hid_report_descriptor(data: bytes) -> list[HidItem]:
    """Parse short items and validate Usage Page values."""
    items: list[HidItem] = []
    offset = 0
    while offset < len(data):
        prefix = data[offset]
        if prefix == 0xFE:  # long item: bDataSize, bLongItemTag, then data
            if offset + 3 > len(data) or offset + 3 + data[offset + 1] > len(data):
                raise ViolationError(
                    Violation(ViolationCode.BAD_LENGTH, f"truncated long item at offset {offset}")
                )
            offset += 3 + data[offset + 1]
            continue
        size = prefix & 0x3
        if size == 3:
            size = 4
        if offset + 1 + size > len(data):
            raise ViolationError(
                Violation(ViolationCode.BAD_LENGTH, f"truncated item at offset {offset}")
            )
        value = int.from_bytes(data[offset + 1 : offset + 1 + size], "little")
        item = HidItem(tag=prefix >> 4, type=(prefix >> 2) & 0x3, size=size, data=value)
        if item.is_usage_page and not usage_page_defined(item.data):
            raise ViolationError(
                Violation(ViolationCode.INVALID_CLASS, f"undefined HID usage page {item.data:#x}")
            )
        items.append(item)
        offset += 1 + size
    return items


# ---------------------------------------------------------------------------
# Assertion rules


@dataclass(frozen=True)
class EndpointRequirement:
    transfer_types: tuple[int, ...]  # acceptable bmAttributes types
    direction: str  # "in" / "out" / "any"
    min_count: int
    max_count: int | None

    def count(self, config: ConfigTree) -> int:
        # distinct endpoint addresses across every alt setting, so devices
        # that park endpoints in nonzero alts (audio-style) still qualify
        matched: set[int] = set()
        for itf in config.interfaces:
            for ep in itf.endpoints:
                if ep.transfer_type not in self.transfer_types:
                    continue
                if self.direction == "in" and not ep.direction_in:
                    continue
                if self.direction == "out" and ep.direction_in:
                    continue
                matched.add(ep.bEndpointAddress)
        return len(matched)


@dataclass(frozen=True)
class AssertionRule:
    name: str
    vid: int | None = None
    pid: int | None = None
    dev_class: int | None = None
    dev_subclass: int | None = None
    dev_protocol: int | None = None
    requirements: tuple[EndpointRequirement, ...] = ()
    required_interface_classes: tuple[int, ...] = ()
    quirks: tuple[tuple[str, object], ...] = ()

    def selector_key(self) -> tuple:
        return (self.vid, self.pid, self.dev_class, self.dev_subclass, self.dev_protocol)

    def matches(self, tree: DescriptorTree) -> bool:
        if self.vid is not None:
            return tree.device.idVendor == self.vid and (
                self.pid is None or tree.device.idProduct == self.pid
            )
        for cls, sub, proto in tree.all_class_triples():
            if cls != self.dev_class:
                continue
            if self.dev_subclass is not None and sub != self.dev_subclass:
                continue
            if self.dev_protocol is not None and proto != self.dev_protocol:
                continue
            return True
        return False

    def check(self, tree: DescriptorTree) -> str | None:
        """Return a mismatch description, or None when the template holds."""
        for config in tree.configs:
            itf_classes = {itf.bInterfaceClass for itf in config.interfaces}
            for cls in self.required_interface_classes:
                if cls not in itf_classes:
                    return f"rule {self.name}: required interface class {cls:#04x} missing"
            for req in self.requirements:
                n = req.count(config)
                types = "/".join(
                    name for name, val in _EP_TYPE_BY_NAME.items() if val in req.transfer_types
                )
                if n < req.min_count:
                    return (
                        f"rule {self.name}: requires >= {req.min_count} {types} "
                        f"{req.direction} endpoints, found {n}"
                    )
                if req.max_count is not None and n > req.max_count:
                    return (
                        f"rule {self.name}: allows <= {req.max_count} {types} "
                        f"{req.direction} endpoints, found {n}"
                    )
        return None


def _parse_hex(value, where: str) -> int:
    try:
        return int(value, 16) if isinstance(value, str) else int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: bad hex value {value!r}") from None


def _parse_requirement(obj: dict, where: str) -> EndpointRequirement:
    raw_types = obj.get("transfer_type", "any")
    if isinstance(raw_types, str):
        raw_types = [raw_types]
    types: list[int] = []
    for t in raw_types:
        if t == "any":
            types.extend(_EP_TYPE_BY_NAME.values())
        elif t in _EP_TYPE_BY_NAME:
            types.append(_EP_TYPE_BY_NAME[t])
        else:
            raise ConfigError(f"{where}: unknown transfer_type {t!r}")
    direction = obj.get("direction", "any")
    if direction not in ("in", "out", "any"):
        raise ConfigError(f"{where}: direction must be in/out/any")
    min_count = obj.get("min_count", 0)
    max_count = obj.get("max_count")
    if not isinstance(min_count, int) or (max_count is not None and not isinstance(max_count, int)):
        raise ConfigError(f"{where}: counts must be integers")
    if max_count is not None and min_count > max_count:
        raise ConfigError(f"{where}: min_count {min_count} > max_count {max_count}")
    return EndpointRequirement(tuple(sorted(set(types))), direction, min_count, max_count)


def parse_assertion_rule(obj: dict, where: str = "rule") -> AssertionRule:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: must be an object")
    name = obj.get("name")
    if not name:
        raise ConfigError(f"{where}: missing name")
    selector = obj.get("selector", {})
    vid = pid = cls = sub = proto = None
    if "vid" in selector:
        vid = _parse_hex(selector["vid"], where)
        if "pid" in selector:
            pid = _parse_hex(selector["pid"], where)
    elif "class" in selector:
        cls = _parse_hex(selector["class"], where)
        if selector.get("subclass", "*") != "*":
            sub = _parse_hex(selector["subclass"], where)
        if selector.get("protocol", "*") != "*":
            proto = _parse_hex(selector["protocol"], where)
    else:
        raise ConfigError(f"{where} {name}: selector needs vid or class")
    requirements = tuple(
        _parse_requirement(r, f"{where} {name}") for r in obj.get("requirements", [])
    )
    required_classes = tuple(
        _parse_hex(c, f"{where} {name}") for c in obj.get("required_interface_classes", [])
    )
    quirks = tuple((q["field"], q["value"]) for q in obj.get("quirks", []))
    return AssertionRule(
        name=name,
        vid=vid,
        pid=pid,
        dev_class=cls,
        dev_subclass=sub,
        dev_protocol=proto,
        requirements=requirements,
        required_interface_classes=required_classes,
        quirks=quirks,
    )


def load_assertion_rules(json_text: str) -> list[AssertionRule]:
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"assertion rules are not valid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ConfigError("assertion rule file root must be an array")
    rules = [parse_assertion_rule(obj, f"rules[{i}]") for i, obj in enumerate(doc)]
    seen = set()
    for rule in rules:
        key = rule.selector_key()
        if key in seen:
            raise ConfigError(f"duplicate assertion rule selector for {rule.name}")
        seen.add(key)
    return rules


# ---------------------------------------------------------------------------
# Class shape checks


def class_check(tree: DescriptorTree) -> str | None:
    """Built-in shape predicates per claimed interface class.

    HID needs an interrupt-IN endpoint; bulk-only mass storage needs exactly
    one bulk-IN and one bulk-OUT; printer, power, and debug classes get
    length checks only (already enforced by the parser).  Audio is out of
    scope.  Hub shape is checked when the hub descriptor is fetched.
    """
    for config in tree.configs:
        for itf in config.interfaces:
            if itf.bAlternateSetting != 0:
                continue
            if itf.bInterfaceClass == 0x03:
                if not any(ep.direction_in and ep.transfer_type == 3 for ep in itf.endpoints):
                    return (
                        f"HID interface {itf.bInterfaceNumber} lacks an interrupt-IN endpoint"
                    )
            elif itf.bInterfaceClass == 0x08 and itf.bInterfaceProtocol == 0x50:
                bulk_in = sum(1 for ep in itf.endpoints if ep.transfer_type == 2 and ep.direction_in)
                bulk_out = sum(
                    1 for ep in itf.endpoints if ep.transfer_type == 2 and not ep.direction_in
                )
                if (bulk_in, bulk_out) != (1, 1):
                    return (
                        f"bulk-only storage interface {itf.bInterfaceNumber} has "
                        f"{bulk_in} bulk-IN / {bulk_out} bulk-OUT endpoints"
                    )
    return None


# ---------------------------------------------------------------------------
# Quirk rewrites: benign spec deviations fixed in the connect-time claims as
# presented downstream; the session keeps validating against what the device
# really said.

_DEVICE_FIELD_LAYOUT = {
    "device.bcdUSB": (2, 2),
    "device.bDeviceClass": (4, 1),
    "device.bDeviceSubClass": (5, 1),
    "device.bDeviceProtocol": (6, 1),
    "device.bMaxPacketSize0": (7, 1),
    "device.bcdDevice": (12, 2),
    "device.iManufacturer": (14, 1),
    "device.iProduct": (15, 1),
    "device.iSerialNumber": (16, 1),
}


def _apply_field_quirks(payload: bytes, quirks: list[tuple[str, object]]) -> bytes:
    out = bytearray(payload)
    for field_path, value in quirks:
        layout = _DEVICE_FIELD_LAYOUT.get(field_path)
        if layout is None or len(out) < 18:
            continue
        offset, width = layout
        out[offset : offset + width] = int(value).to_bytes(width, "little")
    return bytes(out)


# ---------------------------------------------------------------------------
# The policy


class CompliancePolicy(Policy):
    """Protocol-conformance enforcement driven by the device session."""

    name = "compliance"

    def __init__(self, params: dict, services: Services):
        super().__init__(params, services)
        self.string_policy = params.get("string_policy", "rewrite")
        if self.string_policy not in ("rewrite", "disable"):
            raise ConfigError(f"string_policy must be rewrite or disable, not {self.string_policy!r}")
        if "rules_file" in params:
            self.rules = load_assertion_rules(read_text_param(params["rules_file"]))
        else:
            inline = params.get("rules", [])
            if not isinstance(inline, list):
                raise ConfigError("rules must be a list")
            self.rules = [parse_assertion_rule(obj, f"rules[{i}]") for i, obj in enumerate(inline)]

    # -- connect -----------------------------------------------------------

    def on_connect(self, session: DeviceSession) -> Verdict:
        if session.connect_violations:
            fatal = [v for v in session.connect_violations if v.severity is Severity.FATAL]
            if fatal:
                return Verdict.disable(f"compliance: {fatal[0]}")
            # fixable-only connect claims: forward a sanitized copy.  Strings
            # never appear in connect payloads, so nothing to rewrite today.
            return Verdict.rewrite(session.connect_payload, reason="compliance: sanitized")

        tree = session.tree
        shape_problem = class_check(tree)
        if shape_problem:
            return Verdict.disable(
                f"compliance: {Violation(ViolationCode.TEMPLATE_MISMATCH, shape_problem)}"
            )

        quirked: list[tuple[str, object]] = []
        for rule in self.rules:
            if not rule.matches(tree):
                continue
            mismatch = rule.check(tree)
            if mismatch:
                return Verdict.disable(
                    f"assertion: {Violation(ViolationCode.TEMPLATE_MISMATCH, mismatch)}"
                )
            quirked.extend(q for q in rule.quirks if q[0].startswith("device."))
        if quirked:
            payload = _apply_field_quirks(session.connect_payload, quirked)
            if payload != session.connect_payload:
                return Verdict.rewrite(payload, reason="assertion: quirk rewrite")
        return Verdict.allow()

    # -- traffic -------------------------------------------------------------

    def on_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        try:
            return self._check_frame(session, frame)
        except ViolationError as exc:
            if not exc.fatal and exc.first.code is ViolationCode.BAD_STRING:
                return self._handle_bad_string(session, frame, exc)
            return Verdict.disable(f"compliance: {exc.first}")
        except MalformedFrame as exc:
            return Verdict.disable(f"compliance: {Violation(ViolationCode.BAD_LENGTH, str(exc))}")

    def _check_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        kind = frame.kind
        if kind in TRANSFER_KINDS:
            session.note_transfer_id(frame.transfer_id)

        if kind == FrameKind.CONTROL_TRANSFER:
            setup_bytes, data = unpack_control(frame.payload)
            setup = parse_setup(setup_bytes)
            if not setup.direction_in and len(data) > setup.wLength:
                raise ViolationError(
                    Violation(
                        ViolationCode.RESPONSE_OVERRUN,
                        f"OUT data stage of {len(data)} bytes exceeds wLength {setup.wLength}",
                    )
                )
            session.on_control(setup)
        elif kind == FrameKind.TRANSFER_RESULT:
            setup = session.last_setup
            status, data = unpack_result(frame.payload)
            session.on_response(status, data, frame.transfer_id)
            if setup is not None and status == STATUS_ACK and data:
                self._check_class_reply(session, setup, data)
        elif kind in DATA_TRANSFER_KINDS:
            endpoint, data = unpack_data(frame.payload)
            session.on_data_transfer(kind, endpoint, len(data))
        return Verdict.allow()

    def _check_class_reply(self, session: DeviceSession, setup: SetupPacket, data: bytes) -> None:
        if setup.bRequest != REQ_GET_DESCRIPTOR or not setup.direction_in:
            return
        dtype = setup.descriptor_type
        if dtype in (DT_HUB, DT_SS_HUB) and setup.request_type == 1:
            claimed = {t[0] for t in session.tree.all_class_triples()}
            if 0x09 in claimed:
                parse_hub_descriptor(data)
        elif dtype == DT_HID_REPORT:
            config = session.claimed_config()
            itf = config.interface(setup.wIndex & 0xFF) if config else None
            if itf is not None and itf.bInterfaceClass == 0x03:
                parse_hid_report_descriptor(data)

    def _handle_bad_string(self, session: DeviceSession, frame: Frame, exc: ViolationError) -> Verdict:
        if self._string_mode(session) == "disable":
            return Verdict.disable(f"compliance: {exc.first}")
        status, data = unpack_result(frame.payload)
        fixed = rewrite_string_descriptor(data)
        return Verdict.rewrite(pack_result(status, fixed), reason="compliance: rewrote string")

    def _string_mode(self, session: DeviceSession) -> str:
        """Per-device quirk rules can re-enable rewriting under a strict default."""
        if session.tree is not None:
            for rule in self.rules:
                if rule.matches(session.tree):
                    for field_path, value in rule.quirks:
                        if field_path == "strings":
                            return str(value)
        return self.string_policy
