"""Parsers and validators for USB descriptors and setup packets.

Everything a device claims about itself flows through here: the 8-byte setup
packet, the 18-byte device descriptor, full configuration trees (interface,
endpoint, interface-association and class descriptors), string descriptors,
and hub descriptors.  Each parser either returns a value satisfying all of
its invariants or raises ViolationError carrying at least one Violation --
never both, never neither.

All multi-byte fields are little-endian, per the USB specification.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

# Descriptor type codes
DT_DEVICE = 1
DT_CONFIG = 2
DT_STRING = 3
DT_INTERFACE = 4
DT_ENDPOINT = 5
DT_INTERFACE_ASSOCIATION = 0x0B
DT_HID = 0x21
DT_HID_REPORT = 0x22
DT_HUB = 0x29
DT_SS_HUB = 0x2A
DT_SS_ENDPOINT_COMPANION = 0x30

# Standard request codes (bRequest with standard bmRequestType)
REQ_GET_STATUS = 0
REQ_CLEAR_FEATURE = 1
REQ_SET_FEATURE = 3
REQ_SET_ADDRESS = 5
REQ_GET_DESCRIPTOR = 6
REQ_SET_DESCRIPTOR = 7
REQ_GET_CONFIGURATION = 8
REQ_SET_CONFIGURATION = 9
REQ_GET_INTERFACE = 10
REQ_SET_INTERFACE = 11

# Endpoint transfer types (bmAttributes & 0x3)
EP_CONTROL = 0
EP_ISOCHRONOUS = 1
EP_BULK = 2
EP_INTERRUPT = 3

TRANSFER_TYPE_NAMES = {
    EP_CONTROL: "control",
    EP_ISOCHRONOUS: "isochronous",
    EP_BULK: "bulk",
    EP_INTERRUPT: "interrupt",
}

# Device/interface class codes with a defined USB-IF assignment.  Anything
# else is treated as an attack indicator, conservatively.
DEFINED_CLASS_CODES = frozenset(
    {
        0x00, 0x01, 0x02, 0x03, 0x05, 0x06, 0x07, 0x08, 0x09, 0x0A, 0x0B,
        0x0D, 0x0E, 0x0F, 0x10, 0x11, 0x12, 0xDC, 0xE0, 0xEF, 0xFE, 0xFF,
    }
)

CLASS_NAMES = {
    0x00: "composite",
    0x01: "audio",
    0x02: "communications",
    0x03: "HID",
    0x05: "physical",
    0x06: "image",
    0x07: "printer",
    0x08: "mass storage",
    0x09: "hub",
    0x0A: "CDC data",
    0x0B: "smart card",
    0x0D: "content security",
    0x0E: "video",
    0x0F: "healthcare",
    0x10: "audio/video",
    0x11: "billboard",
    0x12: "USB-C bridge",
    0xDC: "diagnostic",
    0xE0: "wireless controller",
    0xEF: "miscellaneous",
    0xFE: "application specific",
    0xFF: "vendor specific",
}


class ViolationCode(Enum):
    BAD_LENGTH = "BadLength"
    BAD_TYPE = "BadType"
    LENGTH_MISMATCH = "LengthMismatch"
    COUNT_MISMATCH = "CountMismatch"
    INVALID_CLASS = "InvalidClass"
    BAD_STRING = "BadString"
    BAD_ENDPOINT = "BadEndpoint"
    BAD_HUB_PORTS = "BadHubPorts"
    STATE_ERROR = "StateError"
    RESPONSE_OVERRUN = "ResponseOverrun"
    TEMPLATE_MISMATCH = "TemplateMismatch"


class Severity(Enum):
    FIXABLE = "Fixable"
    FATAL = "Fatal"


@dataclass(frozen=True)
class Violation:
    code: ViolationCode
    detail: str
    severity: Severity = Severity.FATAL

    def __str__(self) -> str:
        return f"{self.code.value}: {self.detail}"


class ViolationError(Exception):
    """Raised by parsers; carries one or more Violations."""

    def __init__(self, violations: list[Violation] | Violation):
        if isinstance(violations, Violation):
            violations = [violations]
        assert violations
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))

    @property
    def fatal(self) -> bool:
        return any(v.severity is Severity.FATAL for v in self.violations)

    @property
    def first(self) -> Violation:
        return self.violations[0]


def _fatal(code: ViolationCode, detail: str) -> ViolationError:
    return ViolationError(Violation(code, detail, Severity.FATAL))


# ---------------------------------------------------------------------------
# Setup packets


@dataclass(frozen=True)
class SetupPacket:
    bmRequestType: int
    bRequest: int
    wValue: int
    wIndex: int
    wLength: int

    @property
    def direction_in(self) -> bool:
        return bool(self.bmRequestType & 0x80)

    @property
    def request_type(self) -> int:
        """0=standard, 1=class, 2=vendor."""
        return (self.bmRequestType >> 5) & 0x3

    @property
    def recipient(self) -> int:
        """0=device, 1=interface, 2=endpoint, 3=other."""
        return self.bmRequestType & 0x1F

    @property
    def descriptor_type(self) -> int:
        return self.wValue >> 8

    @property
    def descriptor_index(self) -> int:
        return self.wValue & 0xFF

    def is_standard(self, request: int) -> bool:
        return self.request_type == 0 and self.bRequest == request

    def to_bytes(self) -> bytes:
        return struct.pack(
            "<BBHHH", self.bmRequestType, self.bRequest, self.wValue, self.wIndex, self.wLength
        )


def parse_setup(data: bytes) -> SetupPacket:
    if len(data) != 8:
        raise _fatal(ViolationCode.BAD_LENGTH, f"setup packet is {len(data)} bytes, not 8")
    bm, req, w_value, w_index, w_length = struct.unpack("<BBHHH", data)
    return SetupPacket(bm, req, w_value, w_index, w_length)


# ---------------------------------------------------------------------------
# Device descriptor


@dataclass(frozen=True)
class DeviceDescriptor:
    bLength: int
    bDescriptorType: int
    bcdUSB: int
    bDeviceClass: int
    bDeviceSubClass: int
    bDeviceProtocol: int
    bMaxPacketSize0: int
    idVendor: int
    idProduct: int
    bcdDevice: int
    iManufacturer: int
    iProduct: int
    iSerialNumber: int
    bNumConfigurations: int


def parse_device_descriptor(data: bytes) -> DeviceDescriptor:
    if len(data) != 18:
        raise _fatal(ViolationCode.BAD_LENGTH, f"device descriptor is {len(data)} bytes, not 18")
    fields = struct.unpack("<BBHBBBBHHHBBBB", data)
    desc = DeviceDescriptor(*fields)
    if desc.bLength != 18:
        raise _fatal(ViolationCode.BAD_LENGTH, f"bLength {desc.bLength} != 18")
    if desc.bDescriptorType != DT_DEVICE:
        raise _fatal(ViolationCode.BAD_TYPE, f"descriptor type {desc.bDescriptorType} != 1")
    if desc.bDeviceClass not in DEFINED_CLASS_CODES:
        raise _fatal(ViolationCode.INVALID_CLASS, f"undefined device class {desc.bDeviceClass:#04x}")
    if desc.bcdUSB >= 0x0300:
        if desc.bMaxPacketSize0 != 9:
            raise _fatal(
                ViolationCode.LENGTH_MISMATCH,
                f"bMaxPacketSize0 {desc.bMaxPacketSize0} invalid for USB 3 (must be 9)",
            )
    elif desc.bMaxPacketSize0 not in (8, 16, 32, 64):
        raise _fatal(
            ViolationCode.LENGTH_MISMATCH, f"bMaxPacketSize0 {desc.bMaxPacketSize0} not in 8/16/32/64"
        )
    if desc.bNumConfigurations < 1:
        raise _fatal(ViolationCode.COUNT_MISMATCH, "bNumConfigurations is 0")
    return desc


# ---------------------------------------------------------------------------
# Configuration trees


@dataclass(frozen=True)
class EndpointDescriptor:
    bEndpointAddress: int
    bmAttributes: int
    wMaxPacketSize: int
    bInterval: int

    @property
    def number(self) -> int:
        return self.bEndpointAddress & 0x0F

    @property
    def direction_in(self) -> bool:
        return bool(self.bEndpointAddress & 0x80)

    @property
    def transfer_type(self) -> int:
        return self.bmAttributes & 0x3

    @property
    def max_packet_size(self) -> int:
        # bits 10..0; upper bits are high-bandwidth transaction opportunities
        return self.wMaxPacketSize & 0x7FF


@dataclass(frozen=True)
class InterfaceDescriptor:
    bInterfaceNumber: int
    bAlternateSetting: int
    bNumEndpoints: int
    bInterfaceClass: int
    bInterfaceSubClass: int
    bInterfaceProtocol: int
    iInterface: int
    endpoints: tuple[EndpointDescriptor, ...] = ()

    @property
    def class_triple(self) -> tuple[int, int, int]:
        return (self.bInterfaceClass, self.bInterfaceSubClass, self.bInterfaceProtocol)


@dataclass(frozen=True)
class InterfaceAssociation:
    bFirstInterface: int
    bInterfaceCount: int
    bFunctionClass: int
    bFunctionSubClass: int
    bFunctionProtocol: int
    iFunction: int


@dataclass(frozen=True)
class ConfigTree:
    wTotalLength: int
    bNumInterfaces: int
    bConfigurationValue: int
    iConfiguration: int
    bmAttributes: int
    bMaxPower: int
    interfaces: tuple[InterfaceDescriptor, ...] = ()
    associations: tuple[InterfaceAssociation, ...] = ()

    def interface_numbers(self) -> list[int]:
        seen: list[int] = []
        for itf in self.interfaces:
            if itf.bInterfaceNumber not in seen:
                seen.append(itf.bInterfaceNumber)
        return seen

    def interface(self, number: int, alt: int = 0) -> InterfaceDescriptor | None:
        for itf in self.interfaces:
            if itf.bInterfaceNumber == number and itf.bAlternateSetting == alt:
                return itf
        return None

    def find_endpoint(self, address: int) -> EndpointDescriptor | None:
        """First endpoint with this address in any alt setting."""
        for itf in self.interfaces:
            for ep in itf.endpoints:
                if ep.bEndpointAddress == address:
                    return ep
        return None

    def endpoint_interface(self, address: int) -> int | None:
        for itf in self.interfaces:
            for ep in itf.endpoints:
                if ep.bEndpointAddress == address:
                    return itf.bInterfaceNumber
        return None

    def function_groups(self) -> list[list[int]]:
        """Interface numbers grouped into functions.

        Interfaces covered by an interface-association descriptor form one
        function; every other interface stands alone.
        """
        grouped: set[int] = set()
        groups: list[list[int]] = []
        for iad in self.associations:
            members = [
                n
                for n in range(iad.bFirstInterface, iad.bFirstInterface + iad.bInterfaceCount)
                if n in self.interface_numbers()
            ]
            if members:
                groups.append(members)
                grouped.update(members)
        for n in self.interface_numbers():
            if n not in grouped:
                groups.append([n])
        groups.sort(key=lambda g: g[0])
        return groups


def parse_config_tree(data: bytes) -> ConfigTree:
    violations: list[Violation] = []
    if len(data) < 9:
        raise _fatal(ViolationCode.BAD_LENGTH, f"config blob is {len(data)} bytes, shorter than a config header")
    b_length, b_type = data[0], data[1]
    if b_length != 9:
        raise _fatal(ViolationCode.BAD_LENGTH, f"config bLength {b_length} != 9")
    if b_type != DT_CONFIG:
        raise _fatal(ViolationCode.BAD_TYPE, f"config descriptor type {b_type} != 2")
    w_total = struct.unpack_from("<H", data, 2)[0]
    num_interfaces, config_value, i_config, bm_attrs, max_power = data[4:9]
    if w_total != len(data):
        raise _fatal(
            ViolationCode.LENGTH_MISMATCH, f"wTotalLength {w_total} != actual {len(data)} bytes"
        )

    interfaces: list[InterfaceDescriptor] = []
    associations: list[InterfaceAssociation] = []
    current: dict | None = None
    current_eps: list[EndpointDescriptor] = []

    def close_interface() -> None:
        nonlocal current
        if current is not None:
            interfaces.append(InterfaceDescriptor(endpoints=tuple(current_eps), **current))
            current = None
            current_eps.clear()

    offset = 9
    while offset < len(data):
        if offset + 2 > len(data):
            raise _fatal(ViolationCode.BAD_LENGTH, "dangling descriptor byte at end of config")
        d_len, d_type = data[offset], data[offset + 1]
        if d_len < 2:
            raise _fatal(ViolationCode.BAD_LENGTH, f"descriptor with bLength {d_len} at offset {offset}")
        if offset + d_len > len(data):
            raise _fatal(
                ViolationCode.BAD_LENGTH, f"descriptor at offset {offset} overruns the config blob"
            )
        body = data[offset : offset + d_len]

        if d_type == DT_INTERFACE:
            if d_len != 9:
                raise _fatal(ViolationCode.BAD_LENGTH, f"interface descriptor bLength {d_len} != 9")
            close_interface()
            current = {
                "bInterfaceNumber": body[2],
                "bAlternateSetting": body[3],
                "bNumEndpoints": body[4],
                "bInterfaceClass": body[5],
                "bInterfaceSubClass": body[6],
                "bInterfaceProtocol": body[7],
                "iInterface": body[8],
            }
        elif d_type == DT_ENDPOINT:
            if d_len not in (7, 9):  # 9-byte form carries audio bRefresh/bSynchAddress
                raise _fatal(ViolationCode.BAD_LENGTH, f"endpoint descriptor bLength {d_len}")
            if current is None:
                raise _fatal(
                    ViolationCode.BAD_ENDPOINT, f"endpoint descriptor at offset {offset} outside any interface"
                )
            ep = EndpointDescriptor(
                bEndpointAddress=body[2],
                bmAttributes=body[3],
                wMaxPacketSize=struct.unpack_from("<H", body, 4)[0],
                bInterval=body[6],
            )
            if ep.number == 0:
                raise _fatal(ViolationCode.BAD_ENDPOINT, "explicit descriptor for endpoint 0")
            if any(e.bEndpointAddress == ep.bEndpointAddress for e in current_eps):
                raise _fatal(
                    ViolationCode.BAD_ENDPOINT,
                    f"duplicate endpoint address {ep.bEndpointAddress:#04x} in one alt setting",
                )
            current_eps.append(ep)
        elif d_type == DT_INTERFACE_ASSOCIATION:
            if d_len != 8:
                raise _fatal(ViolationCode.BAD_LENGTH, f"interface association bLength {d_len} != 8")
            associations.append(InterfaceAssociation(body[2], body[3], body[4], body[5], body[6], body[7]))
        elif d_type == DT_SS_ENDPOINT_COMPANION:
            # length-checked only; semantics out of scope
            if d_len != 6:
                raise _fatal(ViolationCode.BAD_LENGTH, f"endpoint companion bLength {d_len} != 6")
        elif d_type == DT_HID:
            # 6 fixed bytes plus 3 per subordinate descriptor entry
            if d_len < 9 or (d_len - 6) % 3 != 0:
                raise _fatal(ViolationCode.BAD_LENGTH, f"HID descriptor bLength {d_len}")
        elif d_type in (DT_DEVICE, DT_CONFIG):
            raise _fatal(ViolationCode.BAD_TYPE, f"descriptor type {d_type} nested inside a config")
        # other class-specific descriptors are opaque: length-walked only
        offset += d_len

    close_interface()

    numbers = []
    for itf in interfaces:
        if itf.bInterfaceNumber not in numbers:
            numbers.append(itf.bInterfaceNumber)
    if len(numbers) != num_interfaces:
        violations.append(
            Violation(
                ViolationCode.COUNT_MISMATCH,
                f"config claims {num_interfaces} interfaces, found {len(numbers)} distinct",
            )
        )
    if num_interfaces == 0:
        violations.append(Violation(ViolationCode.COUNT_MISMATCH, "config with no interfaces"))

    seen_alts: set[tuple[int, int]] = set()
    for itf in interfaces:
        key = (itf.bInterfaceNumber, itf.bAlternateSetting)
        if key in seen_alts:
            violations.append(
                Violation(ViolationCode.COUNT_MISMATCH, f"duplicate alt setting {key}")
            )
        seen_alts.add(key)
        if len(itf.endpoints) != itf.bNumEndpoints:
            violations.append(
                Violation(
                    ViolationCode.COUNT_MISMATCH,
                    f"interface {itf.bInterfaceNumber} alt {itf.bAlternateSetting} claims "
                    f"{itf.bNumEndpoints} endpoints, has {len(itf.endpoints)}",
                )
            )

    for iad in associations:
        members = set(range(iad.bFirstInterface, iad.bFirstInterface + iad.bInterfaceCount))
        if not members or not members.issubset(numbers):
            violations.append(
                Violation(
                    ViolationCode.COUNT_MISMATCH,
                    f"interface association covers missing interfaces {sorted(members)}",
                )
            )

    if violations:
        raise ViolationError(violations)

    return ConfigTree(
        wTotalLength=w_total,
        bNumInterfaces=num_interfaces,
        bConfigurationValue=config_value,
        iConfiguration=i_config,
        bmAttributes=bm_attrs,
        bMaxPower=max_power,
        interfaces=tuple(interfaces),
        associations=tuple(associations),
    )


# ---------------------------------------------------------------------------
# String descriptors


def parse_string_descriptor(data: bytes) -> str:
    """Decode a string descriptor; any deviation is a Fixable BadString."""

    def bad(msg: str) -> ViolationError:
        return ViolationError(Violation(ViolationCode.BAD_STRING, msg, Severity.FIXABLE))

    if len(data) < 2:
        raise bad(f"string descriptor is {len(data)} bytes")
    b_length, b_type = data[0], data[1]
    if b_type != DT_STRING:
        raise bad(f"descriptor type {b_type} != 3")
    if b_length != len(data):
        raise bad(f"bLength {b_length} != actual {len(data)}")
    if b_length % 2 != 0:
        raise bad(f"odd bLength {b_length}")
    if not 2 <= b_length <= 255:
        raise bad(f"bLength {b_length} out of range")
    try:
        return data[2:].decode("utf-16-le")
    except UnicodeDecodeError as exc:
        raise bad(f"invalid UTF-16LE: {exc.reason}") from None


# content cap: bLength <= 255 and even, minus the 2-byte header
_MAX_STRING_CONTENT = 252


def rewrite_string_descriptor(data: bytes) -> bytes:
    """Sanitize a noncompliant string descriptor.

    Drops invalid code units (unpaired surrogates), truncates to the length
    cap on a code-unit boundary, and fixes bLength.  Idempotent; always
    yields a descriptor that parse_string_descriptor accepts (possibly the
    empty descriptor 02 03).
    """
    try:
        parse_string_descriptor(data)
        return data
    except ViolationError:
        pass

    content = data[2:] if len(data) >= 2 else b""
    if len(content) % 2 != 0:
        content = content[:-1]
    units = [int.from_bytes(content[i : i + 2], "little") for i in range(0, len(content), 2)]

    kept: list[int] = []
    i = 0
    while i < len(units):
        u = units[i]
        if 0xD800 <= u <= 0xDBFF:
            if i + 1 < len(units) and 0xDC00 <= units[i + 1] <= 0xDFFF:
                kept.extend((u, units[i + 1]))
                i += 2
                continue
            i += 1  # unpaired high surrogate: drop
        elif 0xDC00 <= u <= 0xDFFF:
            i += 1  # orphan low surrogate: drop
        else:
            kept.append(u)
            i += 1

    # truncate on a code-unit boundary without splitting a surrogate pair
    max_units = _MAX_STRING_CONTENT // 2
    if len(kept) > max_units:
        cut = max_units
        if 0xD800 <= kept[cut - 1] <= 0xDBFF:
            cut -= 1
        kept = kept[:cut]

    body = b"".join(u.to_bytes(2, "little") for u in kept)
    return bytes([2 + len(body), DT_STRING]) + body


# ---------------------------------------------------------------------------
# Hub descriptors


@dataclass(frozen=True)
class HubDescriptor:
    nbr_ports: int
    characteristics: int


def parse_hub_descriptor(data: bytes) -> HubDescriptor:
    if len(data) < 5:
        raise _fatal(ViolationCode.BAD_LENGTH, f"hub descriptor is {len(data)} bytes")
    if data[1] not in (DT_HUB, DT_SS_HUB):
        raise _fatal(ViolationCode.BAD_TYPE, f"hub descriptor type {data[1]:#04x}")
    nbr_ports = data[2]
    if not 1 <= nbr_ports <= 127:  # 0 is meaningless; 127 is the bus address limit
        raise _fatal(ViolationCode.BAD_HUB_PORTS, f"hub claims {nbr_ports} ports")
    characteristics = struct.unpack_from("<H", data, 3)[0]
    return HubDescriptor(nbr_ports, characteristics)


# ---------------------------------------------------------------------------
# Whole-device claims, as sent in a DeviceConnect payload


@dataclass(frozen=True)
class DescriptorTree:
    device: DeviceDescriptor
    configs: tuple[ConfigTree, ...]
    raw_device: bytes
    raw_configs: tuple[bytes, ...] = field(repr=False, default=())

    def config_by_value(self, value: int) -> ConfigTree | None:
        for cfg in self.configs:
            if cfg.bConfigurationValue == value:
                return cfg
        return None

    def claimed_string_indices(self) -> set[int]:
        claimed = {
            self.device.iManufacturer,
            self.device.iProduct,
            self.device.iSerialNumber,
        }
        for cfg in self.configs:
            claimed.add(cfg.iConfiguration)
            for itf in cfg.interfaces:
                claimed.add(itf.iInterface)
        claimed.discard(0)
        return claimed

    def all_class_triples(self) -> set[tuple[int, int, int]]:
        triples = set()
        if self.device.bDeviceClass != 0:
            triples.add(
                (self.device.bDeviceClass, self.device.bDeviceSubClass, self.device.bDeviceProtocol)
            )
        for cfg in self.configs:
            for itf in cfg.interfaces:
                triples.add(itf.class_triple)
        return triples


def parse_descriptor_blobs(blob: bytes) -> DescriptorTree:
    """Parse a DeviceConnect payload: device descriptor then each config tree."""
    if len(blob) < 18:
        raise _fatal(
            ViolationCode.BAD_LENGTH, f"connect payload is {len(blob)} bytes, shorter than a device descriptor"
        )
    device = parse_device_descriptor(blob[:18])

    configs: list[ConfigTree] = []
    raw_configs: list[bytes] = []
    offset = 18
    while offset < len(blob):
        remaining = len(blob) - offset
        if remaining < 9:
            raise _fatal(ViolationCode.LENGTH_MISMATCH, f"{remaining} trailing bytes after configurations")
        if blob[offset + 1] != DT_CONFIG:
            raise _fatal(
                ViolationCode.BAD_TYPE, f"expected config descriptor at offset {offset}, got type {blob[offset + 1]}"
            )
        w_total = struct.unpack_from("<H", blob, offset + 2)[0]
        if w_total < 9 or offset + w_total > len(blob):
            raise _fatal(
                ViolationCode.LENGTH_MISMATCH,
                f"config at offset {offset} claims wTotalLength {w_total} beyond the payload",
            )
        raw = blob[offset : offset + w_total]
        configs.append(parse_config_tree(raw))
        raw_configs.append(raw)
        offset += w_total

    if len(configs) != device.bNumConfigurations:
        raise _fatal(
            ViolationCode.COUNT_MISMATCH,
            f"device claims {device.bNumConfigurations} configurations, payload has {len(configs)}",
        )
    values = [cfg.bConfigurationValue for cfg in configs]
    if len(set(values)) != len(values):
        raise _fatal(ViolationCode.COUNT_MISMATCH, f"duplicate bConfigurationValue in {values}")

    return DescriptorTree(
        device=device,
        configs=tuple(configs),
        raw_device=blob[:18],
        raw_configs=tuple(raw_configs),
    )
