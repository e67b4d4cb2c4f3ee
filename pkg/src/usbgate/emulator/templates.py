"""Descriptor blob builders for emulated devices.

These are deliberately independent of the gateway-side parsers: blobs are
hand-packed, and counts and lengths are recomputed from what is actually
present, so devices built here are compliant by construction.  Mutation
helpers then break exactly one claim at a time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field


def device_descriptor(
    bcd_usb: int = 0x0200,
    dev_class: int = 0,
    dev_subclass: int = 0,
    dev_protocol: int = 0,
    max_packet0: int = 64,
    id_vendor: int = 0x1D6B,
    id_product: int = 0x0001,
    bcd_device: int = 0x0100,
    i_manufacturer: int = 1,
    i_product: int = 2,
    i_serial: int = 3,
    num_configs: int = 1,
) -> bytes:
    return struct.pack(
        "<BBHBBBBHHHBBBB",
        18,
        1,
        bcd_usb,
        dev_class,
        dev_subclass,
        dev_protocol,
        max_packet0,
        id_vendor,
        id_product,
        bcd_device,
        i_manufacturer,
        i_product,
        i_serial,
        num_configs,
    )


def endpoint(address: int, attributes: int, max_packet: int = 64, interval: int = 0) -> bytes:
    return struct.pack("<BBBBHB", 7, 5, address, attributes, max_packet, interval)


def interface(
    number: int,
    alt: int,
    if_class: int,
    if_subclass: int,
    if_protocol: int,
    endpoints: list[bytes],
    i_interface: int = 0,
    extra: bytes = b"",
) -> bytes:
    """Interface descriptor followed by class-specific extras and endpoints."""
    head = struct.pack(
        "<BBBBBBBBB", 9, 4, number, alt, len(endpoints), if_class, if_subclass, if_protocol, i_interface
    )
    return head + extra + b"".join(endpoints)


def interface_association(
    first_interface: int, count: int, f_class: int, f_subclass: int, f_protocol: int, i_function: int = 0
) -> bytes:
    return struct.pack("<BBBBBBBB", 8, 0x0B, first_interface, count, f_class, f_subclass, f_protocol, i_function)


def config(
    value: int,
    interfaces: list[bytes],
    num_interfaces: int | None = None,
    attributes: int = 0x80,
    max_power: int = 50,
    i_configuration: int = 0,
    prefix: bytes = b"",
) -> bytes:
    """Config descriptor with wTotalLength recomputed from actual content.

    num_interfaces defaults to the count of interface descriptors passed in
    (alt settings of one interface count once); prefix bytes (e.g. an
    interface association descriptor) go right after the header.
    """
    body = prefix + b"".join(interfaces)
    if num_interfaces is None:
        seen = set()
        for blob in interfaces:
            seen.add(blob[2])  # bInterfaceNumber of the leading interface descriptor
        num_interfaces = len(seen)
    total = 9 + len(body)
    head = struct.pack("<BBHBBBBB", 9, 2, total, num_interfaces, value, i_configuration, attributes, max_power)
    return head + body


def hid_descriptor(report_length: int, bcd_hid: int = 0x0111, country: int = 0) -> bytes:
    return struct.pack("<BBHBBBH", 9, 0x21, bcd_hid, country, 1, 0x22, report_length)


def string_descriptor(text: str) -> bytes:
    body = text.encode("utf-16-le")
    return bytes([2 + len(body), 3]) + body


def hub_descriptor(ports: int, characteristics: int = 0x0000) -> bytes:
    # 7 fixed bytes plus DeviceRemovable / PortPwrCtrlMask bitmaps
    bitmap_len = ports // 8 + 1
    return (
        struct.pack("<BBBHBB", 7 + 2 * bitmap_len, 0x29, ports, characteristics, 50, 100)
        + b"\x00" * bitmap_len
        + b"\xff" * bitmap_len
    )


# A minimal valid boot-keyboard HID report descriptor: usage page Generic
# Desktop, usage Keyboard, one 8-byte input report.
KEYBOARD_REPORT_DESCRIPTOR = bytes(
    [
        0x05, 0x01,        # Usage Page (Generic Desktop)
        0x09, 0x06,        # Usage (Keyboard)
        0xA1, 0x01,        # Collection (Application)
        0x05, 0x07,        #   Usage Page (Keyboard/Keypad)
        0x19, 0x00,        #   Usage Minimum (0)
        0x29, 0x65,        #   Usage Maximum (101)
        0x15, 0x00,        #   Logical Minimum (0)
        0x25, 0x65,        #   Logical Maximum (101)
        0x75, 0x08,        #   Report Size (8)
        0x95, 0x08,        #   Report Count (8)
        0x81, 0x00,        #   Input (Data, Array)
        0xC0,              # End Collection
    ]
)


@dataclass
class DeviceTemplate:
    """A complete scripted device: connect blobs plus enumeration answers."""

    name: str
    descriptor_blobs: bytes
    strings: dict[int, bytes] = field(default_factory=dict)
    class_responses: dict[tuple[int, int], bytes] = field(default_factory=dict)
    # (descriptor_type, index) -> bytes for class GET_DESCRIPTOR requests
    data_endpoints: list[tuple[int, str]] = field(default_factory=list)

    @property
    def device_blob(self) -> bytes:
        return self.descriptor_blobs[:18]


def _standard_strings() -> dict[int, bytes]:
    return {
        1: string_descriptor("usbgate test vendor"),
        2: string_descriptor("emulated device"),
        3: string_descriptor("SN-0001"),
    }


def keyboard(id_vendor: int = 0x1D6B, id_product: int = 0x0101) -> DeviceTemplate:
    report = KEYBOARD_REPORT_DESCRIPTOR
    itf = interface(
        0, 0, 0x03, 0x01, 0x01,
        endpoints=[endpoint(0x81, 0x03, max_packet=8, interval=10)],
        extra=hid_descriptor(len(report)),
    )
    blobs = device_descriptor(dev_class=0, id_vendor=id_vendor, id_product=id_product) + config(1, [itf])
    return DeviceTemplate(
        name="hid-keyboard",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        class_responses={(0x22, 0): report},
        data_endpoints=[(0x81, "interrupt")],
    )


def mass_storage(id_vendor: int = 0x1D6B, id_product: int = 0x0201) -> DeviceTemplate:
    itf = interface(
        0, 0, 0x08, 0x06, 0x50,
        endpoints=[endpoint(0x81, 0x02, max_packet=512), endpoint(0x02, 0x02, max_packet=512)],
    )
    blobs = device_descriptor(dev_class=0, id_vendor=id_vendor, id_product=id_product) + config(1, [itf])
    return DeviceTemplate(
        name="mass-storage",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        data_endpoints=[(0x81, "bulk"), (0x02, "bulk")],
    )


def hub(ports: int = 4, id_vendor: int = 0x1D6B, id_product: int = 0x0301) -> DeviceTemplate:
    itf = interface(0, 0, 0x09, 0x00, 0x00, endpoints=[endpoint(0x81, 0x03, max_packet=1, interval=12)])
    blobs = device_descriptor(dev_class=0x09, id_vendor=id_vendor, id_product=id_product) + config(1, [itf])
    return DeviceTemplate(
        name="hub",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        class_responses={(0x29, 0): hub_descriptor(ports)},
        data_endpoints=[(0x81, "interrupt")],
    )


def serial_two_int_in(id_vendor: int = 0x0711, id_product: int = 0x0230) -> DeviceTemplate:
    """Serial converter exposing two interrupt-IN endpoints plus bulk pair."""
    itf = interface(
        0, 0, 0xFF, 0x00, 0x00,
        endpoints=[
            endpoint(0x81, 0x03, max_packet=8, interval=10),
            endpoint(0x82, 0x03, max_packet=8, interval=10),
            endpoint(0x83, 0x02, max_packet=64),
            endpoint(0x03, 0x02, max_packet=64),
        ],
    )
    blobs = device_descriptor(dev_class=0xFF, id_vendor=id_vendor, id_product=id_product) + config(1, [itf])
    return DeviceTemplate(
        name="serial-converter",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        data_endpoints=[(0x81, "interrupt"), (0x82, "interrupt"), (0x83, "bulk"), (0x03, "bulk")],
    )


def phone_composite(id_vendor: int = 0x18D1, id_product: int = 0x4EE1) -> DeviceTemplate:
    """Two-function phone: mass-storage function plus HID function."""
    report = KEYBOARD_REPORT_DESCRIPTOR
    storage = interface(
        0, 0, 0x08, 0x06, 0x50,
        endpoints=[endpoint(0x81, 0x02, max_packet=512), endpoint(0x01, 0x02, max_packet=512)],
    )
    hid_itf = interface(
        1, 0, 0x03, 0x01, 0x01,
        endpoints=[endpoint(0x82, 0x03, max_packet=8, interval=10)],
        extra=hid_descriptor(len(report)),
    )
    blobs = device_descriptor(dev_class=0, id_vendor=id_vendor, id_product=id_product) + config(
        1, [storage, hid_itf]
    )
    return DeviceTemplate(
        name="phone-composite",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        class_responses={(0x22, 1): report},
        data_endpoints=[(0x81, "bulk"), (0x01, "bulk"), (0x82, "interrupt")],
    )


def cdc_modem(id_vendor: int = 0x1D6B, id_product: int = 0x0401) -> DeviceTemplate:
    """CDC ACM modem: control interface (class 2) paired with data (class 10)."""
    control = interface(0, 0, 0x02, 0x02, 0x01, endpoints=[endpoint(0x83, 0x03, max_packet=16, interval=9)])
    data = interface(
        1, 0, 0x0A, 0x00, 0x00,
        endpoints=[endpoint(0x81, 0x02, max_packet=512), endpoint(0x01, 0x02, max_packet=512)],
    )
    iad = interface_association(0, 2, 0x02, 0x02, 0x01)
    blobs = (
        device_descriptor(
            dev_class=0xEF, dev_subclass=0x02, dev_protocol=0x01, id_vendor=id_vendor, id_product=id_product
        )
        + config(1, [control, data], prefix=iad)
    )
    return DeviceTemplate(
        name="cdc-modem",
        descriptor_blobs=blobs,
        strings=_standard_strings(),
        data_endpoints=[(0x83, "interrupt"), (0x81, "bulk"), (0x01, "bulk")],
    )


TEMPLATES = {
    "keyboard": keyboard,
    "mass-storage": mass_storage,
    "hub": hub,
    "serial": serial_two_int_in,
    "phone": phone_composite,
    "cdc-modem": cdc_modem,
}
