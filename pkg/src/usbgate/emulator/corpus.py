"""Scripted exploit scenarios reconstructing the known-CVE exercise.

Thirteen Linux rows (the 2016 USB CVE batch) plus five analogues of the
published Windows 8.1 exploits.  Each scenario is annotated with the
mechanism expected to block it: the per-driver assertion rules, the
compliance checks, or (for the audio rows, whose class semantics the
compliance policy does not model) a payload signature.

Scenarios are deterministic; export/load round-trips them through the JSON
corpus files shipped with the package.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from usbgate.emulator import templates
from usbgate.emulator.generate import ControlStep, DataStep, EmulatedDevice, GenerateMode, Label, build_script
from usbgate.wire import FrameKind

CORPUS_SEED = 0x5EED  # fixed: scenarios must replay identically


@dataclass(frozen=True)
class Scenario:
    name: str
    os_target: str  # "linux" or "windows"
    description: str
    expected_policy: str  # "assertion" | "compliance" | "signature"
    device: EmulatedDevice


def _device(name: str, blobs: bytes, tpl: templates.DeviceTemplate | None = None) -> EmulatedDevice:
    rng = random.Random(CORPUS_SEED)
    script = build_script(rng, tpl) if tpl is not None else []
    return EmulatedDevice(
        seed=CORPUS_SEED,
        mode=GenerateMode.LABELED_MUTATION,
        name=name,
        descriptor_blobs=blobs,
        base_blobs=blobs,
        script=script,
        label=Label("TemplateMismatch", name),
    )


def _vendor_serial(vid: int, pid: int, endpoints: list[bytes]) -> bytes:
    itf = templates.interface(0, 0, 0xFF, 0x00, 0x00, endpoints=endpoints)
    return templates.device_descriptor(dev_class=0xFF, id_vendor=vid, id_product=pid) + templates.config(
        1, [itf]
    )


def _audio_device(interfaces: list[bytes], id_product: int) -> bytes:
    return templates.device_descriptor(dev_class=0, id_vendor=0x0D8C, id_product=id_product) + templates.config(
        1, interfaces
    )


def _linux_rows() -> list[Scenario]:
    rows: list[Scenario] = []

    # audio function whose streaming interface exposes no endpoint at all
    streaming = templates.interface(1, 0, 0x01, 0x02, 0x00, endpoints=[])
    control = templates.interface(0, 0, 0x01, 0x01, 0x00, endpoints=[])
    rows.append(
        Scenario(
            "CVE-2016-2184",
            "linux",
            "Sound device with non-existent endpoint",
            "assertion",
            _device("cve-2016-2184", _audio_device([control, streaming], 0x0102)),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-2185",
            "linux",
            "RF remote control device with invalid interface or endpoint",
            "assertion",
            _device(
                "cve-2016-2185",
                _vendor_serial(0x0471, 0x0602, [templates.endpoint(0x81, 0x03, 8, 10)]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-2186",
            "linux",
            "Multimedia control device with invalid endpoint",
            "assertion",
            _device(
                "cve-2016-2186",
                _vendor_serial(0x077D, 0x0410, [templates.endpoint(0x02, 0x02, 64)]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-2187",
            "linux",
            "Digitizer tablet device with invalid endpoint",
            "assertion",
            _device(
                "cve-2016-2187",
                _vendor_serial(0x078C, 0x0090, [templates.endpoint(0x02, 0x02, 64)]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-2188",
            "linux",
            "I/O Warrior device with invalid endpoint",
            "assertion",
            _device(
                "cve-2016-2188",
                _vendor_serial(0x07C0, 0x1500, [templates.endpoint(0x02, 0x02, 64)]),
            ),
        )
    )

    # MIDI function with no data endpoint anywhere
    midi = templates.interface(1, 0, 0x01, 0x03, 0x00, endpoints=[])
    rows.append(
        Scenario(
            "CVE-2016-2384",
            "linux",
            "Audio device with invalid USB descriptor",
            "assertion",
            _device("cve-2016-2384", _audio_device([control, midi], 0x0103)),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-2782",
            "linux",
            "Serial device with no bulk-in or interrupt-in endpoint",
            "assertion",
            _device(
                "cve-2016-2782",
                _vendor_serial(0x0830, 0x0061, [templates.endpoint(0x02, 0x02, 64)]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-3136",
            "linux",
            "Serial device without two interrupt-in endpoints",
            "assertion",
            _device(
                "cve-2016-3136",
                _vendor_serial(
                    0x0711,
                    0x0230,
                    [
                        templates.endpoint(0x81, 0x03, 8, 10),
                        templates.endpoint(0x82, 0x02, 64),
                        templates.endpoint(0x02, 0x02, 64),
                    ],
                ),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-3137",
            "linux",
            "Serial device without both in and out interrupt endpoints",
            "assertion",
            _device(
                "cve-2016-3137",
                _vendor_serial(0x04B4, 0x5500, [templates.endpoint(0x81, 0x03, 8, 10)]),
            ),
        )
    )

    # ACM control interface with no CDC-data interface in the configuration
    acm_only = templates.interface(0, 0, 0x02, 0x02, 0x01, endpoints=[templates.endpoint(0x81, 0x03, 16, 9)])
    rows.append(
        Scenario(
            "CVE-2016-3138",
            "linux",
            "Communication device without both control and data endpoints",
            "assertion",
            _device(
                "cve-2016-3138",
                templates.device_descriptor(dev_class=0x02, id_vendor=0x1A2B, id_product=0x3138)
                + templates.config(1, [acm_only]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-3139",
            "linux",
            "Drawing tablet with invalid USB descriptor",
            "assertion",
            _device(
                "cve-2016-3139",
                _vendor_serial(0x056A, 0x0010, [templates.endpoint(0x02, 0x02, 64)]),
            ),
        )
    )

    rows.append(
        Scenario(
            "CVE-2016-3140",
            "linux",
            "Serial converter device with invalid USB descriptor",
            "assertion",
            _device(
                "cve-2016-3140",
                _vendor_serial(
                    0x05C5,
                    0x0002,
                    [templates.endpoint(0x81, 0x02, 64), templates.endpoint(0x83, 0x03, 8, 10)],
                ),
            ),
        )
    )

    # CDC device whose configuration claims more bytes than it carries
    cdc = templates.cdc_modem(id_vendor=0x1A2B, id_product=0x3951)
    lying = bytearray(cdc.descriptor_blobs)
    total = int.from_bytes(lying[20:22], "little") + 2
    lying[20:22] = total.to_bytes(2, "little")
    rows.append(
        Scenario(
            "CVE-2016-3951",
            "linux",
            "Communication device with invalid descriptor and payload",
            "compliance",
            _device("cve-2016-3951", bytes(lying)),
        )
    )
    return rows


# Class-specific audio descriptors the compliance policy treats as opaque;
# the shipped signatures key on these bytes.
_AC_HEADER_GHOST_IFACE = bytes(
    [0x09, 0x24, 0x01, 0x00, 0x01, 0x09, 0x00, 0x01, 0x09]  # baInterfaceNr references interface 9
)
_AS_GENERAL_BOGUS = bytes([0x07, 0x24, 0x01, 0xEE, 0x00, 0xFF, 0xFF])  # terminal link 0xEE


def _windows_rows() -> list[Scenario]:
    rows: list[Scenario] = []

    control = templates.interface(0, 0, 0x01, 0x01, 0x00, endpoints=[], extra=_AC_HEADER_GHOST_IFACE)
    rows.append(
        Scenario(
            "01:01:00:C:4",
            "windows",
            "Audio device with non-existent streaming interface",
            "signature",
            _device("win-audio-ghost-streaming", _audio_device([control], 0x0C04)),
        )
    )

    streaming = templates.interface(
        1,
        0,
        0x01,
        0x02,
        0x00,
        endpoints=[templates.endpoint(0x81, 0x01, 256, 1)],
        extra=_AS_GENERAL_BOGUS,
    )
    plain_control = templates.interface(0, 0, 0x01, 0x01, 0x00, endpoints=[])
    rows.append(
        Scenario(
            "01:01:00:C:5",
            "windows",
            "Audio device with invalid streaming interface",
            "signature",
            _device("win-audio-bogus-streaming", _audio_device([plain_control, streaming], 0x0C05)),
        )
    )

    for suffix, page in (("16", 0x93), ("17", 0xA5)):
        tpl = templates.keyboard(id_vendor=0x0C16, id_product=int(suffix, 16))
        bad_report = bytes([0x05, page]) + templates.KEYBOARD_REPORT_DESCRIPTOR[2:]
        tpl.class_responses[(0x22, 0)] = bad_report
        rows.append(
            Scenario(
                f"03:00:00:C:{suffix}",
                "windows",
                "HID device with invalid report usage page",
                "compliance",
                _device(f"win-hid-usage-page-{suffix}", tpl.descriptor_blobs, tpl),
            )
        )

    hub = templates.hub(ports=0, id_vendor=0x0C09, id_product=0x0009)
    rows.append(
        Scenario(
            "09:00:00:C:9",
            "windows",
            "Hub with invalid number of ports",
            "compliance",
            _device("win-hub-zero-ports", hub.descriptor_blobs, hub),
        )
    )
    return rows


def corpus() -> list[Scenario]:
    return _linux_rows() + _windows_rows()


# ---------------------------------------------------------------------------
# JSON round-trip (the corpus ships as data files)

_KIND_NAMES = {k: k.name for k in FrameKind}


def scenario_to_json(s: Scenario) -> dict:
    steps = []
    for step in s.device.script:
        if isinstance(step, ControlStep):
            steps.append(
                {
                    "control": {
                        "setup": step.setup.to_bytes().hex(),
                        "data": step.data_stage.hex(),
                        "status": step.status,
                        "response": step.response.hex(),
                    }
                }
            )
        else:
            steps.append(
                {"data": {"kind": step.kind.name, "endpoint": step.endpoint, "payload": step.data.hex()}}
            )
    return {
        "name": s.name,
        "os_target": s.os_target,
        "description": s.description,
        "expected_policy": s.expected_policy,
        "device": {
            "name": s.device.name,
            "descriptor_blobs": s.device.descriptor_blobs.hex(),
            "script": steps,
        },
    }


def scenario_from_json(doc: dict) -> Scenario:
    from usbgate.descriptors import parse_setup

    steps: list = []
    for raw in doc["device"]["script"]:
        if "control" in raw:
            c = raw["control"]
            steps.append(
                ControlStep(
                    setup=parse_setup(bytes.fromhex(c["setup"])),
                    data_stage=bytes.fromhex(c["data"]),
                    status=c["status"],
                    response=bytes.fromhex(c["response"]),
                )
            )
        else:
            d = raw["data"]
            steps.append(DataStep(FrameKind[d["kind"]], d["endpoint"], bytes.fromhex(d["payload"])))
    blobs = bytes.fromhex(doc["device"]["descriptor_blobs"])
    device = EmulatedDevice(
        seed=CORPUS_SEED,
        mode=GenerateMode.LABELED_MUTATION,
        name=doc["device"]["name"],
        descriptor_blobs=blobs,
        base_blobs=blobs,
        script=steps,
        label=Label("TemplateMismatch", doc["name"]),
    )
    return Scenario(
        name=doc["name"],
        os_target=doc["os_target"],
        description=doc["description"],
        expected_policy=doc["expected_policy"],
        device=device,
    )


def export_corpus(directory: str) -> list[str]:
    import os

    os.makedirs(directory, exist_ok=True)
    written = []
    for scenario in corpus():
        safe = scenario.name.replace(":", "_")
        path = os.path.join(directory, f"{safe}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(scenario_to_json(scenario), fh, indent=2)
            fh.write("\n")
        written.append(path)
    return written


def load_packaged_corpus() -> list[Scenario]:
    from importlib import resources

    root = resources.files("usbgate").joinpath("data", "scenarios")
    scenarios = []
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            scenarios.append(scenario_from_json(json.loads(entry.read_text(encoding="utf-8"))))
    return scenarios
