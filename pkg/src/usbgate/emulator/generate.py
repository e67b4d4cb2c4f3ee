"""Deterministic emulated-device generation.

Three modes:

  * compliant        -- a valid scripted device built from a template, with
                        randomized address, payloads, and template choice.
  * labeled-mutation -- a compliant base plus exactly one injected violation;
                        the label names the violation code the gateway must
                        report, which makes fuzzing a two-sided oracle test.
  * random-raw       -- unconstrained random descriptor bytes in the connect
                        payload, nothing scripted.

Everything derives from the seed, so any device can be regenerated.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from usbgate.descriptors import DEFINED_CLASS_CODES, SetupPacket
from usbgate.emulator import templates
from usbgate.wire import FrameKind

UNDEFINED_CLASS_CODES = tuple(sorted(set(range(256)) - DEFINED_CLASS_CODES))

MUTATIONS = (
    "BadString",
    "InvalidClass",
    "CountMismatch",
    "LengthMismatch",
    "BadEndpoint",
    "BadHubPorts",
    "ResponseOverrun",
)

_TEMPLATE_POOL = ("keyboard", "mass-storage", "hub", "serial", "phone", "cdc-modem")

_KIND_BY_NAME = {
    "bulk": FrameKind.BULK_TRANSFER,
    "interrupt": FrameKind.INTERRUPT_TRANSFER,
    "isochronous": FrameKind.ISO_TRANSFER,
}


class GenerateMode(Enum):
    RANDOM_RAW = "random-raw"
    LABELED_MUTATION = "labeled-mutation"
    COMPLIANT = "compliant"


@dataclass(frozen=True)
class Label:
    code: str | None  # None means compliant; else a Violation code name
    site: str = ""

    @property
    def compliant(self) -> bool:
        return self.code is None


@dataclass(frozen=True)
class ControlStep:
    setup: SetupPacket
    data_stage: bytes = b""
    status: int = 0
    response: bytes = b""


@dataclass(frozen=True)
class DataStep:
    kind: FrameKind
    endpoint: int
    data: bytes


Step = ControlStep | DataStep


@dataclass
class EmulatedDevice:
    seed: int
    mode: GenerateMode
    name: str
    descriptor_blobs: bytes
    base_blobs: bytes  # the compliant claims this device was derived from
    script: list[Step] = field(default_factory=list)
    label: Label | None = None


def _get_descriptor(dtype: int, index: int, length: int, bm: int = 0x80, w_index: int = 0) -> SetupPacket:
    return SetupPacket(bm, 6, (dtype << 8) | index, w_index, length)


def build_script(rng: random.Random, tpl: templates.DeviceTemplate) -> list[Step]:
    """The enumeration transcript a well-behaved device produces."""
    blobs = tpl.descriptor_blobs
    config_raw = blobs[18:]
    steps: list[Step] = [
        ControlStep(_get_descriptor(1, 0, 18), response=blobs[:18]),
        ControlStep(SetupPacket(0x00, 5, rng.randint(1, 127), 0, 0)),
        ControlStep(_get_descriptor(2, 0, len(config_raw)), response=config_raw),
        ControlStep(SetupPacket(0x00, 9, config_raw[5], 0, 0)),
    ]
    for (dtype, index), payload in sorted(tpl.class_responses.items()):
        if dtype == 0x29:  # hub descriptor: class request to the device
            setup = _get_descriptor(dtype, 0, 64, bm=0xA0)
        else:  # HID report descriptor: standard request to the interface
            setup = _get_descriptor(dtype, 0, len(payload), bm=0x81, w_index=index)
        steps.append(ControlStep(setup, response=payload))
    for index in sorted(tpl.strings):
        steps.append(ControlStep(_get_descriptor(3, index, 255), response=tpl.strings[index]))
    for address, kind_name in tpl.data_endpoints:
        size = rng.randint(1, 8 if kind_name == "interrupt" else 64)
        steps.append(DataStep(_KIND_BY_NAME[kind_name], address, rng.randbytes(size)))
    return steps


def _corrupt_string(rng: random.Random, blob: bytes) -> bytes:
    variant = rng.randrange(3)
    if variant == 0:  # unpaired high surrogate in the text
        return bytes([6, 3]) + bytes.fromhex("00d84100")
    if variant == 1:  # odd bLength
        return bytes([5, 3]) + blob[2:5].ljust(3, b"\x00")
    return bytes([max(4, len(blob) & 0xFF) ^ 0x01, 3]) + blob[2:]  # bLength lies


def _apply_mutation(rng: random.Random, device: EmulatedDevice, mutation: str) -> None:
    blobs = bytearray(device.descriptor_blobs)
    if mutation == "InvalidClass":
        blobs[4] = rng.choice(UNDEFINED_CLASS_CODES)
        device.label = Label("InvalidClass", "device.bDeviceClass")
    elif mutation == "CountMismatch":
        blobs[18 + 4] = (blobs[18 + 4] + rng.randint(1, 3)) & 0xFF
        device.label = Label("CountMismatch", "config.bNumInterfaces")
    elif mutation == "LengthMismatch":
        total = int.from_bytes(blobs[20:22], "little") + rng.randint(1, 4)
        blobs[20:22] = (total & 0xFFFF).to_bytes(2, "little")
        device.label = Label("LengthMismatch", "config.wTotalLength")
    elif mutation == "BadString":
        targets = [i for i, s in enumerate(device.script)
                   if isinstance(s, ControlStep) and s.setup.descriptor_type == 3]
        idx = rng.choice(targets)
        step = device.script[idx]
        device.script[idx] = ControlStep(step.setup, response=_corrupt_string(rng, step.response))
        device.label = Label("BadString", f"string index {step.setup.descriptor_index}")
    elif mutation == "BadEndpoint":
        targets = [i for i, s in enumerate(device.script) if isinstance(s, DataStep)]
        idx = rng.choice(targets)
        step = device.script[idx]
        if rng.random() < 0.5:
            declared = {s.endpoint for s in device.script if isinstance(s, DataStep)}
            free = [a for a in (0x8E, 0x0E, 0x8B, 0x0B) if a not in declared]
            device.script[idx] = DataStep(step.kind, free[0], step.data)
            device.label = Label("BadEndpoint", f"undeclared endpoint {free[0]:#04x}")
        else:
            flipped = (
                FrameKind.BULK_TRANSFER
                if step.kind is not FrameKind.BULK_TRANSFER
                else FrameKind.INTERRUPT_TRANSFER
            )
            device.script[idx] = DataStep(flipped, step.endpoint, step.data)
            device.label = Label("BadEndpoint", f"wrong transfer type on {step.endpoint:#04x}")
    elif mutation == "BadHubPorts":
        # forge only the port-count byte so nothing else about the reply
        # (length included) changes
        ports = rng.choice([0] + list(range(128, 256)))
        for i, step in enumerate(device.script):
            if isinstance(step, ControlStep) and step.setup.descriptor_type == 0x29:
                bad = bytearray(step.response)
                bad[2] = ports
                device.script[i] = ControlStep(step.setup, response=bytes(bad))
        device.label = Label("BadHubPorts", f"hub claims {ports} ports")
    elif mutation == "ResponseOverrun":
        for i, step in enumerate(device.script):
            if isinstance(step, ControlStep) and step.setup.descriptor_type == 1:
                extra = rng.randbytes(rng.randint(1, 32))
                device.script[i] = ControlStep(step.setup, response=step.response + extra)
                break
        device.label = Label("ResponseOverrun", "device descriptor reply overruns wLength")
    else:  # pragma: no cover
        raise AssertionError(mutation)
    device.descriptor_blobs = bytes(blobs)


def generate_device(seed: int, mode: GenerateMode) -> EmulatedDevice:
    rng = random.Random(seed)
    if mode is GenerateMode.RANDOM_RAW:
        blobs = rng.randbytes(rng.randint(0, 300))
        return EmulatedDevice(
            seed=seed,
            mode=mode,
            name="random-raw",
            descriptor_blobs=blobs,
            base_blobs=blobs,
            label=None,
        )

    mutation = rng.choice(MUTATIONS) if mode is GenerateMode.LABELED_MUTATION else None
    if mutation == "BadHubPorts":
        template_name = "hub"
    else:
        template_name = rng.choice(_TEMPLATE_POOL)
    tpl = templates.TEMPLATES[template_name]()
    device = EmulatedDevice(
        seed=seed,
        mode=mode,
        name=tpl.name,
        descriptor_blobs=tpl.descriptor_blobs,
        base_blobs=tpl.descriptor_blobs,
        script=build_script(rng, tpl),
        label=Label(None),
    )
    if mutation is not None:
        _apply_mutation(rng, device, mutation)
    return device
