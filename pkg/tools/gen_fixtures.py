#!/usr/bin/env python3
"""Regenerate packaged fixtures: the scenario corpus JSON files and the
known-exploit signature database (one signature per corpus row)."""

from __future__ import annotations

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from usbgate.emulator.corpus import corpus, export_corpus  # noqa: E402
from usbgate.emulator.generate import ControlStep  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(__file__), "..", "src", "usbgate", "data")

# rows whose attack bytes live in a class response rather than the connect blob
RESPONSE_PATTERNS = {
    "03:00:00:C:16": (1, 2),  # "05 93" usage page, offset 1 of the result payload
    "03:00:00:C:17": (1, 2),
    "09:00:00:C:9": (1, 3),  # hub descriptor header with the port count byte
}

CONNECT_PATTERNS = {
    "01:01:00:C:4": bytes([0x09, 0x24, 0x01, 0x00, 0x01, 0x09, 0x00, 0x01, 0x09]),
    "01:01:00:C:5": bytes([0x07, 0x24, 0x01, 0xEE, 0x00, 0xFF, 0xFF]),
}


def signature_for(scenario) -> dict:
    blobs = scenario.device.descriptor_blobs
    vid = int.from_bytes(blobs[8:10], "little") if len(blobs) >= 12 else None
    pid = int.from_bytes(blobs[10:12], "little") if len(blobs) >= 12 else None
    sig = {
        "id": scenario.name,
        "description": scenario.description,
        "device_match": {"id_vendor": f"{vid:04x}", "id_product": f"{pid:04x}"},
    }
    if scenario.name in CONNECT_PATTERNS:
        pattern = CONNECT_PATTERNS[scenario.name]
        sig["pattern"] = [f"{b:02X}" for b in pattern]
        sig["anchor"] = "Anywhere"
        sig["frame_match"] = {"kind": "DeviceConnect"}
    elif scenario.name in RESPONSE_PATTERNS:
        offset, length = RESPONSE_PATTERNS[scenario.name]
        payload = None
        for step in scenario.device.script:
            if isinstance(step, ControlStep) and step.setup.descriptor_type in (0x22, 0x29):
                payload = bytes([step.status]) + step.response
                break
        assert payload is not None, scenario.name
        sig["pattern"] = [f"{b:02X}" for b in payload[offset : offset + length]]
        sig["anchor"] = {"AtOffset": offset}
        sig["frame_match"] = {"kind": "TransferResult"}
    else:
        # key on the claimed vendor/product identity in the connect payload
        sig["pattern"] = [f"{b:02X}" for b in blobs[8:12]]
        sig["anchor"] = {"AtOffset": 8}
        sig["frame_match"] = {"kind": "DeviceConnect"}
    return sig


def main() -> None:
    scenario_dir = os.path.join(DATA_DIR, "scenarios")
    written = export_corpus(scenario_dir)
    print(f"wrote {len(written)} scenario files to {scenario_dir}")

    signatures = [signature_for(s) for s in corpus()]
    sig_path = os.path.join(DATA_DIR, "exploit-signatures.json")
    with open(sig_path, "w", encoding="utf-8") as fh:
        json.dump(signatures, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(signatures)} signatures to {sig_path}")


if __name__ == "__main__":
    main()
