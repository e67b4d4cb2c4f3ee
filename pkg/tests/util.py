"""Shared helpers for the test suite."""

from __future__ import annotations

import random

from usbgate.wire import TRANSFER_KINDS, Frame, FrameKind


def random_frame(rng: random.Random, max_payload: int = 2048) -> Frame:
    kind = rng.choice(list(FrameKind))
    payload = rng.randbytes(rng.randint(0, max_payload))
    if kind in TRANSFER_KINDS or kind == FrameKind.TRANSFER_RESULT:
        transfer_id = rng.randint(0, 2**64 - 1)
    else:
        transfer_id = 0
    return Frame(
        kind=kind,
        device_id=rng.randint(0, 2**32 - 1),
        transfer_id=transfer_id,
        payload=payload,
    )


def chunked(data: bytes, rng: random.Random, max_chunk: int = 37) -> list[bytes]:
    """Split data into random-size chunks (possibly empty)."""
    chunks = []
    i = 0
    while i < len(data):
        n = rng.randint(1, max_chunk)
        chunks.append(data[i : i + n])
        i += n
    return chunks
