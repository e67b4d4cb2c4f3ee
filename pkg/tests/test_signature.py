import json
import random

import pytest

from usbgate.engine import ConfigError, Services, VerdictKind
from usbgate.emulator import templates
from usbgate.policies.signature import (
    SignatureDb,
    SignaturePolicy,
    load_signatures,
    parse_signature,
)
from usbgate.session import DeviceSession
from usbgate.wire import Frame, FrameKind


def keyboard_session():
    return DeviceSession.from_connect(1, templates.keyboard().descriptor_blobs)


def bulk(payload: bytes, device_id=1, tid=1) -> Frame:
    return Frame(FrameKind.BULK_TRANSFER, device_id, tid, payload)


def sig(obj) -> dict:
    base = {"id": "s1", "description": "test"}
    base.update(obj)
    return base


# ---------------------------------------------------------------------------
# loading


def test_empty_db_matches_nothing():
    db = load_signatures("[]")
    assert len(db) == 0
    assert db.match(keyboard_session(), bulk(b"\x81anything")) is None


def test_schema_smoke():
    db = load_signatures(json.dumps([sig({"pattern": ["AA", "BB", "??", "DD"], "anchor": {"AtOffset": 0}})]))
    assert len(db) == 1


@pytest.mark.parametrize(
    "bad",
    [
        {"pattern": []},
        {"pattern": ["GG"]},
        {"pattern": ["AA"] * 257},
        {"pattern": ["AA"], "anchor": {"AtOffset": -1}},
        {"pattern": ["AA"], "anchor": "Sideways"},
        {"pattern": ["AA"], "frame_match": {"kind": "WarpTransfer"}},
    ],
)
def test_bad_signatures_rejected(bad):
    with pytest.raises(ConfigError):
        load_signatures(json.dumps([sig(bad)]))


# ---------------------------------------------------------------------------
# matching semantics


def test_wildcard_at_offset():
    db = load_signatures(json.dumps([sig({"pattern": ["AA", "BB", "??", "DD"], "anchor": {"AtOffset": 0}})]))
    assert db.match(None, bulk(bytes.fromhex("aabbccdd"))) == "s1"
    assert db.match(None, bulk(bytes.fromhex("aabbccde"))) is None
    # anchored: a hit later in the payload does not count
    assert db.match(None, bulk(bytes.fromhex("00aabbccdd"))) is None


def test_anywhere_anchor_scans_whole_payload():
    rng = random.Random(5)
    payload = bytearray(rng.randbytes(512))
    payload[37:41] = bytes.fromhex("deadbeef")
    db = load_signatures(json.dumps([sig({"pattern": ["DE", "AD", "BE", "EF"]})]))
    assert db.match(None, bulk(bytes(payload))) == "s1"


def test_device_match_uses_cached_tree():
    db = load_signatures(
        json.dumps([sig({"pattern": ["AA"], "device_match": {"id_vendor": "1d6b", "device_class": "03"}})])
    )
    assert db.match(keyboard_session(), bulk(b"\xaa")) == "s1"
    storage = DeviceSession.from_connect(2, templates.mass_storage(id_vendor=0x9999).descriptor_blobs)
    assert db.match(storage, bulk(b"\xaa")) is None
    # device_match present but no parsed tree: signature does not apply
    broken = DeviceSession.from_connect(3, b"\x00")
    assert db.match(broken, bulk(b"\xaa")) is None


def test_frame_match_kind_endpoint_direction():
    db = load_signatures(
        json.dumps(
            [sig({"pattern": ["AA"], "frame_match": {"kind": "BulkTransfer", "endpoint": "81", "direction": "in"}})]
        )
    )
    assert db.match(None, bulk(b"\x81\xaa")) == "s1"
    assert db.match(None, bulk(b"\x02\xaa")) is None  # wrong endpoint
    assert db.match(None, Frame(FrameKind.INTERRUPT_TRANSFER, 1, 1, b"\x81\xaa")) is None  # wrong kind


def test_first_declared_match_wins_and_hot_adds_append():
    db = load_signatures(
        json.dumps(
            [
                sig({"id": "first", "pattern": ["AA"]}),
                sig({"id": "second", "pattern": ["AA", "BB"]}),
            ]
        )
    )
    assert db.match(None, bulk(b"\xaa\xbb")) == "first"
    db.add(parse_signature(sig({"id": "third", "pattern": ["??", "BB"]})))
    assert db.match(None, bulk(b"\xaa\xbb")) == "first"
    assert [s.id for s in db.signatures] == ["first", "second", "third"]


def test_matching_ignores_header_fields():
    db = load_signatures(json.dumps([sig({"pattern": ["55", "47", "54", "31"]})]))  # "UGT1"
    # pattern equals the wire magic; an empty payload must not match even
    # though the encoded frame header contains those bytes
    assert db.match(None, bulk(b"")) is None
    assert db.match(None, Frame(FrameKind.HELLO, 0x31544755, 0, b"")) is None


# ---------------------------------------------------------------------------
# scan-oracle agreement


def naive_scan(tokens, offset, payload: bytes) -> bool:
    def hit(pos: int) -> bool:
        if pos < 0 or pos + len(tokens) > len(payload):
            return False
        return all(t is None or payload[pos + i] == t for i, t in enumerate(tokens))

    if offset is not None:
        return hit(offset)
    return any(hit(pos) for pos in range(0, max(0, len(payload) - len(tokens)) + 1))


def test_match_agrees_with_naive_scan_oracle():
    rng = random.Random(2024)
    for trial in range(10_000):
        n_tokens = rng.randint(1, 8)
        tokens = tuple(None if rng.random() < 0.25 else rng.randrange(256) for _ in range(n_tokens))
        offset = None if rng.random() < 0.5 else rng.randint(0, 24)
        payload = bytearray(rng.randbytes(rng.randint(0, 64)))
        if rng.random() < 0.5 and len(payload) >= n_tokens:
            pos = offset if offset is not None else rng.randint(0, len(payload) - n_tokens)
            if pos + n_tokens <= len(payload):
                for i, t in enumerate(tokens):
                    payload[pos + i] = t if t is not None else rng.randrange(256)
        payload = bytes(payload)

        raw = sig(
            {
                "pattern": ["??" if t is None else f"{t:02X}" for t in tokens],
                "anchor": "Anywhere" if offset is None else {"AtOffset": offset},
            }
        )
        db = SignatureDb([parse_signature(raw)])
        got = db.match(None, bulk(payload)) is not None
        want = naive_scan(tokens, offset, payload)
        assert got == want, (trial, tokens, offset, payload.hex())


# ---------------------------------------------------------------------------
# policy verdicts


def test_policy_verdicts_and_event():
    events = []
    services = Services(emit_event=lambda kind, body: events.append((kind, body)))
    policy = SignaturePolicy({"signatures": [sig({"pattern": ["AA", "BB"]})]}, services)
    session = keyboard_session()
    hit = policy.on_frame(session, bulk(b"\x81\xaa\xbb"))
    assert hit.kind is VerdictKind.DISABLE_DEVICE
    assert "s1" in hit.reason
    assert events and events[0][0] == "SignatureHit"
    miss = policy.on_frame(session, bulk(b"\x81\xaa"))
    assert miss.kind is VerdictKind.ALLOW


def test_policy_scans_connect_payload():
    blob = templates.keyboard().descriptor_blobs
    pattern = [f"{b:02X}" for b in blob[:4]]
    policy = SignaturePolicy({"signatures": [sig({"pattern": pattern, "anchor": {"AtOffset": 0}})]}, Services())
    session = DeviceSession.from_connect(1, blob)
    verdict = policy.on_connect(session)
    assert verdict.kind is VerdictKind.DISABLE_DEVICE
