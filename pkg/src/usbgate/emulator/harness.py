"""Drives emulated devices against a gateway and scores the outcomes.

An attach is scored Admitted when the device's connect reached the blue
sink and nothing the device sent was dropped or got it disabled; Blocked
outcomes carry the verdict reason and which mechanism decided (signature,
compliance, assertion, containment, crypto).  Transport failures raise
HarnessError and are never counted as Blocked.
"""

from __future__ import annotations

import socket
import ssl
import time
from dataclasses import dataclass

from usbgate.core import GatewayCore
from usbgate.emulator.generate import ControlStep, DataStep, EmulatedDevice
from usbgate.engine import Decision
from usbgate.wire import (
    Frame,
    FrameKind,
    encode_frame,
    pack_control,
    pack_data,
    pack_result,
)


class HarnessError(Exception):
    """Transport-level failure, distinct from a policy block."""


@dataclass(frozen=True)
class TlsClientCreds:
    ca: str
    cert: str
    key: str


@dataclass
class Outcome:
    device_id: int
    admitted: bool
    reason: str | None = None
    blocked_by: str | None = None
    seed: int | None = None
    label_code: str | None = None

    @property
    def blocked(self) -> bool:
        return not self.admitted


def attribution(policy: str | None, reason: str) -> str:
    """Name the deciding mechanism; the compliance policy hosts two."""
    if policy == "compliance" or (policy is None and reason.startswith(("compliance:", "assertion:"))):
        return "assertion" if reason.startswith("assertion:") else "compliance"
    if policy:
        return policy
    for prefix in ("signature", "compliance", "assertion", "containment", "crypto"):
        if reason.startswith(prefix + ":"):
            return prefix
    return "gateway"


def attach_frames(device: EmulatedDevice, device_id: int) -> list[Frame]:
    """The frame sequence this device produces for one attach."""
    frames = [Frame(FrameKind.DEVICE_CONNECT, device_id, 0, device.descriptor_blobs)]
    tid = 0
    for step in device.script:
        tid += 1
        if isinstance(step, ControlStep):
            frames.append(
                Frame(
                    FrameKind.CONTROL_TRANSFER,
                    device_id,
                    tid,
                    pack_control(step.setup.to_bytes(), step.data_stage),
                )
            )
            frames.append(
                Frame(FrameKind.TRANSFER_RESULT, device_id, tid, pack_result(step.status, step.response))
            )
        elif isinstance(step, DataStep):
            frames.append(Frame(step.kind, device_id, tid, pack_data(step.endpoint, step.data)))
    return frames


# ---------------------------------------------------------------------------
# In-process harness (the fast path: frames straight into a core)


def run_attach_local(
    device: EmulatedDevice, core: GatewayCore, device_id: int, conn_id: str = "local"
) -> Outcome:
    decisions: list[Decision] = []
    for frame in attach_frames(device, device_id):
        decisions.append(core.handle_frame(conn_id, frame))
    return _score_decisions(device, device_id, decisions)


def _score_decisions(device: EmulatedDevice, device_id: int, decisions: list[Decision]) -> Outcome:
    for decision in decisions:
        if decision.verdict.terminal:
            return Outcome(
                device_id=device_id,
                admitted=False,
                reason=decision.verdict.reason,
                blocked_by=attribution(decision.policy, decision.verdict.reason),
                seed=device.seed,
                label_code=device.label.code if device.label else None,
            )
    return Outcome(
        device_id=device_id,
        admitted=True,
        seed=device.seed,
        label_code=device.label.code if device.label else None,
    )


# ---------------------------------------------------------------------------
# Network harness


class EndpointConnection:
    """One device-endpoint connection (plaintext or mutually-authed TLS)."""

    def __init__(
        self,
        address: tuple[str, int],
        tls: TlsClientCreds | None = None,
        server_hostname: str = "localhost",
        timeout: float = 5.0,
    ):
        try:
            sock = socket.create_connection(address, timeout=timeout)
        except OSError as exc:
            raise HarnessError(f"connect to {address} failed: {exc}") from exc
        if tls is not None:
            context = ssl.SSLContext(ssl.PROTOCOL_TLS_CLIENT)
            context.minimum_version = ssl.TLSVersion.TLSv1_2
            context.load_verify_locations(tls.ca)
            context.load_cert_chain(tls.cert, tls.key)
            try:
                sock = context.wrap_socket(sock, server_hostname=server_hostname)
            except (ssl.SSLError, OSError) as exc:
                sock.close()
                raise HarnessError(f"TLS handshake failed: {exc}") from exc
        self.sock = sock

    def send_frames(self, frames: list[Frame]) -> None:
        data = b"".join(encode_frame(f) for f in frames)
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise HarnessError(f"send failed: {exc}") from exc

    def hello(self) -> None:
        self.send_frames([Frame(FrameKind.HELLO)])

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def __enter__(self) -> "EndpointConnection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _wait_for(predicate, timeout: float = 5.0, interval: float = 0.005) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval)
    return predicate()


def _score_via_core(
    device: EmulatedDevice,
    device_id: int,
    core: GatewayCore,
    sink,
    sessions_map: dict | None = None,
    seen: set | None = None,
    pending_ids: set | None = None,
) -> Outcome:
    if sessions_map is not None:
        session = sessions_map.get(device_id)
    else:
        sessions = core.devices_json(device_id)
        session = sessions[-1] if sessions else None
    if seen is None:
        seen = sink.devices_seen() if sink is not None else set()
    if session is not None and session["disabled_reason"]:
        reason = session["disabled_reason"]
        return Outcome(
            device_id=device_id,
            admitted=False,
            reason=reason,
            blocked_by=attribution(None, reason),
            seed=device.seed,
            label_code=device.label.code if device.label else None,
        )
    if sink is not None and device_id not in seen:
        if pending_ids is None:
            pending_ids = {d["device_id"] for d in core.services.pending_store.snapshot()}
        pending = device_id in pending_ids
        reason = "containment: decision pending" if pending else "connect not forwarded"
        return Outcome(
            device_id=device_id,
            admitted=False,
            reason=reason,
            blocked_by="containment" if pending else "gateway",
            seed=device.seed,
            label_code=device.label.code if device.label else None,
        )
    return Outcome(
        device_id=device_id,
        admitted=True,
        seed=device.seed,
        label_code=device.label.code if device.label else None,
    )


def run_attach(
    device: EmulatedDevice,
    address: tuple[str, int],
    core: GatewayCore,
    sink,
    device_id: int = 1,
    tls: TlsClientCreds | None = None,
) -> Outcome:
    """Attach one device over the network and score the outcome.

    The gateway runs in-process for tests, so verdict details come straight
    from its core (the control API serves the same JSON out of process).
    """
    with EndpointConnection(address, tls=tls) as conn:
        baseline = _count_hellos(sink)
        conn.send_frames(attach_frames(device, device_id))
        conn.hello()
        if not _wait_for(lambda: _count_hellos(sink) > baseline):
            raise HarnessError("gateway did not finish processing the attach (no barrier)")
        return _score_via_core(device, device_id, core, sink)


def _count_hellos(sink) -> int:
    return sum(1 for f in sink.snapshot() if f.kind == FrameKind.HELLO)


def fuzz_sweep(
    devices: list[tuple[int, EmulatedDevice]],
    address: tuple[str, int],
    core: GatewayCore,
    sink,
    tls: TlsClientCreds | None = None,
    batch: int = 200,
) -> list[Outcome]:
    """Attach many devices over one connection; returns one Outcome each.

    devices is a list of (device_id, device); the caller picks ids (unique
    per sweep).  Frames are batched to keep 10^4-device sweeps quick.
    """
    with EndpointConnection(address, tls=tls) as conn:
        baseline = _count_hellos(sink)
        pending: list[Frame] = []
        for device_id, device in devices:
            pending.extend(attach_frames(device, device_id))
            if len(pending) >= batch:
                conn.send_frames(pending)
                pending.clear()
        conn.send_frames(pending)
        conn.hello()
        if not _wait_for(lambda: _count_hellos(sink) > baseline, timeout=120.0):
            raise HarnessError("gateway did not drain the sweep (no barrier)")
        sessions_map = core.sessions_by_device()
        seen = sink.devices_seen()
        pending_ids = {d["device_id"] for d in core.services.pending_store.snapshot()}
        return [
            _score_via_core(
                device, device_id, core, sink,
                sessions_map=sessions_map, seen=seen, pending_ids=pending_ids,
            )
            for device_id, device in devices
        ]


def remote_sweep(
    devices: list[tuple[int, EmulatedDevice]],
    gateway_addr: tuple[str, int],
    control_addr: tuple[str, int],
    tls: TlsClientCreds | None = None,
    settle_s: float = 0.5,
) -> list[Outcome]:
    """Sweep against a remote gateway, scoring through its control API.

    Without sink access, a device counts as admitted when its session is
    alive, not disabled, and not held pending; the connection stays open
    while the inventory is read.
    """
    import json as _json
    import urllib.request

    def get(path: str):
        url = f"http://{control_addr[0]}:{control_addr[1]}{path}"
        with urllib.request.urlopen(url, timeout=10) as resp:
            return _json.load(resp)

    with EndpointConnection(gateway_addr, tls=tls) as conn:
        batch: list[Frame] = []
        for device_id, device in devices:
            batch.extend(attach_frames(device, device_id))
            if len(batch) >= 200:
                conn.send_frames(batch)
                batch.clear()
        conn.send_frames(batch)
        before = get("/v1/stats")["frames_total"]
        deadline = time.monotonic() + 120
        while time.monotonic() < deadline:
            time.sleep(settle_s)
            now = get("/v1/stats")["frames_total"]
            if now == before:
                break
            before = now
        sessions = {d["device_id"]: d for d in get("/v1/devices")}
        pending_ids = {d["device_id"] for d in get("/v1/pending") if d["state"] == "Pending"}
        outcomes = []
        for device_id, device in devices:
            session = sessions.get(device_id)
            label = device.label.code if device.label else None
            if session is not None and session["disabled_reason"]:
                outcomes.append(
                    Outcome(
                        device_id=device_id,
                        admitted=False,
                        reason=session["disabled_reason"],
                        blocked_by=attribution(None, session["disabled_reason"]),
                        seed=device.seed,
                        label_code=label,
                    )
                )
            elif device_id in pending_ids or session is None:
                outcomes.append(
                    Outcome(
                        device_id=device_id,
                        admitted=False,
                        reason="held pending" if device_id in pending_ids else "no session",
                        blocked_by="containment" if device_id in pending_ids else "gateway",
                        seed=device.seed,
                        label_code=label,
                    )
                )
            else:
                outcomes.append(
                    Outcome(device_id=device_id, admitted=True, seed=device.seed, label_code=label)
                )
        return outcomes
