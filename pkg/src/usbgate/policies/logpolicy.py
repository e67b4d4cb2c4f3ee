"""Logging policy: tap frames into the audit log at this chain position.

Placed first in a chain it captures raw device traffic (what replay and
signature derivation need); placed later it captures the sanitized view.
The gateway core separately records a verdict note for every processed
frame, so disables are never silent.
"""

from __future__ import annotations

from usbgate.engine import Policy, Verdict
from usbgate.session import DeviceSession
from usbgate.wire import Frame, FrameKind


class LogPolicy(Policy):
    name = "log"

    def on_connect(self, session: DeviceSession) -> Verdict:
        frame = Frame(FrameKind.DEVICE_CONNECT, session.device_id, 0, session.connect_payload)
        self.services.log_tap(session, frame)
        return Verdict.allow()

    def on_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        self.services.log_tap(session, frame)
        return Verdict.allow()
