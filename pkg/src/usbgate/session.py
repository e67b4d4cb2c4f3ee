"""Per-device connection state: the USB visible-state machine plus the
enumeration transcript.

A session is created from a DeviceConnect payload and then checks every
subsequent control request, transfer result, and data transfer against the
device's connect-time claims.  State transitions are applied when the request
is seen (the transcript narrates requests the host issued); legal moves:

    Default -> Address      SET_ADDRESS with address 1..127
    Address -> Configured   SET_CONFIGURATION with a claimed nonzero value
    Configured -> Address   SET_CONFIGURATION 0
    any -> Disabled         one-way, absorbing

Checks raise ViolationError; deciding what a violation means for traffic
(disable, rewrite) is the policy layer's job.  The one exception is
connect-time parsing: a fatal violation there creates the session directly
in Disabled.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from usbgate.descriptors import (
    DT_CONFIG,
    DT_DEVICE,
    DT_STRING,
    REQ_GET_DESCRIPTOR,
    REQ_SET_ADDRESS,
    REQ_SET_CONFIGURATION,
    ConfigTree,
    DescriptorTree,
    SetupPacket,
    Violation,
    ViolationCode,
    ViolationError,
    parse_descriptor_blobs,
    parse_string_descriptor,
)
from usbgate.wire import (
    DATA_TRANSFER_KINDS,
    STATUS_ACK,
    FrameKind,
)

# frame kind -> required endpoint transfer type (bmAttributes & 0x3)
_KIND_TO_EP_TYPE = {
    FrameKind.BULK_TRANSFER: 2,
    FrameKind.INTERRUPT_TRANSFER: 3,
    FrameKind.ISO_TRANSFER: 1,
}

# transfers are URB-scale aggregates, so allow payloads well beyond a single
# bus packet, but keep them proportional to the endpoint's claimed size
BATCH_FACTOR = 1024


class DeviceState(Enum):
    ATTACHED = "Attached"
    POWERED = "Powered"
    DEFAULT = "Default"
    ADDRESS = "Address"
    CONFIGURED = "Configured"
    DISABLED = "Disabled"


def _state_error(detail: str) -> ViolationError:
    return ViolationError(Violation(ViolationCode.STATE_ERROR, detail))


def _overrun(detail: str) -> ViolationError:
    return ViolationError(Violation(ViolationCode.RESPONSE_OVERRUN, detail))


def _drift(detail: str) -> ViolationError:
    return ViolationError(Violation(ViolationCode.LENGTH_MISMATCH, f"claim drift: {detail}"))


@dataclass
class DeviceSession:
    device_id: int
    state: DeviceState = DeviceState.DEFAULT
    address: int = 0
    tree: DescriptorTree | None = None
    connect_payload: bytes = b""
    connect_violations: list[Violation] = field(default_factory=list)
    active_config: int | None = None
    last_setup: SetupPacket | None = None
    last_transfer_id: int = 0
    auth_subject: str | None = None  # TLS peer subject, or None when plaintext
    disabled_reason: str | None = None
    # engine-managed: sticky chain assignment for the session's lifetime
    chain_name: str | None = None
    chain_policies: list | None = None
    # policy scratch space (containment dispositions, etc.)
    notes: dict = field(default_factory=dict)

    @classmethod
    def from_connect(cls, device_id: int, blobs: bytes, auth_subject: str | None = None) -> "DeviceSession":
        """Parse connect-time claims; fatal violations disable the session."""
        session = cls(device_id=device_id, auth_subject=auth_subject, connect_payload=blobs)
        try:
            session.tree = parse_descriptor_blobs(blobs)
        except ViolationError as exc:
            session.connect_violations = exc.violations
            if exc.fatal:
                session.disable(str(exc.first))
        return session

    @property
    def disabled(self) -> bool:
        return self.state is DeviceState.DISABLED

    @property
    def authenticated(self) -> bool:
        return self.auth_subject is not None

    def disable(self, reason: str) -> None:
        if not self.disabled:
            self.state = DeviceState.DISABLED
            self.disabled_reason = reason

    # -- claims ------------------------------------------------------------

    def claimed_config(self) -> ConfigTree | None:
        """The active configuration, or the first claimed one pre-SET_CONFIGURATION."""
        if self.tree is None:
            return None
        if self.active_config is not None:
            return self.tree.config_by_value(self.active_config)
        return self.tree.configs[0] if self.tree.configs else None

    # -- transcript checks ---------------------------------------------------

    def _guard(self) -> None:
        if self.disabled:
            raise _state_error("frame for a disabled device")
        if self.tree is None:
            raise _state_error("traffic before a successful connect")

    def note_transfer_id(self, transfer_id: int) -> None:
        if transfer_id <= self.last_transfer_id:
            raise _state_error(
                f"transfer_id {transfer_id} not strictly above {self.last_transfer_id}"
            )
        self.last_transfer_id = transfer_id

    def on_control(self, setup: SetupPacket) -> None:
        """Validate a control request against state and connect-time claims."""
        self._guard()
        if self.last_setup is not None:
            raise _state_error("control transfer while a response is pending")

        if setup.is_standard(REQ_SET_ADDRESS):
            if self.state is not DeviceState.DEFAULT:
                raise _state_error(f"SET_ADDRESS in state {self.state.value}")
            if not 1 <= setup.wValue <= 127:
                raise _state_error(f"SET_ADDRESS with address {setup.wValue}")
            if setup.wIndex != 0 or setup.wLength != 0:
                raise _state_error("SET_ADDRESS with nonzero wIndex/wLength")
            self.state = DeviceState.ADDRESS
            self.address = setup.wValue
        elif setup.is_standard(REQ_SET_CONFIGURATION):
            if self.state not in (DeviceState.ADDRESS, DeviceState.CONFIGURED):
                raise _state_error(f"SET_CONFIGURATION in state {self.state.value}")
            value = setup.wValue
            if value == 0:
                self.state = DeviceState.ADDRESS
                self.active_config = None
            elif self.tree.config_by_value(value) is not None:
                self.state = DeviceState.CONFIGURED
                self.active_config = value
            else:
                raise _state_error(f"SET_CONFIGURATION with unknown value {value}")
        elif setup.is_standard(REQ_GET_DESCRIPTOR):
            if setup.descriptor_type == DT_STRING:
                index = setup.descriptor_index
                if index != 0 and index not in self.tree.claimed_string_indices():
                    raise _state_error(f"GET_DESCRIPTOR for unclaimed string index {index}")
            elif setup.descriptor_type == DT_CONFIG:
                if setup.descriptor_index >= len(self.tree.configs):
                    raise _state_error(
                        f"GET_DESCRIPTOR for config index {setup.descriptor_index} beyond claims"
                    )

        self.last_setup = setup

    def on_response(self, status: int, data: bytes, transfer_id: int | None = None) -> None:
        """Validate a transfer result against the pending control request."""
        self._guard()
        setup = self.last_setup
        if setup is None:
            raise _state_error("transfer result with no pending control request")
        if transfer_id is not None and transfer_id != self.last_transfer_id:
            self.last_setup = None
            raise _state_error(
                f"transfer result id {transfer_id} does not match request {self.last_transfer_id}"
            )
        self.last_setup = None

        if status != STATUS_ACK:
            if data:
                raise _overrun(f"{len(data)} data bytes on a non-ACK result")
            return
        if not setup.direction_in:
            if data:
                raise _overrun(f"{len(data)} data bytes on an OUT transfer result")
            return
        if len(data) > setup.wLength:
            raise _overrun(f"reply of {len(data)} bytes to a request for {setup.wLength}")

        if setup.is_standard(REQ_GET_DESCRIPTOR):
            self._check_descriptor_reply(setup, data)

    def _check_descriptor_reply(self, setup: SetupPacket, data: bytes) -> None:
        dtype = setup.descriptor_type
        if dtype == DT_DEVICE:
            if data != self.tree.raw_device[: len(data)]:
                raise _drift("device descriptor reply differs from connect-time claims")
        elif dtype == DT_CONFIG:
            index = setup.descriptor_index
            claimed = self.tree.raw_configs[index]
            if data != claimed[: len(data)]:
                raise _drift(f"config {index} reply differs from connect-time claims")
        elif dtype == DT_STRING and data:
            # an empty ACK reply carries nothing to validate
            parse_string_descriptor(data)  # BadString (fixable) propagates

    def on_data_transfer(self, kind: FrameKind, endpoint_address: int, data_len: int) -> None:
        """Validate a bulk/interrupt/iso transfer against the active config."""
        self._guard()
        assert kind in DATA_TRANSFER_KINDS
        if self.state is not DeviceState.CONFIGURED:
            raise _state_error(f"{kind.name} in state {self.state.value}")
        config = self.tree.config_by_value(self.active_config)
        ep = config.find_endpoint(endpoint_address)
        if ep is None:
            raise ViolationError(
                Violation(
                    ViolationCode.BAD_ENDPOINT,
                    f"transfer on undeclared endpoint {endpoint_address:#04x}",
                )
            )
        if ep.transfer_type != _KIND_TO_EP_TYPE[kind]:
            raise ViolationError(
                Violation(
                    ViolationCode.BAD_ENDPOINT,
                    f"{kind.name} on endpoint {endpoint_address:#04x} declared "
                    f"type {ep.transfer_type}",
                )
            )
        cap = ep.max_packet_size * BATCH_FACTOR
        if data_len > cap:
            raise ViolationError(
                Violation(
                    ViolationCode.BAD_ENDPOINT,
                    f"payload of {data_len} bytes exceeds batching cap {cap} "
                    f"for endpoint {endpoint_address:#04x}",
                )
            )
