"""Containment policy: per-function hotplug control with an operator in the
loop, plus redirection of selected functions to an alternate sink.

A function is a group of interfaces (one interface-association descriptor's
span, else a single interface).  Each function gets a disposition: allow,
deny, redirect(<sink>), or deny-pending.  Deny-pending holds the device
(nothing buffered, nothing forwarded) until the decision is resolved through
the control API; the device then re-enumerates and the stored resolution
applies.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field

from usbgate.descriptors import CLASS_NAMES, parse_setup
from usbgate.engine import ConfigError, Policy, Services, Verdict
from usbgate.session import DeviceSession
from usbgate.wire import DATA_TRANSFER_KINDS, Frame, FrameKind, unpack_data

ALLOW = "allow"
DENY = "deny"
DENY_PENDING = "deny-pending"


class ResolveError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceFunction:
    function_id: str  # "fn<lowest interface number>"
    interfaces: tuple[int, ...]
    class_triple: tuple[int, int, int]
    label: str


@dataclass
class PendingDecision:
    decision_id: str
    device_id: int
    device_key: str
    functions: list[DeviceFunction]
    proposed: dict[str, str]  # function_id -> disposition at creation time
    created_at: float
    resolved: bool = False
    resolutions: dict[str, str] = field(default_factory=dict)

    def as_json(self) -> dict:
        return {
            "decision_id": self.decision_id,
            "device_id": self.device_id,
            "functions": [
                {
                    "function_id": f.function_id,
                    "interfaces": list(f.interfaces),
                    "class": list(f.class_triple),
                    "label": f.label,
                    "proposed": self.proposed[f.function_id],
                    "resolution": self.resolutions.get(f.function_id),
                }
                for f in self.functions
            ],
            "created_at": self.created_at,
            "state": "Resolved" if self.resolved else "Pending",
        }


class PendingStore:
    """Shared decision store: the policy writes at connect, the control API
    writes at resolve; replay can preseed recorded resolutions."""

    def __init__(self, preset: dict[str, dict[str, str]] | None = None, clock=time.time):
        self._lock = threading.Lock()
        self._clock = clock
        self._ids = itertools.count(1)
        self.decisions: dict[str, PendingDecision] = {}
        self._resolved_by_key: dict[str, dict[str, str]] = dict(preset or {})
        self.on_created = lambda decision: None
        self.on_resolved = lambda decision: None

    def resolution_for(self, device_key: str) -> dict[str, str] | None:
        with self._lock:
            resolved = self._resolved_by_key.get(device_key)
            return dict(resolved) if resolved is not None else None

    def pending_for(self, device_key: str) -> PendingDecision | None:
        with self._lock:
            for decision in self.decisions.values():
                if decision.device_key == device_key and not decision.resolved:
                    return decision
        return None

    def create(
        self,
        device_id: int,
        device_key: str,
        functions: list[DeviceFunction],
        proposed: dict[str, str],
    ) -> PendingDecision:
        with self._lock:
            decision = PendingDecision(
                decision_id=f"d{next(self._ids)}",
                device_id=device_id,
                device_key=device_key,
                functions=functions,
                proposed=proposed,
                created_at=self._clock(),
            )
            self.decisions[decision.decision_id] = decision
        self.on_created(decision)
        return decision

    def resolve(self, decision_id: str, dispositions: dict[str, str]) -> PendingDecision:
        with self._lock:
            decision = self.decisions.get(decision_id)
            if decision is None:
                raise ResolveError(f"unknown decision {decision_id!r}")
            if decision.resolved:
                raise ResolveError(f"decision {decision_id} already resolved")
            valid_ids = {f.function_id for f in decision.functions}
            resolutions: dict[str, str] = {}
            for fid, disposition in dispositions.items():
                if fid not in valid_ids:
                    raise ResolveError(f"unknown function {fid!r} in decision {decision_id}")
                if disposition not in (ALLOW, DENY) and not disposition.startswith("redirect:"):
                    raise ResolveError(f"bad disposition {disposition!r} for {fid}")
                resolutions[fid] = disposition
            for fid in valid_ids - set(resolutions):
                resolutions[fid] = DENY  # unresolved functions stay denied
            decision.resolved = True
            decision.resolutions = resolutions
            self._resolved_by_key[decision.device_key] = resolutions
        self.on_resolved(decision)
        return decision

    def expire_stale(self, timeout_s: float, fallback: str) -> None:
        """Resolve pending decisions older than timeout_s to the fallback."""
        with self._lock:
            cutoff = self._clock() - timeout_s
            stale = [
                d
                for d in self.decisions.values()
                if not d.resolved and d.created_at <= cutoff
            ]
            for decision in stale:
                decision.resolved = True
                decision.resolutions = {f.function_id: fallback for f in decision.functions}
                self._resolved_by_key[decision.device_key] = decision.resolutions
        for decision in stale:
            self.on_resolved(decision)

    def snapshot(self) -> list[dict]:
        with self._lock:
            return [d.as_json() for d in self.decisions.values()]


def derive_functions(session: DeviceSession) -> list[DeviceFunction]:
    config = session.claimed_config()
    if config is None:
        return []
    functions = []
    for group in config.function_groups():
        lead = config.interface(group[0]) or config.interfaces[0]
        triple = lead.class_triple
        label = CLASS_NAMES.get(triple[0], f"class {triple[0]:#04x}")
        functions.append(
            DeviceFunction(
                function_id=f"fn{group[0]}",
                interfaces=tuple(group),
                class_triple=triple,
                label=label,
            )
        )
    return functions


def device_key(session: DeviceSession) -> str:
    tree = session.tree
    if tree is None:
        return f"dev{session.device_id}"
    return f"dev{session.device_id}:{tree.device.idVendor:04x}:{tree.device.idProduct:04x}"


class ContainmentPolicy(Policy):
    name = "containment"

    def __init__(self, params: dict, services: Services):
        super().__init__(params, services)
        self.default = params.get("default_disposition", ALLOW)
        if self.default not in (ALLOW, DENY, DENY_PENDING):
            raise ConfigError(f"default_disposition must be allow/deny/deny-pending, not {self.default!r}")
        self.timeout_s = params.get("decision_timeout_s")
        self.timeout_disposition = params.get("timeout_disposition", DENY)
        self.class_rules: list[tuple[tuple, str]] = []
        for key, disposition in params.get("class_rules", {}).items():
            triple = _parse_class_key(key)
            if disposition not in (ALLOW, DENY, DENY_PENDING) and not disposition.startswith("redirect:"):
                raise ConfigError(f"class_rules[{key}]: bad disposition {disposition!r}")
            self.class_rules.append((triple, disposition))
        self.redirect_sinks: dict[str, str] = {}
        for name, addr in params.get("redirect_sinks", {}).items():
            host, _, port = addr.rpartition(":")
            if not host or not port.isdigit():
                raise ConfigError(f"redirect_sinks[{name}]: address must be host:port, got {addr!r}")
            self.redirect_sinks[name] = addr
        for _, disposition in self.class_rules:
            self._check_redirect(disposition)
        if self.store is None:
            self.services.pending_store = PendingStore()

    @property
    def store(self) -> PendingStore | None:
        return self.services.pending_store

    def _check_redirect(self, disposition: str) -> None:
        if disposition.startswith("redirect:"):
            sink = disposition.split(":", 1)[1]
            if sink not in self.redirect_sinks:
                raise ConfigError(f"redirect target {sink!r} not in redirect_sinks")

    def _rule_disposition(self, triple: tuple[int, int, int]) -> str | None:
        best = None
        best_score = -1
        for (cls, sub, proto), disposition in self.class_rules:
            if cls != triple[0]:
                continue
            if sub is not None and sub != triple[1]:
                continue
            if proto is not None and proto != triple[2]:
                continue
            score = (sub is not None) + (proto is not None)
            if score > best_score:
                best, best_score = disposition, score
        return best

    # -- connect -----------------------------------------------------------

    def on_connect(self, session: DeviceSession) -> Verdict:
        functions = derive_functions(session)
        if not functions:
            return Verdict.allow()  # nothing to gate; compliance owns bad trees
        if self.timeout_s is not None:
            self.store.expire_stale(self.timeout_s, self.timeout_disposition)

        key = device_key(session)
        resolved = self.store.resolution_for(key) or {}
        dispositions: dict[str, str] = {}
        for fn in functions:
            disposition = resolved.get(fn.function_id)
            if disposition is None:
                disposition = self._rule_disposition(fn.class_triple) or self.default
            dispositions[fn.function_id] = disposition

        session.notes["containment"] = {
            "functions": {fn.function_id: fn for fn in functions},
            "dispositions": dispositions,
            "interface_map": {
                itf: fn.function_id for fn in functions for itf in fn.interfaces
            },
        }

        if any(d == DENY_PENDING for d in dispositions.values()):
            if self.store.pending_for(key) is None:
                self.store.create(session.device_id, key, functions, dispositions)
            return Verdict.drop(f"containment: decision pending for {key}")
        if all(d == DENY for d in dispositions.values()):
            return Verdict.drop("containment: all functions denied")
        redirects = {d.split(":", 1)[1] for d in dispositions.values() if d.startswith("redirect:")}
        if redirects and all(d.startswith("redirect:") for d in dispositions.values()) and len(redirects) == 1:
            return Verdict.redirect(redirects.pop(), reason="containment: device redirected")
        return Verdict.allow()

    # -- traffic -------------------------------------------------------------

    def on_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        notes = session.notes.get("containment")
        if notes is None:
            return Verdict.allow()
        if any(d == DENY_PENDING for d in notes["dispositions"].values()):
            # the whole device stays held until the decision resolves
            return Verdict.drop("containment: decision pending")
        interface = self._frame_interface(session, frame)
        if interface is None:
            # device-scoped traffic (standard enumeration) serves whatever
            # functions are allowed; with none, the device stays invisible
            if any(
                d == ALLOW or d.startswith("redirect:") for d in notes["dispositions"].values()
            ):
                return Verdict.allow()
            return Verdict.drop("containment: no allowed function")
        function_id = notes["interface_map"].get(interface)
        if function_id is None:
            return Verdict.allow()
        disposition = notes["dispositions"][function_id]
        if disposition == ALLOW:
            return Verdict.allow()
        if disposition.startswith("redirect:"):
            return Verdict.redirect(disposition.split(":", 1)[1], reason=f"containment: {function_id}")
        return Verdict.drop(f"containment: function {function_id} {disposition}")

    def _frame_interface(self, session: DeviceSession, frame: Frame) -> int | None:
        config = session.claimed_config()
        if config is None:
            return None
        if frame.kind in DATA_TRANSFER_KINDS:
            endpoint, _ = unpack_data(frame.payload)
            return config.endpoint_interface(endpoint)
        if frame.kind == FrameKind.CONTROL_TRANSFER and len(frame.payload) >= 8:
            setup = parse_setup(frame.payload[:8])
            if setup.recipient == 1:  # interface
                return setup.wIndex & 0xFF
            if setup.recipient == 2:  # endpoint
                return config.endpoint_interface(setup.wIndex & 0xFF)
        return None


def _parse_class_key(key: str) -> tuple[int, int | None, int | None]:
    parts = key.split(":")
    if len(parts) != 3:
        raise ConfigError(f"class_rules key {key!r} must look like '08:06:50' or '08:*:*'")
    try:
        cls = int(parts[0], 16)
        sub = None if parts[1] == "*" else int(parts[1], 16)
        proto = None if parts[2] == "*" else int(parts[2], 16)
    except ValueError:
        raise ConfigError(f"class_rules key {key!r} has a bad hex field") from None
    return (cls, sub, proto)
