"""Policy chains: configuration loading, registration, and frame dispatch.

A chain is an ordered list of policy instances.  Each frame folds through
its device's chain: Allow continues, Rewrite replaces the payload and
continues, Redirect retargets the forwarding destination and continues,
Drop and DisableDevice are terminal.  An empty chain allows everything.

Chains are selected per device by the most specific matching selector
(vid/pid beats class beats default) when the device connects, and the
assignment sticks for the session's lifetime, including across config
hot-reloads.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable

from usbgate.session import DeviceSession
from usbgate.wire import MAX_PAYLOAD, Frame, FrameKind


class ConfigError(ValueError):
    """Configuration rejected at load time, with a location string."""


class RegistrationError(ValueError):
    """Duplicate policy name registered."""


class VerdictKind(Enum):
    ALLOW = "Allow"
    REWRITE = "Rewrite"
    DROP = "Drop"
    DISABLE_DEVICE = "DisableDevice"
    REDIRECT = "Redirect"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    reason: str = ""
    payload: bytes | None = None
    sink: str | None = None

    @classmethod
    def allow(cls) -> "Verdict":
        return cls(VerdictKind.ALLOW)

    @classmethod
    def rewrite(cls, payload: bytes, reason: str = "") -> "Verdict":
        return cls(VerdictKind.REWRITE, reason=reason, payload=payload)

    @classmethod
    def drop(cls, reason: str) -> "Verdict":
        return cls(VerdictKind.DROP, reason=reason)

    @classmethod
    def disable(cls, reason: str) -> "Verdict":
        return cls(VerdictKind.DISABLE_DEVICE, reason=reason)

    @classmethod
    def redirect(cls, sink: str, reason: str = "") -> "Verdict":
        return cls(VerdictKind.REDIRECT, reason=reason, sink=sink)

    @property
    def terminal(self) -> bool:
        return self.kind in (VerdictKind.DROP, VerdictKind.DISABLE_DEVICE)

    @property
    def forwards(self) -> bool:
        return not self.terminal


@dataclass
class Services:
    """Shared gateway facilities handed to policy constructors."""

    emit_event: Callable[[str, dict], None] = lambda kind, body: None
    log_tap: Callable[[DeviceSession, Frame], None] = lambda session, frame: None
    pending_store: object | None = None


class Policy:
    """Base class for chain policies.

    Policies must be deterministic given (session, frame, own config, and
    the shared decision store); they must not raise on traffic.
    """

    name = "policy"

    def __init__(self, params: dict, services: Services):
        self.params = params
        self.services = services

    def on_connect(self, session: DeviceSession) -> Verdict:
        return Verdict.allow()

    def on_frame(self, session: DeviceSession, frame: Frame) -> Verdict:
        return Verdict.allow()


_REGISTRY: dict[str, Callable[[dict, Services], Policy]] = {}


def register_policy(name: str, constructor: Callable[[dict, Services], Policy]) -> None:
    if name in _REGISTRY:
        raise RegistrationError(f"policy {name!r} already registered")
    _REGISTRY[name] = constructor


def registered_policies() -> list[str]:
    return sorted(_REGISTRY)


# ---------------------------------------------------------------------------
# Selectors


@dataclass(frozen=True)
class Selector:
    """Parsed device selector: vid/pid, class, or default."""

    raw: str
    vid: int | None = None
    pid: int | None = None
    dev_class: int | None = None

    @property
    def specificity(self) -> int:
        if self.vid is not None:
            return 2
        if self.dev_class is not None:
            return 1
        return 0

    def matches(self, session: DeviceSession) -> bool:
        if self.specificity == 0:
            return True
        if session.tree is None:
            return False
        device = session.tree.device
        if self.vid is not None:
            return device.idVendor == self.vid and device.idProduct == self.pid
        classes = {device.bDeviceClass} | {t[0] for t in session.tree.all_class_triples()}
        return self.dev_class in classes


def parse_selector(raw: str) -> Selector:
    if raw == "default":
        return Selector(raw)
    parts = raw.split(":")
    try:
        if len(parts) == 4 and parts[0] == "vid" and parts[2] == "pid":
            return Selector(raw, vid=int(parts[1], 16), pid=int(parts[3], 16))
        if len(parts) == 2 and parts[0] == "class":
            return Selector(raw, dev_class=int(parts[1], 16))
    except ValueError:
        pass
    raise ConfigError(
        f"selectors.{raw}: expected 'default', 'class:HH', or 'vid:VVVV:pid:PPPP'"
    )


# ---------------------------------------------------------------------------
# Chain sets


@dataclass
class ChainSet:
    chains: dict[str, list[Policy]]
    selectors: list[tuple[Selector, str]]  # specificity-then-declaration order

    def select(self, session: DeviceSession) -> str:
        for selector, chain in self.selectors:
            if selector.matches(session):
                return chain
        raise AssertionError("selector list always ends with default")  # pragma: no cover


def load_config(json_text: str, services: Services | None = None) -> ChainSet:
    services = services or Services()
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    chains_doc = doc.get("chains")
    selectors_doc = doc.get("selectors")
    if not isinstance(chains_doc, dict):
        raise ConfigError("chains: missing or not an object")
    if not isinstance(selectors_doc, dict):
        raise ConfigError("selectors: missing or not an object")

    chains: dict[str, list[Policy]] = {}
    for chain_name, items in chains_doc.items():
        if not isinstance(items, list):
            raise ConfigError(f"chains.{chain_name}: must be a list")
        instances: list[Policy] = []
        for i, item in enumerate(items):
            where = f"chains.{chain_name}[{i}]"
            if not isinstance(item, dict) or "policy" not in item:
                raise ConfigError(f"{where}: expected an object with a 'policy' key")
            pname = item["policy"]
            params = item.get("params", {})
            if not isinstance(params, dict):
                raise ConfigError(f"{where}: params must be an object")
            ctor = _REGISTRY.get(pname)
            if ctor is None:
                raise ConfigError(f"{where}: unknown policy {pname!r}")
            try:
                instances.append(ctor(params, services))
            except ConfigError as exc:
                raise ConfigError(f"{where}: {exc}") from None
        chains[chain_name] = instances

    selectors: list[tuple[Selector, str]] = []
    for raw, chain_name in selectors_doc.items():
        selector = parse_selector(raw)
        if chain_name not in chains:
            raise ConfigError(f"selectors.{raw}: references unknown chain {chain_name!r}")
        selectors.append((selector, chain_name))
    if not any(s.specificity == 0 for s, _ in selectors):
        raise ConfigError("selectors: a 'default' entry is required")
    # stable sort keeps declaration order within a specificity level
    selectors.sort(key=lambda pair: -pair[0].specificity)
    return ChainSet(chains=chains, selectors=selectors)


# ---------------------------------------------------------------------------
# Stats


class StatsStore:
    """Per-policy hit and verdict counters; survives config reloads."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._chains: dict[str, list[dict]] = {}
        self.totals = {k.value: 0 for k in VerdictKind}
        self.frames_total = 0

    def ensure_chain(self, chain: str, policy_names: list[str]) -> None:
        with self._lock:
            existing = self._chains.get(chain)
            if existing is None or [e["policy"] for e in existing] != policy_names:
                self._chains[chain] = [
                    {"policy": n, "hits": 0, "verdicts": {k.value: 0 for k in VerdictKind}}
                    for n in policy_names
                ]

    def hit(self, chain: str, index: int) -> None:
        with self._lock:
            self._chains[chain][index]["hits"] += 1

    def verdict(self, chain: str, index: int | None, kind: VerdictKind) -> None:
        with self._lock:
            if index is not None:
                self._chains[chain][index]["verdicts"][kind.value] += 1

    def final(self, kind: VerdictKind) -> None:
        with self._lock:
            self.totals[kind.value] += 1
            self.frames_total += 1

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "frames_total": self.frames_total,
                "verdict_totals": dict(self.totals),
                "chains": {
                    chain: [
                        {"policy": e["policy"], "hits": e["hits"], "verdicts": dict(e["verdicts"])}
                        for e in entries
                    ]
                    for chain, entries in self._chains.items()
                },
            }


# ---------------------------------------------------------------------------
# The engine


@dataclass
class Decision:
    verdict: Verdict
    policy: str | None  # which policy decided, None when the chain ran out
    frame: Frame  # after any rewrites
    chain: str | None = None
    invoked: int = 0


class PolicyEngine:
    """Folds frames through chains; owns chain selection and stats."""

    def __init__(self, chainset: ChainSet, stats: StatsStore | None = None):
        self.stats = stats or StatsStore()
        self._lock = threading.Lock()
        self.swap(chainset)

    def swap(self, chainset: ChainSet) -> None:
        """Atomically replace the chain set; live sessions keep their chains."""
        with self._lock:
            self._chainset = chainset
            for name, policies in chainset.chains.items():
                self.stats.ensure_chain(name, [p.name for p in policies])

    @property
    def chainset(self) -> ChainSet:
        with self._lock:
            return self._chainset

    def assign_chain(self, session: DeviceSession) -> None:
        chainset = self.chainset
        name = chainset.select(session)
        session.chain_name = name
        session.chain_policies = chainset.chains[name]

    def process(self, session: DeviceSession, frame: Frame) -> Decision:
        """Produce the chain's verdict for one frame.

        DeviceConnect frames always consult the chain (the connect event is
        what creates the session, disabled-at-parse included, and the chain
        owns the verdict).  For every other kind a Disabled session is an
        immediate Drop with zero policy invocations.
        """
        if frame.kind == FrameKind.DEVICE_CONNECT:
            if session.chain_policies is None:
                self.assign_chain(session)
            decision = self._fold(session, frame, connect=True)
        elif session.disabled:
            decision = Decision(
                Verdict.drop(f"device disabled: {session.disabled_reason}"), None, frame,
                chain=session.chain_name,
            )
        else:
            if session.chain_policies is None:
                self.assign_chain(session)
            decision = self._fold(session, frame, connect=False)
        if decision.verdict.kind is VerdictKind.DISABLE_DEVICE:
            session.disable(decision.verdict.reason)
        self.stats.final(decision.verdict.kind)
        return decision

    def _fold(self, session: DeviceSession, frame: Frame, connect: bool) -> Decision:
        chain = session.chain_name
        policies = session.chain_policies
        current = frame
        sink: str | None = None
        invoked = 0
        for index, policy in enumerate(policies):
            self.stats.hit(chain, index)
            invoked += 1
            verdict = policy.on_connect(session) if connect else policy.on_frame(session, current)
            self.stats.verdict(chain, index, verdict.kind)
            if verdict.kind is VerdictKind.REWRITE:
                if verdict.payload is None or len(verdict.payload) > MAX_PAYLOAD:
                    raise ValueError(f"policy {policy.name} produced an unencodable rewrite")
                current = replace(current, payload=verdict.payload)
            elif verdict.kind is VerdictKind.REDIRECT:
                sink = verdict.sink
            elif verdict.terminal:
                return Decision(verdict, policy.name, current, chain=chain, invoked=invoked)
        if sink is not None:
            return Decision(Verdict.redirect(sink), None, current, chain=chain, invoked=invoked)
        return Decision(Verdict.allow(), None, current, chain=chain, invoked=invoked)
