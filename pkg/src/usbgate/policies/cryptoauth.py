"""Crypto policy: require TLS-authenticated transport for selected device
classes (or all devices).

Transport authentication happens at the TLS listener; sessions arriving
there carry the client certificate's subject.  This policy only enforces
the requirement: a device claiming a gated class over an unauthenticated
transport is disabled before any of its traffic is forwarded.
"""

from __future__ import annotations

from dataclasses import dataclass

from usbgate.engine import ConfigError, Policy, Services, Verdict
from usbgate.session import DeviceSession


@dataclass(frozen=True)
class AuthPolicy:
    require_all: bool
    require_classes: tuple[tuple[int, int | None, int | None], ...]
    trusted_ca: str | None
    reject_unauthenticated: bool

    @property
    def requires_tls_listener(self) -> bool:
        return self.require_all or bool(self.require_classes) or self.reject_unauthenticated


def _parse_triple(key: str) -> tuple[int, int | None, int | None]:
    parts = key.split(":")
    if len(parts) != 3:
        raise ConfigError(f"require_auth_for entry {key!r} must look like '03:*:*'")
    try:
        cls = int(parts[0], 16)
        sub = None if parts[1] == "*" else int(parts[1], 16)
        proto = None if parts[2] == "*" else int(parts[2], 16)
    except ValueError:
        raise ConfigError(f"require_auth_for entry {key!r} has a bad hex field") from None
    return (cls, sub, proto)


def parse_auth_policy(params: dict) -> AuthPolicy:
    raw = params.get("require_auth_for", [])
    require_all = raw == "all"
    classes: tuple = ()
    if not require_all:
        if not isinstance(raw, list):
            raise ConfigError("require_auth_for must be \"all\" or a list of class triples")
        classes = tuple(_parse_triple(k) for k in raw)
    return AuthPolicy(
        require_all=require_all,
        require_classes=classes,
        trusted_ca=params.get("trusted_ca"),
        reject_unauthenticated=bool(params.get("reject_unauthenticated", False)),
    )


class CryptoAuthPolicy(Policy):
    name = "crypto"

    def __init__(self, params: dict, services: Services):
        super().__init__(params, services)
        self.auth = parse_auth_policy(params)

    def on_connect(self, session: DeviceSession) -> Verdict:
        if session.authenticated:
            return Verdict.allow()
        if self.auth.reject_unauthenticated or self.auth.require_all:
            return Verdict.disable("crypto: unauthenticated device rejected")
        if session.tree is None:
            return Verdict.allow()  # unparseable claims are compliance's problem
        claimed = session.tree.all_class_triples()
        for cls, sub, proto in self.auth.require_classes:
            for c, s, p in claimed:
                if c == cls and sub in (None, s) and proto in (None, p):
                    return Verdict.disable(
                        f"crypto: class {cls:#04x} requires an authenticated device"
                    )
        return Verdict.allow()
