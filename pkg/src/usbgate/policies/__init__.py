"""Built-in policies; importing this package registers them by name."""

from usbgate.engine import register_policy
from usbgate.policies.compliance import CompliancePolicy
from usbgate.policies.containment import ContainmentPolicy
from usbgate.policies.cryptoauth import CryptoAuthPolicy
from usbgate.policies.logpolicy import LogPolicy
from usbgate.policies.signature import SignaturePolicy

register_policy("signature", SignaturePolicy)
register_policy("compliance", CompliancePolicy)
register_policy("containment", ContainmentPolicy)
register_policy("crypto", CryptoAuthPolicy)
register_policy("log", LogPolicy)
