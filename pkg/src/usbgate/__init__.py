"""usbgate: a desk-scale USB-peripheral firewall.

Device endpoints (emulated or adapter-wrapped) speak a framed encapsulation
protocol over TCP (optionally inside mutually-authenticated TLS) to a gateway
process.  The gateway folds every frame through configurable policy chains
(signature, compliance, containment, crypto-auth, logging) and forwards
surviving traffic to a protected sink.
"""

__version__ = "0.1.0"
