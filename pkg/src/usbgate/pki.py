"""Test PKI generation for the TLS overlay: a trusted CA signing gateway and
device-adapter leaves, plus a second CA for negative tests."""

from __future__ import annotations

import datetime
import ipaddress
import os
from dataclasses import dataclass

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID


@dataclass(frozen=True)
class PkiPaths:
    directory: str
    ca_cert: str
    ca_key: str
    gateway_cert: str
    gateway_key: str
    device_cert: str
    device_key: str
    untrusted_ca_cert: str
    untrusted_device_cert: str
    untrusted_device_key: str


def _name(cn: str) -> x509.Name:
    return x509.Name(
        [
            x509.NameAttribute(NameOID.ORGANIZATION_NAME, "usbgate test pki"),
            x509.NameAttribute(NameOID.COMMON_NAME, cn),
        ]
    )


def _write_key(path: str, key) -> None:
    with open(path, "wb") as fh:
        fh.write(
            key.private_bytes(
                serialization.Encoding.PEM,
                serialization.PrivateFormat.PKCS8,
                serialization.NoEncryption(),
            )
        )


def _write_cert(path: str, cert: x509.Certificate) -> None:
    with open(path, "wb") as fh:
        fh.write(cert.public_bytes(serialization.Encoding.PEM))


def _make_ca(cn: str):
    key = ec.generate_private_key(ec.SECP256R1())
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(_name(cn))
        .issuer_name(_name(cn))
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .sign(key, hashes.SHA256())
    )
    return key, cert


def _make_leaf(cn: str, ca_key, ca_cert, server: bool):
    key = ec.generate_private_key(ec.SECP256R1())
    now = datetime.datetime.now(datetime.timezone.utc)
    eku = ExtendedKeyUsageOID.SERVER_AUTH if server else ExtendedKeyUsageOID.CLIENT_AUTH
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(cn))
        .issuer_name(ca_cert.subject)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=365))
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(x509.ExtendedKeyUsage([eku]), critical=False)
    )
    if server:
        builder = builder.add_extension(
            x509.SubjectAlternativeName(
                [
                    x509.DNSName("localhost"),
                    x509.IPAddress(ipaddress.ip_address("127.0.0.1")),
                ]
            ),
            critical=False,
        )
    return key, builder.sign(ca_key, hashes.SHA256())


def make_test_pki(directory: str) -> PkiPaths:
    os.makedirs(directory, exist_ok=True)
    paths = PkiPaths(
        directory=directory,
        ca_cert=os.path.join(directory, "ca.pem"),
        ca_key=os.path.join(directory, "ca.key"),
        gateway_cert=os.path.join(directory, "gateway.pem"),
        gateway_key=os.path.join(directory, "gateway.key"),
        device_cert=os.path.join(directory, "device.pem"),
        device_key=os.path.join(directory, "device.key"),
        untrusted_ca_cert=os.path.join(directory, "untrusted-ca.pem"),
        untrusted_device_cert=os.path.join(directory, "untrusted-device.pem"),
        untrusted_device_key=os.path.join(directory, "untrusted-device.key"),
    )
    ca_key, ca_cert = _make_ca("usbgate test CA")
    _write_key(paths.ca_key, ca_key)
    _write_cert(paths.ca_cert, ca_cert)

    gw_key, gw_cert = _make_leaf("usbgate gateway", ca_key, ca_cert, server=True)
    _write_key(paths.gateway_key, gw_key)
    _write_cert(paths.gateway_cert, gw_cert)

    dev_key, dev_cert = _make_leaf("crypto-adapter-0001", ca_key, ca_cert, server=False)
    _write_key(paths.device_key, dev_key)
    _write_cert(paths.device_cert, dev_cert)

    bad_ca_key, bad_ca_cert = _make_ca("unrelated CA")
    _write_cert(paths.untrusted_ca_cert, bad_ca_cert)
    bad_key, bad_cert = _make_leaf("impostor-adapter", bad_ca_key, bad_ca_cert, server=False)
    _write_key(paths.untrusted_device_key, bad_key)
    _write_cert(paths.untrusted_device_cert, bad_cert)
    return paths
