"""The networked gateway process and the protected-sink stand-in.

Device endpoints connect over TCP (optionally TLS with mutual
authentication): one connection carries any number of devices, each a
sequential frame stream.  Surviving frames are forwarded to the blue sink,
or to a named redirect sink for contained functions.  A framing violation
tears the offending connection down and disables its devices.
"""

from __future__ import annotations

import logging
import socket
import ssl
import threading
from dataclasses import dataclass

from usbgate.auditlog import GatewayRecorder, LogWriter
from usbgate.controlapi import make_control_server
from usbgate.core import EventBus, GatewayCore
from usbgate.engine import ConfigError
from usbgate.policies.containment import ContainmentPolicy
from usbgate.policies.cryptoauth import CryptoAuthPolicy
from usbgate.wire import Frame, FrameKind, MalformedFrame, StreamDecoder

logger = logging.getLogger(__name__)


class SinkServer:
    """Blue-machine stand-in: accepts gateway connections, captures frames."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._server = socket.create_server((host, port))
        self._server.settimeout(0.2)
        self.address = self._server.getsockname()
        self._lock = threading.Lock()
        self.frames: list[Frame] = []
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        accept = threading.Thread(target=self._accept_loop, daemon=True)
        accept.start()
        self._threads.append(accept)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._server.accept()
            except (socket.timeout, OSError):
                continue
            t = threading.Thread(target=self._reader, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _reader(self, conn: socket.socket) -> None:
        decoder = StreamDecoder()
        conn.settimeout(0.2)
        with conn:
            while not self._stop.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    return
                if not data:
                    return
                try:
                    frames = decoder.feed(data)
                except MalformedFrame:
                    return
                if frames:
                    with self._lock:
                        self.frames.extend(frames)

    def snapshot(self) -> list[Frame]:
        with self._lock:
            return list(self.frames)

    def devices_seen(self) -> set[int]:
        with self._lock:
            return {f.device_id for f in self.frames if f.kind == FrameKind.DEVICE_CONNECT}

    def frames_for(self, device_id: int) -> list[Frame]:
        with self._lock:
            return [f for f in self.frames if f.device_id == device_id]

    def close(self) -> None:
        self._stop.set()
        self._server.close()


@dataclass
class TlsConfig:
    ca: str
    cert: str
    key: str


class GatewayServer:
    def __init__(
        self,
        config_text: str,
        sink_addr: tuple[str, int] | None,
        listen: tuple[str, int] = ("127.0.0.1", 0),
        tls_listen: tuple[str, int] | None = None,
        tls: TlsConfig | None = None,
        control_listen: tuple[str, int] | None = None,
        log_path: str | None = None,
        log_required: bool = False,
        ui_dir: str | None = None,
        stats_tick_s: float | None = 2.0,
    ):
        recorder = None
        self.log_writer = None
        if log_path:
            self.log_writer = LogWriter.open(log_path)
            recorder = GatewayRecorder(self.log_writer, required=log_required)
        self.core = GatewayCore(
            config_text=config_text,
            recorder=recorder,
            forward=self._forward,
            events=EventBus(),
        )
        self.sink_addr = sink_addr
        self._redirects = self._collect_redirect_sinks()
        self._validate_auth_requirements(tls)

        self._listener = socket.create_server(listen)
        self._listener.settimeout(0.2)
        self.address = self._listener.getsockname()

        self.tls_address = None
        self._tls_listener = None
        self._tls_context = None
        if tls_listen is not None:
            if tls is None:
                raise ConfigError("a TLS listener needs --ca/--cert/--key")
            self._tls_context = self._make_tls_context(tls)
            self._tls_listener = socket.create_server(tls_listen)
            self._tls_listener.settimeout(0.2)
            self.tls_address = self._tls_listener.getsockname()

        self.control_address = None
        self._control = None
        if control_listen is not None:
            self._control = make_control_server(self.core, control_listen, ui_dir=ui_dir)
            self.control_address = self._control.server_address

        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._conn_count = 0
        self._out_lock = threading.Lock()
        self._out_sockets: dict[tuple[str, int], socket.socket] = {}
        self.forward_failures = 0
        self._stats_tick_s = stats_tick_s

    # -- wiring ----------------------------------------------------------------

    def _collect_redirect_sinks(self) -> dict[str, tuple[str, int]]:
        sinks: dict[str, tuple[str, int]] = {}
        for policies in self.core.engine.chainset.chains.values():
            for policy in policies:
                if isinstance(policy, ContainmentPolicy):
                    for name, addr in policy.redirect_sinks.items():
                        host, _, port = addr.rpartition(":")
                        sinks[name] = (host, int(port))
        return sinks

    def _validate_auth_requirements(self, tls: TlsConfig | None) -> None:
        for policies in self.core.engine.chainset.chains.values():
            for policy in policies:
                if isinstance(policy, CryptoAuthPolicy) and policy.auth.requires_tls_listener:
                    if tls is None and policy.auth.trusted_ca is None:
                        raise ConfigError(
                            "crypto policy requires authentication but no trusted CA is configured"
                        )

    @staticmethod
    def _make_tls_context(tls: TlsConfig) -> ssl.SSLContext:
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.minimum_version = ssl.TLSVersion.TLSv1_2
        context.verify_mode = ssl.CERT_REQUIRED
        context.load_verify_locations(tls.ca)
        context.load_cert_chain(tls.cert, tls.key)
        return context

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> "GatewayServer":
        self._spawn(self._accept_loop, self._listener, False)
        if self._tls_listener is not None:
            self._spawn(self._accept_loop, self._tls_listener, True)
        if self._control is not None:
            self._spawn(self._control.serve_forever)
        if self._stats_tick_s:
            self._spawn(self._stats_ticker)
        return self

    def _spawn(self, target, *args) -> None:
        t = threading.Thread(target=target, args=args, daemon=True)
        t.start()
        self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()
        self._listener.close()
        if self._tls_listener is not None:
            self._tls_listener.close()
        if self._control is not None:
            self._control.stop_event.set()
            self._control.shutdown()
            self._control.server_close()
        with self._out_lock:
            for sock in self._out_sockets.values():
                try:
                    sock.close()
                except OSError:
                    pass
            self._out_sockets.clear()
        if self.log_writer is not None:
            self.log_writer.close()

    def __enter__(self) -> "GatewayServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- statistics heartbeat ----------------------------------------------------

    def _stats_ticker(self) -> None:
        while not self._stop.wait(self._stats_tick_s):
            self.core.events.emit("StatsTick", self.core.stats_json())

    # -- endpoint connections ------------------------------------------------------

    def _accept_loop(self, listener: socket.socket, is_tls: bool) -> None:
        while not self._stop.is_set():
            try:
                conn, peer = listener.accept()
            except (socket.timeout, OSError):
                continue
            self._conn_count += 1
            conn_id = f"{'t' if is_tls else 'p'}{self._conn_count}"
            self._spawn(self._serve_endpoint, conn, conn_id, is_tls)

    def _serve_endpoint(self, conn: socket.socket, conn_id: str, is_tls: bool) -> None:
        auth_subject = None
        if is_tls:
            try:
                conn = self._tls_context.wrap_socket(conn, server_side=True)
                auth_subject = _peer_common_name(conn)
            except (ssl.SSLError, OSError) as exc:
                logger.info("TLS handshake rejected on %s: %s", conn_id, exc)
                try:
                    conn.close()
                except OSError:
                    pass
                return
        self.core.connect_endpoint(conn_id, auth_subject)
        decoder = StreamDecoder()
        conn.settimeout(0.2)
        try:
            while not self._stop.is_set():
                try:
                    data = conn.recv(65536)
                except socket.timeout:
                    continue
                except OSError:
                    break
                if not data:
                    break
                try:
                    frames = decoder.feed(data)
                except MalformedFrame as exc:
                    self.core.endpoint_malformed(conn_id, str(exc))
                    break
                for frame in frames:
                    self.core.handle_frame(conn_id, frame)
        finally:
            self.core.disconnect_endpoint(conn_id)
            try:
                conn.close()
            except OSError:
                pass

    # -- forwarding ------------------------------------------------------------------

    def _forward(self, sink_name: str | None, device_id: int, data: bytes) -> None:
        if sink_name is None:
            addr = self.sink_addr
        else:
            addr = self._redirects.get(sink_name)
        if addr is None:
            self.forward_failures += 1
            return
        with self._out_lock:
            sock = self._out_sockets.get(addr)
            try:
                if sock is None:
                    sock = socket.create_connection(addr, timeout=2.0)
                    self._out_sockets[addr] = sock
                sock.sendall(data)
            except OSError:
                self.forward_failures += 1
                self._out_sockets.pop(addr, None)
                try:
                    if sock is not None:
                        sock.close()
                except OSError:
                    pass


def _peer_common_name(tls_sock: ssl.SSLSocket) -> str | None:
    cert = tls_sock.getpeercert()
    if not cert:
        return None
    for rdn in cert.get("subject", ()):
        for key, value in rdn:
            if key == "commonName":
                return value
    return None
