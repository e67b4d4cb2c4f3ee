"""Command-line entry points.

    usbgate serve     run the gateway
    usbgate sink      run a protected-sink stand-in that prints what arrives
    usbgate fuzz      sweep emulated devices against a gateway and report
    usbgate replay    replay a capture (in-process verdicts, or to a gateway)
    usbgate sig       signature tooling: test a db against a capture
    usbgate mkcerts   generate the test PKI for the TLS overlay
    usbgate corpus    export or list the known-exploit scenario corpus
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import time

from usbgate import __version__
from usbgate.resources import read_data_text


def _addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    return (host, int(port))


def _seed_range(text: str) -> range:
    lo, _, hi = text.partition("..")
    try:
        return range(int(lo), int(hi) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}") from None


def _read_config(path: str | None) -> str:
    if path is None:
        return read_data_text("default-config.json")
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def cmd_serve(args) -> int:
    from usbgate.gateway import GatewayServer, TlsConfig

    tls = None
    if args.tls_listen is not None:
        if not (args.ca and args.cert and args.key):
            print("--tls-listen needs --ca, --cert, and --key", file=sys.stderr)
            return 2
        tls = TlsConfig(ca=args.ca, cert=args.cert, key=args.key)
    gateway = GatewayServer(
        _read_config(args.config),
        sink_addr=args.sink,
        listen=args.listen,
        tls_listen=args.tls_listen,
        tls=tls,
        control_listen=args.control,
        log_path=args.log,
        log_required=args.log_required,
        ui_dir=args.ui,
    )
    gateway.start()
    print(f"gateway listening on {gateway.address[0]}:{gateway.address[1]}")
    if gateway.tls_address:
        print(f"tls listener on {gateway.tls_address[0]}:{gateway.tls_address[1]}")
    if gateway.control_address:
        print(f"control api on http://{gateway.control_address[0]}:{gateway.control_address[1]}")
    if args.config and hasattr(signal, "SIGHUP"):
        def _reload(signum, frame):
            try:
                gateway.core.reload_config(_read_config(args.config))
                print("config reloaded")
            except Exception as exc:  # keep serving on a bad reload
                print(f"config reload failed: {exc}", file=sys.stderr)

        signal.signal(signal.SIGHUP, _reload)
    if args.log_remote:
        from usbgate.auditlog import LogStreamer

        if gateway.log_writer is None:
            print("--log-remote needs --log", file=sys.stderr)
            return 2
        streamer = LogStreamer(args.log_remote)
        gateway.log_writer.on_record = streamer.offer
        print(f"streaming log records to {args.log_remote[0]}:{args.log_remote[1]}")
    try:
        while True:
            time.sleep(1)
    except KeyboardInterrupt:
        gateway.stop()
    return 0


def cmd_sink(args) -> int:
    from usbgate.gateway import SinkServer

    sink = SinkServer(args.listen[0], args.listen[1])
    print(f"sink listening on {sink.address[0]}:{sink.address[1]}")
    seen = 0
    try:
        while True:
            time.sleep(0.5)
            frames = sink.snapshot()
            for frame in frames[seen:]:
                print(f"device {frame.device_id}: {frame.kind.name} ({len(frame.payload)} bytes)")
            seen = len(frames)
    except KeyboardInterrupt:
        sink.close()
    return 0


def cmd_fuzz(args) -> int:
    from usbgate.emulator.generate import GenerateMode, generate_device
    from usbgate.emulator.harness import fuzz_sweep
    from usbgate.gateway import GatewayServer, SinkServer

    mode = {
        "random-raw": GenerateMode.RANDOM_RAW,
        "labeled": GenerateMode.LABELED_MUTATION,
        "compliant": GenerateMode.COMPLIANT,
    }[args.mode]
    devices = [(seed + 1, generate_device(seed, mode)) for seed in args.seeds]

    if args.gateway is None:
        sink = SinkServer()
        gateway = GatewayServer(_read_config(args.config), sink_addr=sink.address, stats_tick_s=None)
        gateway.start()
        started = time.monotonic()
        outcomes = fuzz_sweep(devices, gateway.address, gateway.core, sink)
        elapsed = time.monotonic() - started
        gateway.stop()
        sink.close()
    else:
        if args.control is None:
            print("--gateway needs --control to read outcomes back", file=sys.stderr)
            return 2
        from usbgate.emulator.harness import remote_sweep

        started = time.monotonic()
        outcomes = remote_sweep(devices, args.gateway, args.control)
        elapsed = time.monotonic() - started

    admitted = [o for o in outcomes if o.admitted]
    report = {
        "mode": args.mode,
        "seeds": f"{args.seeds.start}..{args.seeds.stop - 1}",
        "total": len(outcomes),
        "admitted": len(admitted),
        "blocked": len(outcomes) - len(admitted),
        "elapsed_s": round(elapsed, 3),
        "outcomes": [
            {
                "seed": o.seed,
                "device_id": o.device_id,
                "admitted": o.admitted,
                "reason": o.reason,
                "blocked_by": o.blocked_by,
                "label": o.label_code,
            }
            for o in outcomes
        ],
    }
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    print(f"{report['blocked']} / {report['total']} blocked in {elapsed:.1f}s")
    return 0 if (args.mode == "compliant") == (report["blocked"] == 0) else 1


def cmd_replay(args) -> int:
    from usbgate.auditlog import read_log, replay, replay_to_network, transcript_from_records

    records, warnings = read_log(args.capture)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if args.to is not None:
        sent = replay_to_network(records, args.to, speed=args.speed)
        print(f"re-sent {sent} captured frames to {args.to[0]}:{args.to[1]}")
        return 0
    signatures = []
    if args.signatures:
        with open(args.signatures, "r", encoding="utf-8") as fh:
            signatures = json.load(fh)
    transcript = replay(
        records, config_text=_read_config(args.config), add_signatures=signatures, speed=args.speed
    )
    recorded = transcript_from_records(records)
    for entry in transcript.entries:
        print(entry.line())
    if recorded.entries:
        verdict = "identical" if recorded.to_bytes() == transcript.to_bytes() else "DIFFERENT"
        print(f"# transcript vs capture: {verdict}", file=sys.stderr)
    return 0


def cmd_sig_test(args) -> int:
    from usbgate.auditlog import Origin, read_log
    from usbgate.policies.signature import load_signatures
    from usbgate.session import DeviceSession
    from usbgate.wire import FrameKind, decode_frame

    with open(args.signatures, "r", encoding="utf-8") as fh:
        db = load_signatures(fh.read())
    records, warnings = read_log(args.capture)
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)

    sessions: dict[int, DeviceSession] = {}
    hits = 0
    for record in records:
        if record.origin is not Origin.FROM_DEVICE:
            continue
        decoded = decode_frame(record.frame_bytes)
        if decoded is None:
            continue
        frame, _ = decoded
        if frame.kind == FrameKind.DEVICE_CONNECT:
            sessions[frame.device_id] = DeviceSession.from_connect(frame.device_id, frame.payload)
        match = db.match(sessions.get(frame.device_id), frame)
        if match is not None:
            hits += 1
            print(f"record seq {record.seq} device {frame.device_id} {frame.kind.name}: matches {match}")
    print(f"# {hits} matching records out of {sum(1 for r in records if r.origin is Origin.FROM_DEVICE)}")
    return 0


def cmd_mkcerts(args) -> int:
    from usbgate.pki import make_test_pki

    paths = make_test_pki(args.out)
    print(f"wrote test PKI under {paths.directory}")
    for field in ("ca_cert", "gateway_cert", "gateway_key", "device_cert", "device_key"):
        print(f"  {getattr(paths, field)}")
    return 0


def cmd_corpus(args) -> int:
    from usbgate.emulator.corpus import corpus, export_corpus

    if args.action == "list":
        for scenario in corpus():
            print(f"{scenario.name:18} {scenario.os_target:8} {scenario.expected_policy:11} {scenario.description}")
    else:
        written = export_corpus(args.dir)
        print(f"wrote {len(written)} scenario files to {args.dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usbgate", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"usbgate {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the gateway")
    serve.add_argument("--listen", type=_addr, default=("127.0.0.1", 7340))
    serve.add_argument("--sink", type=_addr, required=True, help="protected sink address")
    serve.add_argument("--config", help="policy chain config (default: packaged)")
    serve.add_argument("--tls-listen", type=_addr, help="TLS endpoint listener")
    serve.add_argument("--ca", help="trusted CA bundle (PEM)")
    serve.add_argument("--cert", help="gateway certificate (PEM)")
    serve.add_argument("--key", help="gateway private key (PEM)")
    serve.add_argument("--control", type=_addr, help="control API listener")
    serve.add_argument("--log", help="audit log path")
    serve.add_argument("--log-remote", type=_addr, help="stream log records to a remote sink")
    serve.add_argument("--log-required", action="store_true", help="fail closed on log errors")
    serve.add_argument("--ui", help="serve a dashboard bundle under /ui")
    serve.set_defaults(func=cmd_serve)

    sink = sub.add_parser("sink", help="run a protected-sink stand-in")
    sink.add_argument("--listen", type=_addr, default=("127.0.0.1", 7341))
    sink.set_defaults(func=cmd_sink)

    fuzz = sub.add_parser("fuzz", help="sweep emulated devices against a gateway")
    fuzz.add_argument("--seeds", type=_seed_range, required=True, help="inclusive seed range A..B")
    fuzz.add_argument("--mode", choices=["random-raw", "labeled", "compliant"], default="random-raw")
    fuzz.add_argument("--gateway", type=_addr, help="target gateway (omit to run one locally)")
    fuzz.add_argument(
        "--control",
        type=_addr,
        help="target gateway's control API; with --gateway, outcomes come from "
        "the device inventory (a held/denied connect scores as blocked)",
    )
    fuzz.add_argument("--config", help="config for the locally-run gateway")
    fuzz.add_argument("--report", help="write a JSON report here")
    fuzz.set_defaults(func=cmd_fuzz)

    rep = sub.add_parser("replay", help="replay a capture")
    rep.add_argument("capture", help="a .uglg capture file")
    rep.add_argument("--to", type=_addr, help="re-send frames to a live gateway instead")
    rep.add_argument("--speed", choices=["realtime", "max"], default="max")
    rep.add_argument("--config", help="config for in-process verdicts (default: packaged)")
    rep.add_argument("--signatures", help="hot-add these signatures before replay (rematch)")
    rep.set_defaults(func=cmd_replay)

    sig = sub.add_parser("sig", help="signature tooling")
    sig_sub = sig.add_subparsers(dest="sig_command", required=True)
    sig_test = sig_sub.add_parser("test", help="report which captured records a db matches")
    sig_test.add_argument("signatures", help="signature db (JSON)")
    sig_test.add_argument("capture", help="a .uglg capture file")
    sig_test.set_defaults(func=cmd_sig_test)

    mk = sub.add_parser("mkcerts", help="generate the test PKI")
    mk.add_argument("--out", default="pki", help="output directory")
    mk.set_defaults(func=cmd_mkcerts)

    corpus_p = sub.add_parser("corpus", help="known-exploit scenario corpus")
    corpus_p.add_argument("action", choices=["list", "export"])
    corpus_p.add_argument("--dir", default="scenarios", help="export directory")
    corpus_p.set_defaults(func=cmd_corpus)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
