import json
import subprocess
import sys

from usbgate.auditlog import GatewayRecorder, LogWriter
from usbgate.cli import main
from usbgate.core import GatewayCore
from usbgate.emulator.generate import DataStep, GenerateMode, generate_device
from usbgate.emulator.harness import run_attach_local
from usbgate.resources import read_data_text
from usbgate.wire import FrameKind


def run_cli(*argv, capsys):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_corpus_list(capsys):
    code, out, _ = run_cli("corpus", "list", capsys=capsys)
    assert code == 0
    assert "CVE-2016-3136" in out
    assert len(out.strip().splitlines()) == 18


def test_mkcerts(tmp_path, capsys):
    code, out, _ = run_cli("mkcerts", "--out", str(tmp_path / "pki"), capsys=capsys)
    assert code == 0
    assert (tmp_path / "pki" / "ca.pem").exists()
    assert (tmp_path / "pki" / "device.key").exists()


def test_fuzz_local_report(tmp_path, capsys):
    report = tmp_path / "report.json"
    code, out, _ = run_cli(
        "fuzz", "--seeds", "0..49", "--mode", "random-raw", "--report", str(report), capsys=capsys
    )
    assert code == 0
    assert "50 / 50 blocked" in out
    doc = json.loads(report.read_text())
    assert doc["admitted"] == 0
    assert doc["total"] == 50


def make_capture(tmp_path, with_payload=False):
    path = str(tmp_path / "cap.uglg")
    writer = LogWriter.open(path)
    core = GatewayCore(
        config_text=read_data_text("default-config.json"), recorder=GatewayRecorder(writer)
    )
    core.connect_endpoint("local")
    device = generate_device(5, GenerateMode.COMPLIANT)
    while device.name != "hid-keyboard":
        device = generate_device(device.seed + 1, GenerateMode.COMPLIANT)
    if with_payload:
        device.script.append(DataStep(FrameKind.INTERRUPT_TRANSFER, 0x81, bytes.fromhex("feedfacecafe")))
    run_attach_local(device, core, 1)
    writer.close()
    return path


def test_replay_cli(tmp_path, capsys):
    capture = make_capture(tmp_path)
    code, out, err = run_cli("replay", capture, capsys=capsys)
    assert code == 0
    assert "identical" in err
    assert "Allow" in out


def test_replay_cli_with_signatures(tmp_path, capsys):
    capture = make_capture(tmp_path, with_payload=True)
    sig_file = tmp_path / "sigs.json"
    sig_file.write_text(
        json.dumps(
            [
                {
                    "id": "payload-1",
                    "pattern": ["FE", "ED", "FA", "CE", "CA", "FE"],
                    "anchor": "Anywhere",
                }
            ]
        )
    )
    code, out, err = run_cli("replay", capture, "--signatures", str(sig_file), capsys=capsys)
    assert code == 0
    assert "DIFFERENT" in err
    assert "DisableDevice" in out


def test_sig_test_cli(tmp_path, capsys):
    capture = make_capture(tmp_path, with_payload=True)
    sig_file = tmp_path / "sigs.json"
    sig_file.write_text(
        json.dumps([{"id": "payload-1", "pattern": ["FE", "ED", "FA", "CE"], "anchor": "Anywhere"}])
    )
    code, out, _ = run_cli("sig", "test", str(sig_file), capture, capsys=capsys)
    assert code == 0
    assert "matches payload-1" in out
    assert "# 1 matching records" in out


def test_cli_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "usbgate.cli", "--version"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "usbgate" in proc.stdout
