import json

import pytest

from usbgate.core import GatewayCore
from usbgate.emulator.corpus import corpus, load_packaged_corpus, scenario_from_json, scenario_to_json
from usbgate.emulator.harness import run_attach_local
from usbgate.policies.signature import load_signatures
from usbgate.resources import read_data_text


def default_core() -> GatewayCore:
    return GatewayCore(config_text=read_data_text("default-config.json"))


def attach_scenario(core, scenario, device_id=1):
    core.connect_endpoint("local")
    return run_attach_local(scenario.device, core, device_id)


def test_corpus_has_thirteen_linux_and_five_windows_rows():
    rows = corpus()
    assert sum(1 for s in rows if s.os_target == "linux") == 13
    assert sum(1 for s in rows if s.os_target == "windows") == 5


def test_packaged_corpus_matches_builder():
    built = {s.name: s for s in corpus()}
    loaded = load_packaged_corpus()
    assert len(loaded) == len(built) == 18
    for scenario in loaded:
        ref = built[scenario.name]
        assert scenario.device.descriptor_blobs == ref.device.descriptor_blobs
        assert scenario.device.script == ref.device.script
        assert scenario.expected_policy == ref.expected_policy


def test_scenario_json_roundtrip():
    for scenario in corpus():
        doc = json.loads(json.dumps(scenario_to_json(scenario)))
        back = scenario_from_json(doc)
        assert back.device.descriptor_blobs == scenario.device.descriptor_blobs
        assert back.device.script == scenario.device.script


@pytest.mark.parametrize("scenario", [s for s in corpus() if s.os_target == "linux"], ids=lambda s: s.name)
def test_linux_rows_blocked_by_named_policy(scenario):
    outcome = attach_scenario(default_core(), scenario)
    assert outcome.blocked, scenario.name
    assert outcome.blocked_by == scenario.expected_policy, (scenario.name, outcome.reason)


def test_windows_rows_blocked_once_signatures_load():
    # the two audio rows are invisible to compliance until their signatures
    # are installed; the HID/hub analogues fall to compliance directly
    sigs = json.loads(read_data_text("exploit-signatures.json"))
    for scenario in corpus():
        if scenario.os_target != "windows":
            continue
        core = default_core()
        if scenario.expected_policy == "signature":
            before = attach_scenario(core, scenario)
            assert before.admitted, (scenario.name, before.reason)
            core2 = default_core()
            for sig in sigs:
                if sig["id"] == scenario.name:
                    core2.add_signature(sig)
            after = attach_scenario(core2, scenario)
            assert after.blocked and after.blocked_by == "signature", (scenario.name, after.reason)
        else:
            outcome = attach_scenario(core, scenario)
            assert outcome.blocked, (scenario.name, outcome.reason)
            assert outcome.blocked_by == scenario.expected_policy, (scenario.name, outcome.reason)


def test_exploit_signature_fixture_loads_with_count_18():
    db = load_signatures(read_data_text("exploit-signatures.json"))
    assert len(db) == 18


def test_scenarios_replay_identically():
    scenario = next(s for s in corpus() if s.name == "09:00:00:C:9")
    first = attach_scenario(default_core(), scenario)
    second = attach_scenario(default_core(), scenario)
    assert (first.blocked, first.reason, first.blocked_by) == (
        second.blocked,
        second.reason,
        second.blocked_by,
    )
