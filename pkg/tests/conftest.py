import pytest

from tamperled.config import build_network, prototype_config


@pytest.fixture
def harness():
    """Fresh in-memory prototype network: 3 peers, solo orderer, 8 CAs."""
    return build_network(prototype_config())


@pytest.fixture
def registered(harness):
    """Prototype network with device silo-1 registered and alice granted read access."""
    net, ch = harness.network, harness.default_channel
    admin = harness.admin("IoT")
    assert net.invoke(admin, ch, "silomonitor", "RegisterDevice", ["silo-1", "IoT"]).valid
    assert net.invoke(admin, ch, "silomonitor", "GrantAccess", ["silo-1", "Org1", "alice"]).valid
    return harness


def prototype_raw():
    import yaml

    from tamperled.config import prototype_config_text

    return yaml.safe_load(prototype_config_text())


# -- acceptance summary: one pass/fail line per criterion --------------------

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        verdict, detail = _ACCEPTANCE[name]
        number = name.split("_")[2]
        terminalreporter.write_line(f"criterion {number} {verdict}: {name[len('test_criterion_'):]} | {detail}")
