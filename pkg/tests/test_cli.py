import json
import subprocess
import sys

import pytest

from tamperled.cli import main


@pytest.fixture
def state(tmp_path):
    path = tmp_path / "state"
    assert main(["--state", str(path), "netup", "--config", "prototype"]) == 0
    return path


def run(state, *args):
    return main(["--state", str(state), *args])


def test_netup_output(tmp_path, capsys):
    assert main(["--state", str(tmp_path / "s"), "netup"]) == 0
    out = capsys.readouterr().out
    assert "peer@IoT         192.168.10.60" in out
    assert "NETUP channel=silochannel peers=3 orderer=1 cas=8 height=1" in out
    assert main(["--state", str(tmp_path / "s"), "netup"]) == 1
    assert capsys.readouterr().err.startswith("ALREADY_RUNNING:")


def test_invoke_query_verify_tamper(state, capsys):
    assert run(state, "invoke", "--fn", "RegisterDevice", "--args", "silo-1", "IoT") == 0
    assert run(state, "invoke", "--as", "silo-device-1", "--fn", "RecordReading",
               "--args", "silo-1", "25.0", "60.0", "10.0") == 0
    assert "COMMITTED" in capsys.readouterr().out
    assert run(state, "query", "--fn", "ReadTemperature", "--args", "silo-1") == 0
    assert json.loads(capsys.readouterr().out)["temperature"] == "25.0"

    assert run(state, "query", "--as", "bob", "--fn", "ReadTemperature", "--args", "silo-1") == 1
    assert capsys.readouterr().err.startswith("ACCESS_DENIED")

    assert run(state, "verify", "--channel", "silochannel") == 0
    assert "OK height=3" in capsys.readouterr().out
    assert run(state, "tamper", "--block", "2", "--byte", "5") == 0
    assert run(state, "verify", "--channel", "silochannel") == 1
    assert "TAMPER block=2" in capsys.readouterr().out
    # a tampered ledger refuses to come back up
    assert run(state, "query", "--fn", "ReadTemperature", "--args", "silo-1") == 1
    assert capsys.readouterr().err.startswith("CORRUPT_STORE")


def test_invalid_transaction_exit_code(state, capsys):
    assert run(state, "invoke", "--fn", "RegisterDevice", "--args", "silo-1", "IoT") == 0
    assert run(state, "invoke", "--fn", "RegisterDevice", "--args", "silo-1", "IoT") == 1
    assert capsys.readouterr().err.startswith("ALREADY_REGISTERED")


def test_usage_and_config_errors(tmp_path, state, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("organizations: []\npeers: []\n")
    assert main(["--state", str(tmp_path / "x"), "netup", "--config", str(bad)]) == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR")
    assert run(state, "query", "--as", "nobody", "--fn", "ReadTemperature", "--args", "silo-1") == 2
    assert "unknown identity" in capsys.readouterr().err
    assert run(state, "tamper", "--block", "9", "--byte", "0") == 1
    assert capsys.readouterr().err.startswith("OUT_OF_RANGE")
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_id_issue_and_show(state, capsys):
    assert run(state, "id", "issue", "--org", "IoT", "--subject", "silo-device-2", "--role", "device",
               "--attr", "deviceId=silo-2") == 0
    issued = capsys.readouterr().out
    assert run(state, "id", "show", "silo-device-2") == 0
    assert capsys.readouterr().out == issued
    assert run(state, "invoke", "--fn", "RegisterDevice", "--args", "silo-2", "IoT") == 0
    assert run(state, "invoke", "--as", "silo-device-2", "--fn", "RecordReading",
               "--args", "silo-2", "19.5", "40", "1") == 0
    assert run(state, "id", "issue", "--org", "IoT", "--subject", "x", "--role", "admin", "--tls") == 1
    assert capsys.readouterr().err.startswith("ROLE_NOT_ALLOWED")


def test_bench_and_ingest_write_reports(tmp_path, state, capsys):
    cfg = tmp_path / "bench.yaml"
    from tamperled.config import prototype_config_text

    cfg.write_text(prototype_config_text().replace("tx_count: 510", "tx_count: 60"))
    out = tmp_path / "report"
    assert main(["--state", str(tmp_path / "unused"), "bench", "--config", str(cfg), "--out", str(out)]) == 0
    assert "Throughput (TPS)" in capsys.readouterr().out
    assert {p.name for p in out.iterdir()} >= {"report.txt", "report.json", "latencies.csv",
                                               "latency_hist.png", "throughput.png"}
    assert run(state, "ingest", "--mode", "broker", "--duration", "2000") == 0
    reports = state / "reports" / "ingestion"
    assert json.loads((reports / "ingestion-broker.json").read_text())["committed"] == 20
    assert (reports / "history-silo-1.png").exists()
    assert run(state, "verify") == 0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tamperled", "--state", str(tmp_path / "s"), "verify"],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("CONFIG_ERROR")
