import csv
import json
import random

import pytest

from tamperled.bench import WorkloadSpec, compute_stats, run_benchmark, write_report
from tamperled.errors import NetworkDown

from .oracles import stats_fold


def test_single_sample():
    s = compute_stats([0.27], 1.0)
    assert (s.tps, s.latency_min, s.latency_avg, s.latency_max) == (1.0, 0.27, 0.27, 0.27)


def test_empty_samples_are_absent_not_zero():
    s = compute_stats([], 2.0)
    assert s.tps == 0 and s.latency_min is s.latency_avg is s.latency_max is None


def test_synthetic_latencies():
    s = compute_stats([0.1, 0.2, 0.3], 3.0)
    assert s.latency_min == 0.1 and s.latency_max == 0.3
    assert s.latency_avg == pytest.approx(0.2, abs=1e-12)


def test_duration_must_be_positive():
    with pytest.raises(ValueError):
        compute_stats([0.1], 0)


@pytest.mark.parametrize("seed", range(5))
def test_against_independent_fold(seed):
    rng = random.Random(seed)
    samples = [rng.expovariate(4.0) for _ in range(rng.randint(1, 400))]
    s = compute_stats(samples, 10.0)
    lo, avg, hi = stats_fold(samples)
    assert abs(s.latency_min - lo) <= 1e-9 and abs(s.latency_avg - avg) <= 1e-9 and abs(s.latency_max - hi) <= 1e-9
    assert s.tps == pytest.approx(len(samples) / 10.0)


@pytest.mark.parametrize("kwargs", [dict(tx_count=0), dict(send_rate=0), dict(client_count=0),
                                    dict(warmup_count=10, tx_count=10), dict(function="Mine")])
def test_workload_validation(kwargs):
    with pytest.raises(ValueError):
        WorkloadSpec(**kwargs)


def test_workload_rejects_unknown_field():
    with pytest.raises(ValueError):
        WorkloadSpec.from_dict({"tx_count": 5, "threads": 2})


def test_small_deterministic_run(harness, tmp_path):
    spec = WorkloadSpec(tx_count=110, warmup_count=10, send_rate=100)
    report = run_benchmark(spec, harness)
    assert (report.success_count, report.fail_count) == (100, 0)
    assert report.success_count + report.fail_count == spec.tx_count - spec.warmup_count
    assert report.latency_min <= report.latency_avg <= report.latency_max
    assert report.flags == {"VALID": 100}
    paths = write_report(report, tmp_path)
    raw = json.loads(paths["json"].read_text())
    assert raw["success_count"] == 100 and len(raw["samples"]) == 100
    with open(paths["samples"]) as fh:
        rows = list(csv.DictReader(fh))
    lo, avg, hi = stats_fold([float(r["latency_s"]) for r in rows])
    assert abs(lo - report.latency_min) <= 1e-9 and abs(hi - report.latency_max) <= 1e-9
    assert abs(avg - report.latency_avg) <= 1e-9
    assert paths["latency_figure"].stat().st_size > 0 and paths["throughput_figure"].stat().st_size > 0
    table = paths["table"].read_text()
    for label in ("Throughput (TPS)", "Max Latency (s)", "Min Latency (s)", "Avg Latency (s)", "clock: logical"):
        assert label in table


def test_reports_are_reproducible():
    from tamperled.config import build_network, prototype_config

    spec = WorkloadSpec(tx_count=60, warmup_count=5)
    a = run_benchmark(spec, build_network(prototype_config()))
    b = run_benchmark(spec, build_network(prototype_config()))
    assert (a.latencies, a.tps) == (b.latencies, b.tps)


def test_wall_clock_mode_is_labelled(harness):
    report = run_benchmark(WorkloadSpec(tx_count=30, warmup_count=5), harness, clock="wall")
    assert report.success_count == 25 and report.table().startswith("clock: wall")
    assert report.latency_min <= report.latency_avg <= report.latency_max


def test_conflicting_writes_are_counted_as_failures(harness):
    report = run_benchmark(WorkloadSpec(function="RecordReading", tx_count=40, warmup_count=0, send_rate=200), harness)
    assert report.success_count + report.fail_count == 40
    assert report.fail_count == report.flags.get("INVALID_MVCC", 0) > 0


def test_no_endorsers_is_network_down(harness):
    for peer in harness.network.peers.values():
        peer.chaincodes.clear()
    with pytest.raises(NetworkDown):
        run_benchmark(WorkloadSpec(tx_count=5, warmup_count=0), harness)
