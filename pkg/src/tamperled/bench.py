"""Open-loop load generator and latency/throughput statistics.

Latency is measured per transaction from proposal submission to the commit
event seen by the issuing client's anchor peer. In deterministic mode both
ends are logical-clock readings; in wall-clock mode they are
``time.perf_counter`` readings taken when the simulator processes the
submit and the commit notification.
"""

from __future__ import annotations

import csv
import json
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .config import Harness
from .errors import NetworkDown, PreparationFailed, TamperledError
from .ledger import ValidityFlag
from .network import TxHandle
from .silo import CHAINCODE_NAME, FUNCTIONS

CLOCKS = ("logical", "wall")


@dataclass(frozen=True)
class WorkloadSpec:
    function: str = "ReadTemperature"
    tx_count: int = 510
    send_rate: float = 200.0
    client_count: int = 4
    warmup_count: int = 10
    channel: Optional[str] = None
    device_id: str = "silo-1"

    def __post_init__(self):
        if self.tx_count < 1:
            raise ValueError("tx_count must be at least 1")
        if self.send_rate <= 0:
            raise ValueError("send_rate must be positive")
        if self.client_count < 1:
            raise ValueError("client_count must be at least 1")
        if not 0 <= self.warmup_count < self.tx_count:
            raise ValueError("warmup_count must be in [0, tx_count)")
        if self.function not in FUNCTIONS:
            raise ValueError(f"unknown contract function {self.function!r}")

    @classmethod
    def from_dict(cls, raw: Mapping) -> "WorkloadSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown workload fields: {', '.join(sorted(unknown))}")
        return cls(**raw)


@dataclass(frozen=True)
class Stats:
    tps: float
    latency_min: Optional[float]
    latency_avg: Optional[float]
    latency_max: Optional[float]


def compute_stats(latencies: Sequence[float], duration: float) -> Stats:
    """Throughput over ``duration`` seconds and min/avg/max of the samples.

    An empty sample set gives zero throughput and no latency figures.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    if not latencies:
        return Stats(0.0, None, None, None)
    return Stats(
        len(latencies) / duration,
        min(latencies),
        math.fsum(latencies) / len(latencies),
        max(latencies),
    )


@dataclass
class BenchmarkReport:
    function: str
    clock: str
    tx_count: int
    warmup_count: int
    send_rate: float
    client_count: int
    success_count: int
    fail_count: int
    tps: float
    latency_min: Optional[float]
    latency_avg: Optional[float]
    latency_max: Optional[float]
    duration_s: float
    flags: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)  # per measured tx: dict rows

    @property
    def latencies(self) -> list[float]:
        return [s["latency_s"] for s in self.samples if s["flag"] == "VALID"]

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        def fmt(x):
            return "-" if x is None else f"{x:.2f}"

        header = ["Name", "Succ", "Fail", "Send Rate (TPS)", "Max Latency (s)",
                  "Min Latency (s)", "Avg Latency (s)", "Throughput (TPS)"]
        row = [self.function, str(self.success_count), str(self.fail_count), f"{self.send_rate:.1f}",
               fmt(self.latency_max), fmt(self.latency_min), fmt(self.latency_avg), f"{self.tps:.1f}"]
        widths = [max(len(h), len(r)) for h, r in zip(header, row)]
        line = "+" + "+".join("-" * (w + 2) for w in widths) + "+"

        def render(cells):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

        out = [f"clock: {self.clock}" + (" (logical time, reproducible)" if self.clock == "logical" else " (wall clock)"),
               line, render(header), line, render(row), line]
        if self.flags:
            out.append("outcomes: " + ", ".join(f"{k}={v}" for k, v in sorted(self.flags.items())))
        return "\n".join(out)


def _prepare(harness: Harness, spec: WorkloadSpec, channel: str):
    """Register the benchmark device, seed one reading, enroll load clients."""
    net = harness.network
    iot_admin = harness.admin("IoT")
    device_subject = f"bench-device-{spec.device_id}"
    device = harness.enrollments.get(device_subject) or harness.enroll(
        device_subject, "IoT", "device", {"deviceId": spec.device_id})
    state = net.anchor_peer(channel, "IoT").ledgers[channel].state
    if state.get(f"device/{spec.device_id}") is None:
        _must(net.invoke(iot_admin, channel, CHAINCODE_NAME, "RegisterDevice", [spec.device_id, "IoT"]))
    if state.get(f"latest/{spec.device_id}") is None:
        _must(net.invoke(device, channel, CHAINCODE_NAME, "RecordReading", [spec.device_id, "21.5", "55.0", "3.0"]))
    if spec.function == "RecordReading":
        return [device] * spec.client_count
    if spec.function in ("RegisterDevice", "GrantAccess", "RevokeAccess"):
        return [iot_admin] * spec.client_count
    clients = []
    for i in range(spec.client_count):
        subject = f"bench-client-{i}"
        clients.append(harness.enrollments.get(subject) or harness.enroll(subject, "IoT", "client"))
    return clients


def _must(handle: TxHandle) -> None:
    if not handle.valid:
        reason = handle.error.code if handle.error else handle.flag.name
        raise PreparationFailed(f"preparation transaction failed: {reason}")


def _args(spec: WorkloadSpec, k: int) -> list[str]:
    f = spec.function
    if f == "ReadTemperature":
        return [spec.device_id]
    if f == "GetHistory":
        return [spec.device_id, "1", "1"]
    if f == "RecordReading":
        return [spec.device_id, f"{20 + (k % 100) / 10:.1f}", "50.0", "1.0"]
    if f == "RegisterDevice":
        return [f"bench-reg-{k}", "IoT"]
    return [spec.device_id, "Org1", f"bench-reader-{k}"]


def run_benchmark(spec: WorkloadSpec, harness: Harness, *, clock: str = "logical") -> BenchmarkReport:
    """Drive ``spec`` at its send rate and fold the measured transactions into a report."""
    if clock not in CLOCKS:
        raise ValueError(f"clock must be one of {CLOCKS}")
    net = harness.network
    channel = spec.channel or harness.default_channel
    if channel not in net.channels or not net.endorsers_for(channel, CHAINCODE_NAME):
        raise NetworkDown(f"no endorsing peers are up on channel {channel!r}")
    try:
        clients = _prepare(harness, spec, channel)
    except TamperledError as exc:
        if isinstance(exc, PreparationFailed):
            raise
        raise PreparationFailed(str(exc)) from exc

    interval = 1000.0 / spec.send_rate
    start = net.sim.now + 1
    handles: list[Optional[TxHandle]] = [None] * spec.tx_count
    wall: dict[int, list] = {}

    def fire(k):
        if clock == "wall":
            wall[k] = [time.perf_counter(), None]
        h = net.submit(clients[k % len(clients)], channel, CHAINCODE_NAME, spec.function, _args(spec, k))
        handles[k] = h
        if clock == "wall":
            if h.done:
                wall[k][1] = time.perf_counter()
            else:
                h.callbacks.append(lambda _h, k=k: wall[k].__setitem__(1, time.perf_counter()))

    for k in range(spec.tx_count):
        net.sim.at(start + int(round(k * interval)), fire, k)
    net.drain()

    measured = range(spec.warmup_count, spec.tx_count)
    samples = []
    outcomes: Counter = Counter()
    for k in measured:
        h = handles[k]
        outcome = h.flag.name if h.flag is not None else f"REJECTED:{getattr(h.error, 'code', 'ERROR')}"
        outcomes[outcome] += 1
        if clock == "wall":
            t_submit, t_commit = wall[k]
            submit_s, commit_s = 0.0, (t_commit - t_submit) if t_commit is not None else None
            latency = commit_s
        else:
            submit_s = h.submit_time / 1000.0
            commit_s = None if h.commit_time is None else h.commit_time / 1000.0
            latency = None if commit_s is None else commit_s - submit_s
        samples.append({"tx": k, "client": k % len(clients), "submit_s": submit_s, "commit_s": commit_s,
                        "latency_s": latency, "flag": outcome, "tx_id": h.tx_id})

    ok = [s for s in samples if s["flag"] == ValidityFlag.VALID.name]
    if clock == "wall":
        t0 = min(wall[k][0] for k in measured)
        t1 = max((wall[k][1] or wall[k][0]) for k in measured)
    else:
        t0 = min(s["submit_s"] for s in samples)
        t1 = max((s["commit_s"] if s["commit_s"] is not None else s["submit_s"]) for s in samples)
    duration = max(t1 - t0, 1e-9)
    stats = compute_stats([s["latency_s"] for s in ok], duration)
    return BenchmarkReport(
        function=spec.function,
        clock=clock,
        tx_count=spec.tx_count,
        warmup_count=spec.warmup_count,
        send_rate=spec.send_rate,
        client_count=spec.client_count,
        success_count=len(ok),
        fail_count=len(samples) - len(ok),
        tps=stats.tps,
        latency_min=stats.latency_min,
        latency_avg=stats.latency_avg,
        latency_max=stats.latency_max,
        duration_s=duration,
        flags=dict(outcomes),
        samples=samples,
    )


def write_report(report: BenchmarkReport, out_dir, *, figures: bool = True) -> dict[str, Path]:
    """Write the table, JSON, raw-sample CSV and figures; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "table": out / "report.txt",
        "json": out / "report.json",
        "samples": out / "latencies.csv",
    }
    paths["table"].write_text(report.table() + "\n")
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2))
    with open(paths["samples"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["tx", "client", "submit_s", "commit_s", "latency_s", "flag", "tx_id"])
        writer.writeheader()
        writer.writerows(report.samples)
    if figures:
        from . import plotting

        paths["latency_figure"] = plotting.latency_histogram(report.latencies, out / "latency_hist.png")
        commits = [s["commit_s"] for s in report.samples if s["flag"] == "VALID"]
        paths["throughput_figure"] = plotting.throughput_timeline(commits, out / "throughput.png")
    return paths
