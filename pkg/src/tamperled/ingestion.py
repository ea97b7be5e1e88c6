"""Simulated sensor sources feeding the silo contract through three topologies.

``direct``
    each device submits its own signed readings to the peers.
``gateway``
    devices hand signed readings to a buffering gateway that forwards them
    unchanged (the gateway holds no signing identity of its own).
``broker``
    devices publish to per-device topics; one subscriber submits, any
    others only monitor.

Every reading becomes exactly one ``RecordReading`` proposal signed by the
device at emission time. Submission is serialized per device (the next
reading goes out once the previous one has committed), which keeps the
per-device sequence numbers gap-free without MVCC retries.
"""

from __future__ import annotations

import logging
import random
import struct
from collections import defaultdict, deque
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .errors import OutOfRange, TopologyConfigError
from .ledger import store_file
from .membership import Enrollment
from .network import FabricNetwork, Proposal, TxHandle, make_proposal
from .silo import CHAINCODE_NAME

log = logging.getLogger(__name__)

MODES = ("direct", "gateway", "broker")

# (low, high) bounds each field must respect; None means unbounded
FIELD_BOUNDS = {
    "temperature": (None, None),
    "humidity": (Decimal("0"), Decimal("100")),
    "nh3": (Decimal("0"), None),
}


@dataclass(frozen=True)
class ValueModel:
    kind: str = "constant"  # constant | ramp | random
    value: float = 0.0
    start: float = 0.0
    step: float = 0.0
    low: float = 0.0
    high: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "ramp", "random"):
            raise TopologyConfigError(f"unknown value model {self.kind!r}")
        if self.kind == "random" and self.low > self.high:
            raise TopologyConfigError("random value model needs low <= high")

    @classmethod
    def from_dict(cls, raw) -> "ValueModel":
        if isinstance(raw, (int, float)):
            return cls("constant", value=float(raw))
        try:
            return cls(**raw)
        except TypeError as exc:
            raise TopologyConfigError(f"bad value model {raw!r}: {exc}") from None

    def sample(self, index: int, rng: random.Random) -> Decimal:
        if self.kind == "constant":
            x = self.value
        elif self.kind == "ramp":
            x = self.start + self.step * index
        else:
            x = rng.uniform(self.low, self.high)
        return Decimal(repr(x)).quantize(Decimal("0.1"))


def _clamp(value: Decimal, bounds) -> Decimal:
    low, high = bounds
    if low is not None and value < low:
        return low
    if high is not None and value > high:
        return high
    return value


@dataclass
class SensorSource:
    device_id: str
    identity: Enrollment
    emission_rate: float = 1.0  # readings per second of logical time
    temperature: ValueModel = field(default_factory=lambda: ValueModel("constant", value=25.0))
    humidity: ValueModel = field(default_factory=lambda: ValueModel("constant", value=60.0))
    nh3: ValueModel = field(default_factory=lambda: ValueModel("constant", value=10.0))
    seed: int = 0
    count: Optional[int] = None

    def __post_init__(self):
        if self.emission_rate <= 0:
            raise TopologyConfigError(f"{self.device_id}: emission_rate must be positive")

    def schedule(self, duration_ms: int, start: int = 0) -> list[tuple[int, tuple[str, str, str]]]:
        """Emission times and formatted values, fully determined by the seed."""
        rng = random.Random(self.seed)
        interval = 1000.0 / self.emission_rate
        out = []
        k = 0
        while True:
            t = start + int(round(k * interval))
            if t - start >= duration_ms or (self.count is not None and k >= self.count):
                break
            values = tuple(
                str(_clamp(model.sample(k, rng), FIELD_BOUNDS[name]))
                for name, model in (("temperature", self.temperature), ("humidity", self.humidity), ("nh3", self.nh3))
            )
            out.append((t, values))
            k += 1
        return out


class DeviceSubmitter:
    """Keeps at most one transaction in flight per device."""

    def __init__(self, network: FabricNetwork):
        self.network = network
        self._pending: dict[str, deque] = defaultdict(deque)
        self._busy: set[str] = set()
        self.handles: list[TxHandle] = []

    def submit(self, device_id: str, proposal: Proposal) -> None:
        self._pending[device_id].append(proposal)
        if device_id not in self._busy:
            self._next(device_id)

    def _next(self, device_id: str) -> None:
        queue = self._pending[device_id]
        if not queue:
            self._busy.discard(device_id)
            return
        self._busy.add(device_id)
        handle = self.network.submit_proposal(queue.popleft())
        self.handles.append(handle)
        if handle.done:
            self.network.sim.schedule(0, self._next, device_id)
        else:
            handle.callbacks.append(lambda h: self._next(device_id))


class GatewayNode:
    """Buffers readings and forwards them in arrival order."""

    def __init__(self, network: FabricNetwork, downstream: DeviceSubmitter,
                 buffer_capacity: int = 16, flush_interval: int = 100):
        if buffer_capacity < 1 or flush_interval < 1:
            raise TopologyConfigError("gateway needs buffer_capacity >= 1 and flush_interval >= 1")
        self.network = network
        self.downstream = downstream
        self.buffer_capacity = buffer_capacity
        self.flush_interval = flush_interval
        self.buffer: deque = deque()
        self.flushes = 0
        self.received = 0
        self._armed = False

    def receive(self, device_id: str, proposal: Proposal) -> None:
        self.received += 1
        self.buffer.append((device_id, proposal))
        if len(self.buffer) >= self.buffer_capacity:
            self.flush()
        elif not self._armed:
            self._armed = True
            self.network.sim.schedule(self.flush_interval, self._on_timer)

    def _on_timer(self) -> None:
        self._armed = False
        self.flush()

    def flush(self) -> None:
        if not self.buffer:
            return
        self.flushes += 1
        while self.buffer:
            device_id, proposal = self.buffer.popleft()
            self.downstream.submit(device_id, proposal)


class BrokerNode:
    """Topic fan-out: per-topic FIFO, one delivery per current subscriber."""

    def __init__(self, network: FabricNetwork):
        self.network = network
        self.topics: dict[str, list[Callable]] = defaultdict(list)
        self.published = 0
        self.delivered = 0

    def subscribe(self, topic: str, callback: Callable[[str, object], None]) -> None:
        self.topics[topic].append(callback)

    def publish(self, topic: str, message) -> None:
        self.published += 1
        for callback in list(self.topics.get(topic, ())):
            self.delivered += 1
            self.network.sim.schedule(self.network.latency.link, callback, topic, message)


@dataclass
class MonitorSubscriber:
    name: str
    seen: list = field(default_factory=list)

    def __call__(self, topic, message):
        self.seen.append((topic, message[1].tx_id))


@dataclass
class IngestionReport:
    mode: str
    emitted: int
    submitted: int
    committed: int
    failed: int
    seeds: dict
    per_device: dict
    broker_deliveries: int = 0
    monitor_deliveries: int = 0
    gateway_flushes: int = 0
    duration_ms: int = 0
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def render(self) -> str:
        rows = [
            ("mode", self.mode),
            ("emitted", self.emitted),
            ("submitted", self.submitted),
            ("committed", self.committed),
            ("failed", self.failed),
            ("broker deliveries", self.broker_deliveries),
            ("gateway flushes", self.gateway_flushes),
            ("logical duration (ms)", self.duration_ms),
            ("seeds", ", ".join(f"{k}={v}" for k, v in sorted(self.seeds.items()))),
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def run_topology(
    network: FabricNetwork,
    mode: str,
    sources: Sequence[SensorSource],
    duration: int,
    *,
    channel: str,
    buffer_capacity: int = 16,
    flush_interval: int = 100,
    topic_prefix: str = "silo",
    monitors: int = 1,
) -> IngestionReport:
    """Emit readings for ``duration`` logical ms through ``mode`` and drain to commit."""
    if mode not in MODES:
        raise TopologyConfigError(f"unknown topology mode {mode!r}; choose from {', '.join(MODES)}")
    if duration <= 0:
        raise TopologyConfigError("duration must be positive")
    if channel not in network.channels:
        raise TopologyConfigError(f"unknown channel {channel!r}")
    if len({s.device_id for s in sources}) != len(sources):
        raise TopologyConfigError("device ids must be unique across sources")

    submitter = DeviceSubmitter(network)
    gateway = broker = None
    monitor_subs: list[MonitorSubscriber] = []
    start = network.sim.now
    link = network.latency.link

    if mode == "direct":
        def deliver(device_id, proposal):
            submitter.submit(device_id, proposal)
    elif mode == "gateway":
        gateway = GatewayNode(network, submitter, buffer_capacity, flush_interval)

        def deliver(device_id, proposal):
            network.sim.schedule(link, gateway.receive, device_id, proposal)
    else:
        broker = BrokerNode(network)
        for source in sources:
            topic = f"{topic_prefix}/{source.device_id}"
            broker.subscribe(topic, lambda _t, msg: submitter.submit(*msg))
            for i in range(monitors):
                sub = MonitorSubscriber(f"monitor-{i}")
                monitor_subs.append(sub)
                broker.subscribe(topic, sub)

        def deliver(device_id, proposal):
            network.sim.schedule(link, broker.publish, f"{topic_prefix}/{device_id}", (device_id, proposal))

    emitted = 0
    for source in sources:
        nonce_rng = random.Random(f"nonce|{source.seed}|{source.device_id}")
        for t, values in source.schedule(duration, start):
            emitted += 1
            network.sim.at(t, _emit, network, channel, source, values, nonce_rng, deliver)

    network.drain()
    handles = submitter.handles
    flags: dict[str, int] = defaultdict(int)
    per_device: dict[str, int] = defaultdict(int)
    for h in handles:
        if h.flag is not None:
            flags[h.flag.name] += 1
        else:
            flags[f"REJECTED:{getattr(h.error, 'code', 'ERROR')}"] += 1
        if h.valid:
            per_device[h.proposal.args[0].decode()] += 1
    committed = sum(1 for h in handles if h.valid)
    return IngestionReport(
        mode=mode,
        emitted=emitted,
        submitted=len(handles),
        committed=committed,
        failed=len(handles) - committed,
        seeds={s.device_id: s.seed for s in sources},
        per_device=dict(per_device),
        broker_deliveries=broker.delivered if broker else 0,
        monitor_deliveries=sum(len(m.seen) for m in monitor_subs),
        gateway_flushes=gateway.flushes if gateway else 0,
        duration_ms=network.sim.now - start,
        flags=dict(flags),
    )


def _emit(network, channel: str, source: SensorSource, values, nonce_rng: random.Random, deliver) -> None:
    proposal = make_proposal(
        source.identity,
        channel,
        CHAINCODE_NAME,
        "RecordReading",
        [source.device_id, *values],
        timestamp=network.sim.now,
        nonce=nonce_rng.getrandbits(192).to_bytes(24, "big"),
    )
    deliver(source.device_id, proposal)


def sources_from_config(topology: Mapping, identities: Mapping[str, Enrollment]) -> list[SensorSource]:
    sources = []
    for i, raw in enumerate(topology.get("sources", [])):
        try:
            device_id = str(raw["device_id"])
            identity = identities[str(raw.get("identity", device_id))]
        except KeyError as exc:
            raise TopologyConfigError(f"topology.sources[{i}]: missing or unknown {exc}") from None
        sources.append(
            SensorSource(
                device_id=device_id,
                identity=identity,
                emission_rate=float(raw.get("rate", 1.0)),
                temperature=ValueModel.from_dict(raw.get("temperature", 25.0)),
                humidity=ValueModel.from_dict(raw.get("humidity", 60.0)),
                nh3=ValueModel.from_dict(raw.get("nh3", 10.0)),
                seed=int(raw.get("seed", i)),
                count=raw.get("count"),
            )
        )
    if not sources:
        raise TopologyConfigError("topology.sources is empty")
    return sources


def inject_tamper(store_path, block_number: int, byte_offset: int, mask: int = 0xFF) -> int:
    """XOR one byte of a persisted block frame; returns the absolute file offset.

    ``store_path`` is the ledger base path (with or without ``.blk``).
    ``byte_offset`` counts from the start of the block's frame, including
    its 4-byte length prefix.
    """
    if not 1 <= mask <= 0xFF:
        raise ValueError("mask must flip at least one bit of one byte")
    base = Path(store_path)
    if base.suffix in (".blk", ".idx"):
        base = base.with_suffix("")
    blk, idx = store_file(base, ".blk"), store_file(base, ".idx")
    if not blk.exists() or not idx.exists():
        raise OutOfRange(f"no block store at {base}")
    raw = idx.read_bytes()
    ends = [struct.unpack_from(">Q", raw, i)[0] for i in range(0, len(raw) - len(raw) % 8, 8)]
    if not 0 <= block_number < len(ends):
        raise OutOfRange(f"block {block_number} does not exist (height {len(ends)})")
    start = ends[block_number - 1] if block_number else 0
    length = ends[block_number] - start
    if not 0 <= byte_offset < length:
        raise OutOfRange(f"offset {byte_offset} outside block {block_number} ({length} bytes)")
    position = start + byte_offset
    with open(blk, "r+b") as fh:
        fh.seek(position)
        old = fh.read(1)[0]
        fh.seek(position)
        fh.write(bytes([old ^ mask]))
    return position


def block_size(store_path, block_number: int) -> int:
    """Length in bytes of a persisted block frame."""
    base = Path(store_path)
    if base.suffix in (".blk", ".idx"):
        base = base.with_suffix("")
    raw = store_file(base, ".idx").read_bytes()
    ends = [struct.unpack_from(">Q", raw, i)[0] for i in range(0, len(raw) - len(raw) % 8, 8)]
    if not 0 <= block_number < len(ends):
        raise OutOfRange(f"block {block_number} does not exist (height {len(ends)})")
    return ends[block_number] - (ends[block_number - 1] if block_number else 0)
