"""Contract execution against a speculative world-state snapshot.

A :class:`ChaincodeStub` records the version of every key a contract reads
and buffers every write; nothing touches the world state until the
resulting :class:`ReadWriteSet` is validated at commit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Protocol, Sequence

from .codec import Decoder, Encoder
from .ledger import Version, WorldState
from .membership import Certificate


@dataclass(frozen=True)
class ReadWriteSet:
    reads: tuple[tuple[str, Optional[Version]], ...] = ()
    writes: tuple[tuple[str, Optional[bytes]], ...] = ()

    def __post_init__(self):
        if len({k for k, _ in self.reads}) != len(self.reads):
            raise ValueError("duplicate key in read set")
        if len({k for k, _ in self.writes}) != len(self.writes):
            raise ValueError("duplicate key in write set")

    def to_bytes(self) -> bytes:
        enc = Encoder().u32(len(self.reads))
        for key, version in self.reads:
            enc.text(key)
            if version is None:
                enc.u8(0)
            else:
                enc.u8(1).u64(version.block).u32(version.tx)
        enc.u32(len(self.writes))
        for key, value in self.writes:
            enc.text(key)
            if value is None:
                enc.u8(0)
            else:
                enc.u8(1).blob(value)
        return enc.getvalue()

    @classmethod
    def decode(cls, dec: Decoder) -> "ReadWriteSet":
        reads = []
        for _ in range(dec.u32()):
            key = dec.text()
            reads.append((key, Version(dec.u64(), dec.u32()) if dec.u8() else None))
        writes = []
        for _ in range(dec.u32()):
            key = dec.text()
            writes.append((key, dec.blob() if dec.u8() else None))
        return cls(tuple(reads), tuple(writes))

    @classmethod
    def from_bytes(cls, data: bytes) -> "ReadWriteSet":
        dec = Decoder(data)
        rwset = cls.decode(dec)
        dec.expect_end()
        return rwset


@dataclass
class ChaincodeStub:
    """What a contract sees during one invocation."""

    state: WorldState
    caller: Certificate
    timestamp: int
    tx_id: str = ""
    channel_orgs: frozenset = frozenset()
    _reads: dict = field(default_factory=dict)
    _writes: dict = field(default_factory=dict)

    def get_state(self, key: str) -> Optional[bytes]:
        if key not in self._reads:
            self._reads[key] = self.state.version(key)
        return self.state.get(key)

    def put_state(self, key: str, value: bytes) -> None:
        self._writes[key] = bytes(value)

    def del_state(self, key: str) -> None:
        self._writes[key] = None

    def rwset(self) -> ReadWriteSet:
        return ReadWriteSet(
            tuple(sorted(self._reads.items())),
            tuple(sorted(self._writes.items())),
        )


class Chaincode(Protocol):
    name: str

    def invoke(self, stub: ChaincodeStub, function: str, args: Sequence[bytes]) -> bytes:
        ...


def execute(
    chaincode: Chaincode,
    state: WorldState,
    caller: Certificate,
    function: str,
    args: Sequence[bytes],
    *,
    timestamp: int,
    tx_id: str = "",
    channel_orgs: Mapping | frozenset = frozenset(),
) -> tuple[bytes, ReadWriteSet]:
    """Run one invocation; the snapshot is never mutated."""
    stub = ChaincodeStub(state, caller, timestamp, tx_id, frozenset(channel_orgs))
    response = chaincode.invoke(stub, function, args)
    return response, stub.rwset()
