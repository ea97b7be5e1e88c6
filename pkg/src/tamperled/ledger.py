"""Hash-chained block store and versioned world state.

On-disk layout, per channel ledger:

``<base>.blk``
    Concatenated frames. A frame is a 4-byte big-endian length followed by
    a block record::

        header (88 bytes) | header digest (32) | tx count (u32)
        | tx blob * count (u32 length + bytes) | flags (1 byte per tx)
        | metadata digest (32) = SHA-256(header digest || flags)

``<base>.idx``
    One 8-byte big-endian end offset per frame. A frame is indexed only
    after it has been written and synced, so a crash leaves at most an
    unindexed tail, which is truncated on open.
"""

from __future__ import annotations

import enum
import hashlib
import os
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

from .codec import Decoder, Encoder
from .errors import BadDataHash, BadHeight, BadLinkage, CorruptStore

DIGEST_SIZE = 32
HEADER_SIZE = 88
ZERO_DIGEST = bytes(DIGEST_SIZE)

_HEADER = struct.Struct(">Q32s32sQQ")
assert _HEADER.size == HEADER_SIZE


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hexdigest(digest: bytes) -> str:
    return digest.hex()


class ValidityFlag(enum.IntEnum):
    VALID = 0
    INVALID_ENDORSEMENT = 1
    INVALID_MVCC = 2
    INVALID_SIGNATURE = 3
    INVALID_REPLAY = 4


@dataclass(frozen=True)
class BlockHeader:
    number: int
    previous_hash: bytes
    data_hash: bytes
    nonce: int = 0
    timestamp: int = 0

    def __post_init__(self):
        if len(self.previous_hash) != DIGEST_SIZE or len(self.data_hash) != DIGEST_SIZE:
            raise ValueError("digests must be exactly 32 bytes")
        if self.number < 0:
            raise ValueError("block number must be non-negative")


def canonical_serialize(header: BlockHeader) -> bytes:
    """Fixed 88-byte layout: number, previous hash, data hash, nonce, timestamp."""
    return _HEADER.pack(
        header.number, header.previous_hash, header.data_hash, header.nonce, header.timestamp
    )


def parse_header(data: bytes) -> BlockHeader:
    number, prev, data_hash, nonce, ts = _HEADER.unpack(data)
    return BlockHeader(number, prev, data_hash, nonce, ts)


def compute_block_hash(header: BlockHeader) -> bytes:
    return sha256(canonical_serialize(header))


def encode_transactions(transactions: Sequence[bytes]) -> bytes:
    enc = Encoder().u32(len(transactions))
    for tx in transactions:
        enc.blob(tx)
    return enc.getvalue()


def compute_data_hash(transactions: Sequence[bytes]) -> bytes:
    return sha256(encode_transactions(transactions))


@dataclass(frozen=True)
class Block:
    """A sealed block. Transactions are opaque serialized envelopes.

    ``validity_flags`` stays empty until a committing peer assigns it.
    """

    header: BlockHeader
    transactions: tuple[bytes, ...]
    validity_flags: tuple[ValidityFlag, ...] = ()

    @property
    def number(self) -> int:
        return self.header.number

    def with_flags(self, flags: Iterable[ValidityFlag]) -> "Block":
        if self.validity_flags:
            raise ValueError(f"block {self.number} already carries validity flags")
        flags = tuple(ValidityFlag(f) for f in flags)
        if len(flags) != len(self.transactions):
            raise ValueError("one validity flag per transaction is required")
        return replace(self, validity_flags=flags)


def seal_block(
    number: int,
    previous_hash: bytes,
    transactions: Sequence[bytes],
    *,
    nonce: int = 0,
    timestamp: int = 0,
) -> Block:
    header = BlockHeader(number, previous_hash, compute_data_hash(transactions), nonce, timestamp)
    return Block(header, tuple(bytes(t) for t in transactions))


def metadata_digest(header_digest: bytes, flags: Sequence[int]) -> bytes:
    return sha256(header_digest + bytes(flags))


def encode_block(block: Block) -> bytes:
    if len(block.validity_flags) != len(block.transactions):
        raise ValueError("only flagged blocks can be persisted")
    header_digest = compute_block_hash(block.header)
    enc = Encoder().raw(canonical_serialize(block.header)).raw(header_digest)
    enc.u32(len(block.transactions))
    for tx in block.transactions:
        enc.blob(tx)
    enc.raw(bytes(block.validity_flags))
    enc.raw(metadata_digest(header_digest, block.validity_flags))
    return enc.getvalue()


@dataclass(frozen=True)
class _Record:
    block: Block
    stored_header_digest: bytes
    stored_metadata_digest: bytes
    raw_flags: bytes


def _decode_record(data: bytes) -> _Record:
    dec = Decoder(data)
    header = parse_header(dec.raw(HEADER_SIZE))
    stored_digest = dec.raw(DIGEST_SIZE)
    count = dec.u32()
    if count > dec.remaining:
        raise ValueError("transaction count exceeds record size")
    txs = tuple(dec.blob() for _ in range(count))
    raw_flags = dec.raw(count)
    stored_meta = dec.raw(DIGEST_SIZE)
    dec.expect_end()
    flags = tuple(ValidityFlag(f) for f in raw_flags) if all(
        f in ValidityFlag._value2member_map_ for f in raw_flags
    ) else ()
    return _Record(Block(header, txs, flags), stored_digest, stored_meta, raw_flags)


def decode_block(data: bytes) -> Block:
    try:
        record = _decode_record(data)
    except (ValueError, struct.error) as exc:
        raise CorruptStore(f"unparseable block record: {exc}") from exc
    if len(record.block.validity_flags) != len(record.block.transactions):
        raise CorruptStore("unknown validity flag value")
    return record.block


def frame(record: bytes) -> bytes:
    return struct.pack(">I", len(record)) + record


def store_file(base: Path, suffix: str) -> Path:
    """``<base><suffix>``; node names may contain dots, so no ``with_suffix``."""
    return base.with_name(base.name + suffix)


class BlockStore:
    """Append-only block sequence, in memory or backed by ``<base>.blk``/``<base>.idx``.

    One writer at a time; sealed frames are immutable so readers need no lock.
    """

    def __init__(self, base: Union[str, os.PathLike, None] = None):
        self._lock = threading.Lock()
        self._frames: list[bytes] = []
        self._ends: list[int] = []
        self._tip_hash = ZERO_DIGEST
        self.base = Path(base) if base is not None else None
        if self.base is not None:
            self.base.parent.mkdir(parents=True, exist_ok=True)
            self._recover()
            if self._ends:
                # hash the raw header bytes: a damaged tip must not stop the store from opening
                last = self.read_frame(len(self._ends) - 1)
                self._tip_hash = sha256(last[4 : 4 + HEADER_SIZE])

    @property
    def block_path(self) -> Optional[Path]:
        return None if self.base is None else store_file(self.base, ".blk")

    @property
    def index_path(self) -> Optional[Path]:
        return None if self.base is None else store_file(self.base, ".idx")

    def _recover(self) -> None:
        blk, idx = self.block_path, self.index_path
        blk.touch(exist_ok=True)
        idx.touch(exist_ok=True)
        raw = idx.read_bytes()
        usable = len(raw) - len(raw) % 8
        ends = [struct.unpack_from(">Q", raw, i)[0] for i in range(0, usable, 8)]
        size = blk.stat().st_size
        # drop index entries pointing past the data (never written out)
        while ends and ends[-1] > size:
            ends.pop()
        if usable != len(raw) or len(ends) != usable // 8:
            with open(idx, "r+b") as fh:
                fh.truncate(8 * len(ends))
        tail = ends[-1] if ends else 0
        if size > tail:
            with open(blk, "r+b") as fh:
                fh.truncate(tail)
        self._ends = ends

    @property
    def height(self) -> int:
        return len(self._ends) if self.base is not None else len(self._frames)

    @property
    def tip_hash(self) -> bytes:
        return self._tip_hash

    def append(self, block: Block) -> None:
        """Validate linkage, height and payload digest, then persist durably."""
        with self._lock:
            if block.header.number != self.height:
                raise BadHeight(f"expected block {self.height}, got {block.header.number}")
            if block.header.previous_hash != self._tip_hash:
                raise BadLinkage(f"block {block.number} does not link to the current tip")
            if compute_data_hash(block.transactions) != block.header.data_hash:
                raise BadDataHash(f"block {block.number} payload does not match data_hash")
            data = frame(encode_block(block))
            if self.base is None:
                self._frames.append(data)
            else:
                start = self._ends[-1] if self._ends else 0
                with open(self.block_path, "r+b") as fh:
                    fh.seek(start)
                    fh.write(data)
                    fh.truncate()
                    fh.flush()
                    os.fsync(fh.fileno())
                end = start + len(data)
                with open(self.index_path, "ab") as fh:
                    fh.write(struct.pack(">Q", end))
                    fh.flush()
                    os.fsync(fh.fileno())
                self._ends.append(end)
            self._tip_hash = compute_block_hash(block.header)

    def frame_span(self, number: int) -> tuple[int, int]:
        """Byte range ``[start, end)`` of a block's frame inside the block file."""
        if not 0 <= number < self.height:
            raise IndexError(number)
        if self.base is None:
            start = sum(len(f) for f in self._frames[:number])
            return start, start + len(self._frames[number])
        start = self._ends[number - 1] if number else 0
        return start, self._ends[number]

    def read_frame(self, number: int) -> bytes:
        if self.base is None:
            return self._frames[number]
        start, end = self.frame_span(number)
        with open(self.block_path, "rb") as fh:
            fh.seek(start)
            return fh.read(end - start)

    def iter_frames(self) -> Iterator[bytes]:
        if self.base is None:
            yield from list(self._frames)
            return
        ends = list(self._ends)
        data = self.block_path.read_bytes()
        start = 0
        for end in ends:
            yield data[start:end]
            start = end

    def read_block(self, number: int) -> Block:
        return decode_block(self.read_frame(number)[4:])

    def blocks(self) -> Iterator[Block]:
        for data in self.iter_frames():
            yield decode_block(data[4:])


@dataclass(frozen=True)
class Ok:
    height: int

    def __bool__(self):
        return True


@dataclass(frozen=True)
class TamperDetected:
    block_number: int
    reason: str

    def __bool__(self):
        return False


def verify_chain(store: BlockStore) -> Union[Ok, TamperDetected]:
    """Replay every frame from genesis and report the first violation."""
    expected_prev = ZERO_DIGEST
    number = -1
    for number, data in enumerate(store.iter_frames()):
        if len(data) < 4 or struct.unpack_from(">I", data)[0] != len(data) - 4:
            return TamperDetected(number, "Malformed")
        try:
            record = _decode_record(data[4:])
        except (ValueError, struct.error):
            return TamperDetected(number, "Malformed")
        header = record.block.header
        if header.number != number:
            return TamperDetected(number, "BadHeight")
        if header.previous_hash != expected_prev:
            return TamperDetected(number, "BadLinkage")
        if compute_data_hash(record.block.transactions) != header.data_hash:
            return TamperDetected(number, "BadDataHash")
        digest = compute_block_hash(header)
        if record.stored_header_digest != digest:
            return TamperDetected(number, "BadHeaderHash")
        if (
            len(record.block.validity_flags) != len(record.block.transactions)
            or metadata_digest(digest, record.raw_flags) != record.stored_metadata_digest
        ):
            return TamperDetected(number, "BadMetadata")
        expected_prev = digest
    return Ok(number + 1)


class Version(NamedTuple):
    block: int
    tx: int


@dataclass
class WorldState:
    """Latest value and version per key, derived from VALID write-sets only."""

    entries: dict[str, tuple[bytes, Version]] = field(default_factory=dict)

    def get(self, key: str) -> Optional[bytes]:
        entry = self.entries.get(key)
        return None if entry is None else entry[0]

    def version(self, key: str) -> Optional[Version]:
        entry = self.entries.get(key)
        return None if entry is None else entry[1]

    def copy(self) -> "WorldState":
        return WorldState(dict(self.entries))

    def digest(self) -> bytes:
        enc = Encoder().u32(len(self.entries))
        for key in sorted(self.entries):
            value, version = self.entries[key]
            enc.text(key).blob(value).u64(version.block).u32(version.tx)
        return sha256(enc.getvalue())

    def __len__(self):
        return len(self.entries)


# A write is (key, value) with value None meaning delete.
Write = tuple[str, Optional[bytes]]


def apply_writes(
    state: WorldState, block: Block, write_sets: Sequence[Sequence[Write]]
) -> WorldState:
    """Apply the write-sets of VALID transactions in index order, in place.

    ``write_sets[i]`` belongs to ``block.transactions[i]``; entries for
    invalid transactions are ignored.
    """
    if len(block.validity_flags) != len(block.transactions):
        raise ValueError("block must be validated before its writes are applied")
    if len(write_sets) != len(block.transactions):
        raise ValueError("one write-set per transaction is required")
    for index, (flag, writes) in enumerate(zip(block.validity_flags, write_sets)):
        if flag != ValidityFlag.VALID:
            continue
        version = Version(block.number, index)
        for key, value in writes:
            if value is None:
                state.entries.pop(key, None)
            else:
                state.entries[key] = (bytes(value), version)
    return state
