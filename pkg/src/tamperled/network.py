"""Execute-order-validate transaction flow over an in-process simulated network.

Clients sign proposals, endorsing peers execute them against a snapshot
and sign the resulting read-write set, the solo orderer batches envelopes
into hash-linked blocks, and every peer validates (signatures, replay,
endorsement policy, MVCC) before committing.

:class:`Peer`, :class:`Orderer` and the module-level operations can be
driven directly. :class:`FabricNetwork` wires them onto the logical-clock
event loop with per-hop costs so that latency can be measured.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
from collections import deque
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

from . import ledger
from .chaincode import Chaincode, ReadWriteSet, execute
from .codec import Decoder, Encoder
from .errors import (
    AccessDenied,
    BadCertificate,
    BadLinkage,
    CorruptStore,
    BroadcastRejected,
    ChaincodeError,
    ChaincodeNotInstalled,
    DivergentEndorsements,
    HandshakeFailed,
    InvalidConfig,
    NotAMember,
    TamperledError,
)
from .ledger import Block, BlockStore, ValidityFlag, Version, WorldState
from .membership import (
    CAKind,
    Certificate,
    Enrollment,
    Role,
    TrustedRoot,
    TrustedRoots,
    validate_certificate,
    verify,
)
from .policy import (
    ChannelPolicySet,
    Policy,
    check_channel_access,
    evaluate_endorsement,
    parse_policy,
    parse_principal,
)
from .sim import LATE, Resource, Simulation

log = logging.getLogger(__name__)

NONCE_SIZE = 24
DEFAULT_BATCH_MAX_COUNT = 10
DEFAULT_BATCH_TIMEOUT_MS = 500


# --------------------------------------------------------------------------
# messages


@dataclass(frozen=True)
class Proposal:
    channel: str
    chaincode: str
    function: str
    args: tuple[bytes, ...]
    creator: Certificate
    tx_nonce: bytes
    timestamp: int
    signature: bytes = b""

    def payload(self) -> bytes:
        enc = Encoder().text(self.channel).text(self.chaincode).text(self.function)
        enc.u32(len(self.args))
        for arg in self.args:
            enc.blob(arg)
        return enc.blob(self.creator.to_bytes()).blob(self.tx_nonce).u64(self.timestamp).getvalue()

    def digest(self) -> bytes:
        return hashlib.sha256(self.payload()).digest()

    @property
    def tx_id(self) -> str:
        return self.digest().hex()

    def encode(self, enc: Encoder) -> Encoder:
        return enc.blob(self.payload()).blob(self.signature)

    @classmethod
    def decode(cls, dec: Decoder) -> "Proposal":
        body = Decoder(dec.blob())
        signature = dec.blob()
        channel, chaincode, function = body.text(), body.text(), body.text()
        args = tuple(body.blob() for _ in range(body.u32()))
        creator = Certificate.from_bytes(body.blob())
        nonce, timestamp = body.blob(), body.u64()
        body.expect_end()
        return cls(channel, chaincode, function, args, creator, nonce, timestamp, signature)

    def signature_valid(self) -> bool:
        try:
            return verify(self.creator.public_key, self.payload(), self.signature)
        except TamperledError:
            return False


def make_proposal(
    creator: Enrollment,
    channel: str,
    chaincode: str,
    function: str,
    args: Sequence[str | bytes],
    *,
    timestamp: int = 0,
    nonce: Optional[bytes] = None,
) -> Proposal:
    args = tuple(a.encode("utf-8") if isinstance(a, str) else bytes(a) for a in args)
    unsigned = Proposal(
        channel,
        chaincode,
        function,
        args,
        creator.certificate,
        nonce if nonce is not None else os.urandom(NONCE_SIZE),
        timestamp,
    )
    return replace(unsigned, signature=creator.sign(unsigned.payload()))


def _endorsement_message(proposal_digest: bytes, rwset: bytes, response: bytes) -> bytes:
    return Encoder().raw(proposal_digest).blob(rwset).blob(response).getvalue()


@dataclass(frozen=True)
class Endorsement:
    endorser: Certificate
    proposal_digest: bytes
    rwset: bytes
    response: bytes
    signature: bytes

    def signature_valid(self) -> bool:
        try:
            return verify(
                self.endorser.public_key,
                _endorsement_message(self.proposal_digest, self.rwset, self.response),
                self.signature,
            )
        except TamperledError:
            return False

    def encode(self, enc: Encoder) -> Encoder:
        enc.blob(self.endorser.to_bytes()).raw(self.proposal_digest)
        return enc.blob(self.rwset).blob(self.response).blob(self.signature)

    @classmethod
    def decode(cls, dec: Decoder) -> "Endorsement":
        endorser = Certificate.from_bytes(dec.blob())
        return cls(endorser, dec.raw(32), dec.blob(), dec.blob(), dec.blob())


@dataclass(frozen=True)
class TransactionEnvelope:
    proposal: Proposal
    endorsements: tuple[Endorsement, ...]

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    def to_bytes(self) -> bytes:
        enc = self.proposal.encode(Encoder())
        enc.u32(len(self.endorsements))
        for e in self.endorsements:
            e.encode(enc)
        return enc.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TransactionEnvelope":
        dec = Decoder(data)
        proposal = Proposal.decode(dec)
        endorsements = tuple(Endorsement.decode(dec) for _ in range(dec.u32()))
        dec.expect_end()
        return cls(proposal, endorsements)


# --------------------------------------------------------------------------
# channel configuration


@dataclass(frozen=True)
class OrgMember:
    name: str
    anchor_peer: str = ""
    anchor_host: str = ""


@dataclass(frozen=True)
class ChannelConfig:
    name: str
    members: tuple[OrgMember, ...]
    policy_set: ChannelPolicySet
    chaincode_policies: Mapping[str, Policy]
    trusted_roots: TrustedRoots
    batch_max_count: int = DEFAULT_BATCH_MAX_COUNT
    batch_timeout: int = DEFAULT_BATCH_TIMEOUT_MS

    @property
    def member_orgs(self) -> frozenset[str]:
        return frozenset(m.name for m in self.members)

    def is_member(self, org: str) -> bool:
        return org.casefold() in {m.casefold() for m in self.member_orgs}

    def anchor_for(self, org: str) -> Optional[str]:
        for m in self.members:
            if m.name.casefold() == org.casefold():
                return m.anchor_peer or None
        return None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "members": [
                {"name": m.name, "anchor_peer": m.anchor_peer, "anchor_host": m.anchor_host}
                for m in self.members
            ],
            "policies": {
                "readers": [str(p) for p in self.policy_set.readers],
                "writers": [str(p) for p in self.policy_set.writers],
                "admins": [str(p) for p in self.policy_set.admins],
            },
            "chaincode_policies": {k: str(v) for k, v in sorted(self.chaincode_policies.items())},
            "trusted_roots": [
                {"name": r.name, "org": r.org, "kind": r.kind.value, "public_key": r.public_key.hex()}
                for r in sorted(self.trusted_roots, key=lambda r: r.name)
            ],
            "batch_max_count": self.batch_max_count,
            "batch_timeout": self.batch_timeout,
        }

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ChannelConfig":
        pol = raw["policies"]
        return cls(
            name=raw["name"],
            members=tuple(OrgMember(m["name"], m.get("anchor_peer", ""), m.get("anchor_host", "")) for m in raw["members"]),
            policy_set=ChannelPolicySet(
                tuple(parse_principal(p) for p in pol.get("readers", ())),
                tuple(parse_principal(p) for p in pol.get("writers", ())),
                tuple(parse_principal(p) for p in pol.get("admins", ())),
            ),
            chaincode_policies={k: parse_policy(v) for k, v in raw.get("chaincode_policies", {}).items()},
            trusted_roots=TrustedRoots(
                TrustedRoot(r["name"], r["org"], CAKind(r["kind"]), bytes.fromhex(r["public_key"]))
                for r in raw["trusted_roots"]
            ),
            batch_max_count=int(raw.get("batch_max_count", DEFAULT_BATCH_MAX_COUNT)),
            batch_timeout=int(raw.get("batch_timeout", DEFAULT_BATCH_TIMEOUT_MS)),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ChannelConfig":
        return cls.from_dict(json.loads(data))


@dataclass
class Channel:
    config: ChannelConfig
    genesis: Block

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def config_digest(self) -> bytes:
        return self.genesis.header.data_hash


def create_channel(config: ChannelConfig, *, timestamp: int = 0) -> Channel:
    """Validate ``config`` and seal the genesis block that carries it."""
    if config.batch_max_count < 1:
        raise InvalidConfig("batch_max_count must be at least 1")
    if config.batch_timeout < 1:
        raise InvalidConfig("batch_timeout must be positive")
    if not config.members:
        raise InvalidConfig("a channel needs member organizations")
    if not len(config.trusted_roots):
        raise InvalidConfig("a channel needs trusted CA roots")
    root_orgs = {o.casefold() for o in config.trusted_roots.orgs()}
    for member in config.members:
        if member.name.casefold() not in root_orgs:
            raise InvalidConfig(f"member {member.name} has no trusted CA root")
    for principal in (*config.policy_set.readers, *config.policy_set.writers, *config.policy_set.admins):
        if not config.is_member(principal.org):
            raise InvalidConfig(f"policy principal {principal} is not a channel member")
    genesis = ledger.seal_block(0, ledger.ZERO_DIGEST, [config.to_bytes()], timestamp=timestamp)
    return Channel(config, genesis.with_flags([ValidityFlag.VALID]))


def channel_from_genesis(genesis: Block) -> Channel:
    config = ChannelConfig.from_bytes(genesis.transactions[0])
    return Channel(config, genesis)


# --------------------------------------------------------------------------
# peers


@dataclass
class CommitEvent:
    channel: str
    block_number: int
    tx_id: str
    flag: ValidityFlag
    response: bytes


@dataclass
class PeerLedger:
    channel: Channel
    store: BlockStore
    state: WorldState = field(default_factory=WorldState)
    seen: set = field(default_factory=set)
    writers_of: dict = field(default_factory=dict)  # key -> tx_id of its last VALID writer

    @property
    def height(self) -> int:
        return self.store.height


def _replay_key(proposal: Proposal) -> tuple[bytes, bytes]:
    return proposal.creator.fingerprint(), proposal.tx_nonce


class Peer:
    def __init__(
        self,
        name: str,
        enrollment: Enrollment,
        tls: Optional[Enrollment] = None,
        *,
        host: str = "",
        ledger_dir: Optional[Path] = None,
    ):
        self.name = name
        self.enrollment = enrollment
        self.tls = tls
        self.host = host
        self.ledger_dir = Path(ledger_dir) if ledger_dir is not None else None
        self.chaincodes: dict[str, Chaincode] = {}
        self.ledgers: dict[str, PeerLedger] = {}
        self.listeners: list[Callable[["Peer", CommitEvent], None]] = []

    @property
    def org(self) -> str:
        return self.enrollment.org

    @property
    def certificate(self) -> Certificate:
        return self.enrollment.certificate

    def __repr__(self):
        return f"Peer({self.name!r}, org={self.org!r})"

    def install(self, chaincode: Chaincode) -> None:
        self.chaincodes[chaincode.name] = chaincode

    def ledger(self, channel: str) -> PeerLedger:
        try:
            return self.ledgers[channel]
        except KeyError:
            raise NotAMember(f"{self.name} has not joined channel {channel}") from None

    def _open_store(self, channel: str) -> BlockStore:
        if self.ledger_dir is None:
            return BlockStore()
        return BlockStore(self.ledger_dir / channel / "blocks" / self.name)

    def join(self, channel: Channel) -> PeerLedger:
        store = self._open_store(channel.name)
        pl = PeerLedger(channel, store)
        if store.height == 0:
            store.append(channel.genesis)
        else:
            check = ledger.verify_chain(store)
            if not isinstance(check, ledger.Ok):
                raise CorruptStore(f"{self.name}: stored chain fails verification at block "
                                   f"{check.block_number} ({check.reason})")
            if store.read_block(0) != channel.genesis:
                raise InvalidConfig(f"{self.name}: stored genesis does not match channel {channel.name}")
            self._replay(pl)
        self.ledgers[channel.name] = pl
        return pl

    def _replay(self, pl: PeerLedger) -> None:
        """Rebuild world state and replay protection from the stored blocks."""
        for block in pl.store.blocks():
            if block.number == 0:
                continue
            write_sets = []
            for raw, flag in zip(block.transactions, block.validity_flags):
                writes: Sequence = ()
                try:
                    env = TransactionEnvelope.from_bytes(raw)
                except (ValueError, TamperledError):
                    write_sets.append(writes)
                    continue
                if flag != ValidityFlag.INVALID_SIGNATURE:
                    pl.seen.add(_replay_key(env.proposal))
                if flag == ValidityFlag.VALID and env.endorsements:
                    writes = ReadWriteSet.from_bytes(env.endorsements[0].rwset).writes
                    for key, _ in writes:
                        pl.writers_of[key] = env.tx_id
                write_sets.append(writes)
            ledger.apply_writes(pl.state, block, write_sets)

    # -- endorsement -------------------------------------------------------

    def _authenticate_creator(self, pl: PeerLedger, proposal: Proposal) -> None:
        cfg = pl.channel.config
        if not validate_certificate(proposal.creator, cfg.trusted_roots):
            raise BadCertificate(f"creator {proposal.creator.subject} has no valid membership certificate")
        if not proposal.signature_valid():
            raise AccessDenied("proposal signature does not verify")
        if not check_channel_access(cfg.policy_set, proposal.creator, "write"):
            raise AccessDenied(f"{proposal.creator.org} {proposal.creator.role.value} may not write to {cfg.name}")

    def simulate(self, proposal: Proposal) -> tuple[bytes, ReadWriteSet]:
        pl = self.ledger(proposal.channel)
        self._authenticate_creator(pl, proposal)
        chaincode = self.chaincodes.get(proposal.chaincode)
        if chaincode is None:
            raise ChaincodeNotInstalled(f"{proposal.chaincode} is not installed on {self.name}")
        return execute(
            chaincode,
            pl.state,
            proposal.creator,
            proposal.function,
            proposal.args,
            timestamp=proposal.timestamp,
            tx_id=proposal.tx_id,
            channel_orgs=pl.channel.config.member_orgs,
        )

    def endorse(self, proposal: Proposal) -> Endorsement:
        response, rwset = self.simulate(proposal)
        digest = proposal.digest()
        rw = rwset.to_bytes()
        signature = self.enrollment.sign(_endorsement_message(digest, rw, response))
        return Endorsement(self.certificate, digest, rw, response, signature)

    # -- validation and commit ---------------------------------------------

    def _valid_endorsement_set(self, pl: PeerLedger, env: TransactionEnvelope):
        """Endorser identities whose signatures and certificates check out, and the rwset they agree on."""
        digest = env.proposal.digest()
        valid, rwsets = [], set()
        for e in env.endorsements:
            if e.proposal_digest != digest or e.endorser.role != Role.PEER:
                continue
            if not validate_certificate(e.endorser, pl.channel.config.trusted_roots):
                continue
            if not e.signature_valid():
                continue
            valid.append(e)
            rwsets.add((e.rwset, e.response))
        return valid, rwsets

    def validate_and_commit(self, block: Block, channel: Optional[str] = None) -> tuple[ValidityFlag, ...]:
        """Assign validity flags in transaction order, append the block, apply VALID writes."""
        channel = channel or self._channel_of(block)
        self.ledger(channel)
        pl = self.ledgers[channel]
        if block.number != pl.height or block.header.previous_hash != pl.store.tip_hash:
            raise BadLinkage(f"{self.name}: block {block.number} does not extend height {pl.height}")
        if ledger.compute_data_hash(block.transactions) != block.header.data_hash:
            raise BadLinkage(f"{self.name}: block {block.number} payload does not match its header")
        cfg = pl.channel.config
        flags, write_sets, responses, tx_ids = [], [], [], []
        overlay: dict[str, Optional[Version]] = {}
        block_seen: set = set()
        for index, raw in enumerate(block.transactions):
            flag, writes, response, tx_id = self._validate_tx(
                pl, cfg, raw, block.number, index, overlay, block_seen
            )
            flags.append(flag)
            write_sets.append(writes)
            responses.append(response)
            tx_ids.append(tx_id)
        flagged = block.with_flags(flags)
        pl.store.append(flagged)
        ledger.apply_writes(pl.state, flagged, write_sets)
        pl.seen |= block_seen
        for tx_id, flag, writes in zip(tx_ids, flags, write_sets):
            if flag == ValidityFlag.VALID:
                for key, _ in writes:
                    pl.writers_of[key] = tx_id
        for tx_id, flag, response in zip(tx_ids, flags, responses):
            event = CommitEvent(channel, block.number, tx_id, flag, response)
            for listener in list(self.listeners):
                listener(self, event)
        return tuple(flags)

    def _channel_of(self, block: Block) -> str:
        for name, pl in self.ledgers.items():
            if pl.height == block.number and pl.store.tip_hash == block.header.previous_hash:
                return name
        if len(self.ledgers) == 1:
            return next(iter(self.ledgers))
        raise BadLinkage(f"{self.name}: block {block.number} extends none of its channels")

    def _validate_tx(self, pl, cfg, raw, number, index, overlay, block_seen):
        try:
            env = TransactionEnvelope.from_bytes(raw)
        except (ValueError, TamperledError, UnicodeDecodeError):
            return ValidityFlag.INVALID_SIGNATURE, (), b"", ""
        proposal = env.proposal
        tx_id = proposal.tx_id
        if (
            proposal.channel != cfg.name
            or not validate_certificate(proposal.creator, cfg.trusted_roots)
            or not proposal.signature_valid()
            or not check_channel_access(cfg.policy_set, proposal.creator, "write")
        ):
            return ValidityFlag.INVALID_SIGNATURE, (), b"", tx_id
        key = _replay_key(proposal)
        if key in pl.seen or key in block_seen:
            return ValidityFlag.INVALID_REPLAY, (), b"", tx_id
        block_seen.add(key)
        policy = cfg.chaincode_policies.get(proposal.chaincode)
        valid, rwsets = self._valid_endorsement_set(pl, env)
        if policy is None or len(rwsets) != 1 or not evaluate_endorsement(policy, (e.endorser for e in valid)):
            return ValidityFlag.INVALID_ENDORSEMENT, (), b"", tx_id
        rw_bytes, response = next(iter(rwsets))
        try:
            rwset = ReadWriteSet.from_bytes(rw_bytes)
        except (ValueError, UnicodeDecodeError):
            return ValidityFlag.INVALID_ENDORSEMENT, (), b"", tx_id
        for read_key, read_version in rwset.reads:
            current = overlay[read_key] if read_key in overlay else pl.state.version(read_key)
            if current != read_version:
                return ValidityFlag.INVALID_MVCC, (), response, tx_id
        for write_key, value in rwset.writes:
            overlay[write_key] = None if value is None else Version(number, index)
        return ValidityFlag.VALID, rwset.writes, response, tx_id

    def query(self, proposal: Proposal) -> bytes:
        """Evaluate without ordering; nothing is endorsed or committed."""
        return self.simulate(proposal)[0]


def join_channel(peer: Peer, channel: Channel, certificate: Optional[Certificate] = None) -> PeerLedger:
    cert = certificate if certificate is not None else peer.certificate
    cfg = channel.config
    if not cfg.is_member(cert.org):
        raise NotAMember(f"organization {cert.org} is not a member of channel {cfg.name}")
    if cert.role != Role.PEER or not validate_certificate(cert, cfg.trusted_roots):
        raise BadCertificate(f"{cert.subject}: certificate not issued by a trusted {cert.org} CA")
    if cert != peer.certificate:
        raise BadCertificate(f"{peer.name} presented a certificate that is not its own")
    return peer.join(channel)


# --------------------------------------------------------------------------
# ordering


def assemble_envelope(proposal: Proposal, endorsements: Sequence[Endorsement]) -> TransactionEnvelope:
    if not endorsements:
        raise DivergentEndorsements("no endorsements to assemble")
    digest = proposal.digest()
    first = endorsements[0]
    for e in endorsements:
        if e.proposal_digest != digest:
            raise DivergentEndorsements("endorsement refers to a different proposal")
        if e.rwset != first.rwset or e.response != first.response:
            raise DivergentEndorsements(f"endorsement by {e.endorser.subject} diverges")
    return TransactionEnvelope(proposal, tuple(endorsements))


@dataclass
class _OrdererChannel:
    channel: Channel
    height: int
    tip_hash: bytes
    queue: deque = field(default_factory=deque)  # (enqueue_time, envelope)


class Orderer:
    """Solo ordering service: FIFO batching by count or timeout."""

    def __init__(self, name: str, enrollment: Enrollment, tls: Optional[Enrollment] = None,
                 *, host: str = "", seed: int = 0):
        self.name = name
        self.enrollment = enrollment
        self.tls = tls
        self.host = host
        self.seed = seed
        self.channels: dict[str, _OrdererChannel] = {}

    @property
    def org(self) -> str:
        return self.enrollment.org

    def add_channel(self, channel: Channel, height: int = 1, tip_hash: Optional[bytes] = None) -> None:
        tip = tip_hash if tip_hash is not None else ledger.compute_block_hash(channel.genesis.header)
        self.channels[channel.name] = _OrdererChannel(channel, height, tip)

    def broadcast(self, envelope: TransactionEnvelope, now: int = 0) -> str:
        proposal = envelope.proposal
        oc = self.channels.get(proposal.channel)
        if oc is None:
            raise BroadcastRejected(f"unknown channel {proposal.channel}")
        cfg = oc.channel.config
        if not validate_certificate(proposal.creator, cfg.trusted_roots):
            raise BroadcastRejected(f"creator {proposal.creator.subject} has no valid membership certificate")
        if not proposal.signature_valid():
            raise BroadcastRejected("envelope signature does not verify")
        if not check_channel_access(cfg.policy_set, proposal.creator, "write"):
            raise BroadcastRejected(f"{proposal.creator.org} may not write to {cfg.name}")
        oc.queue.append((now, envelope))
        return envelope.tx_id

    def pending(self, channel: str) -> int:
        return len(self.channels[channel].queue)

    def oldest_enqueue(self, channel: str) -> Optional[int]:
        queue = self.channels[channel].queue
        return queue[0][0] if queue else None

    def block_nonce(self, channel: str, number: int) -> int:
        return random.Random(f"{self.seed}|{channel}|{number}").getrandbits(64)

    def cut_block(self, channel: str, now: int = 0, *, force: bool = False) -> Optional[Block]:
        """Cut the next block if the batch is full, the timeout has passed, or ``force``."""
        oc = self.channels[channel]
        cfg = oc.channel.config
        if not oc.queue:
            return None
        full = len(oc.queue) >= cfg.batch_max_count
        expired = now - oc.queue[0][0] >= cfg.batch_timeout
        if not (full or expired or force):
            return None
        count = min(len(oc.queue), cfg.batch_max_count)
        txs = [oc.queue.popleft()[1].to_bytes() for _ in range(count)]
        block = ledger.seal_block(
            oc.height, oc.tip_hash, txs, nonce=self.block_nonce(channel, oc.height), timestamp=now
        )
        oc.height += 1
        oc.tip_hash = ledger.compute_block_hash(block.header)
        return block


def assemble_and_broadcast(client: Enrollment, proposal: Proposal, endorsements: Sequence[Endorsement],
                           orderer: Orderer, now: int = 0) -> str:
    if proposal.creator != client.certificate:
        raise BroadcastRejected("client may only submit its own proposals")
    return orderer.broadcast(assemble_envelope(proposal, endorsements), now)


# --------------------------------------------------------------------------
# simulated network


@dataclass(frozen=True)
class LatencyModel:
    """Logical-time costs in milliseconds."""

    link: int = 2
    endorse: int = 4
    order: int = 1
    validate_tx: int = 1
    commit_block: int = 3


@dataclass
class TxHandle:
    tx_id: str
    proposal: Proposal
    submit_time: int
    client_org: str
    status: str = "pending"  # pending | committed | failed
    flag: Optional[ValidityFlag] = None
    error: Optional[TamperledError] = None
    response: bytes = b""
    commit_time: Optional[int] = None
    block_number: Optional[int] = None
    callbacks: list = field(default_factory=list)

    @property
    def done(self) -> bool:
        return self.status != "pending"

    @property
    def valid(self) -> bool:
        return self.flag == ValidityFlag.VALID

    @property
    def latency_ms(self) -> Optional[int]:
        return None if self.commit_time is None else self.commit_time - self.submit_time

    def _finish(self, status, **changes):
        if self.done:
            return
        self.status = status
        for name, value in changes.items():
            setattr(self, name, value)
        for cb in self.callbacks:
            cb(self)


def transport_handshake(a, b, roots: TrustedRoots) -> None:
    """Mutual check of transport certificates between two nodes.

    Clients carry no transport certificate; for them only the node side is
    checked and the client is authenticated by its signed proposals.
    """
    for side in (a, b):
        tls = getattr(side, "tls", None)
        if tls is None:
            if isinstance(side, (Peer, Orderer)):
                raise HandshakeFailed(f"{side.name} has no transport certificate")
            continue
        cert = tls.certificate
        if cert.org.casefold() != side.org.casefold() or not validate_certificate(cert, roots, CAKind.TRANSPORT):
            raise HandshakeFailed(f"transport certificate of {getattr(side, 'name', cert.subject)} rejected")


def _node_name(node) -> str:
    return getattr(node, "name", None) or f"client:{node.org}/{node.subject}"


class FabricNetwork:
    """Peers, a solo orderer and one or more channels on a shared event loop."""

    def __init__(self, orderer: Orderer, *, latency: LatencyModel = LatencyModel(),
                 sim: Optional[Simulation] = None):
        self.sim = sim or Simulation()
        self.latency = latency
        self.orderer = orderer
        self.peers: dict[str, Peer] = {}
        self.channels: dict[str, Channel] = {}
        self.handles: dict[str, TxHandle] = {}
        self._resources: dict[str, Resource] = {}
        self._links: dict[tuple[str, str], bool] = {}
        self._arrivals: dict[str, list] = {}
        self._timers: set = set()
        self._resources[orderer.name] = Resource(self.sim)

    # -- topology ----------------------------------------------------------

    def add_peer(self, peer: Peer) -> Peer:
        self.peers[peer.name] = peer
        self._resources[peer.name] = Resource(self.sim)
        peer.listeners.append(self._on_commit)
        return peer

    def add_channel(self, channel: Channel) -> None:
        self.channels[channel.name] = channel
        if channel.name not in self.orderer.channels:
            self.orderer.add_channel(channel)

    def join(self, peer: Peer, channel: str) -> PeerLedger:
        ch = self.channels[channel]
        self.link(peer, self.orderer, ch.config.trusted_roots)
        return join_channel(peer, ch)

    def link(self, a, b, roots: TrustedRoots) -> None:
        key = tuple(sorted((_node_name(a), _node_name(b))))
        if key not in self._links:
            transport_handshake(a, b, roots)
            self._links[key] = True

    def channel_peers(self, channel: str) -> list[Peer]:
        return [p for p in self.peers.values() if channel in p.ledgers]

    def endorsers_for(self, channel: str, chaincode: str) -> list[Peer]:
        return [p for p in self.channel_peers(channel) if chaincode in p.chaincodes]

    def anchor_peer(self, channel: str, org: str) -> Peer:
        cfg = self.channels[channel].config
        name = cfg.anchor_for(org)
        if name and name in self.peers and channel in self.peers[name].ledgers:
            return self.peers[name]
        for peer in self.channel_peers(channel):
            if peer.org.casefold() == org.casefold():
                return peer
        peers = self.channel_peers(channel)
        if not peers:
            raise NotAMember(f"no peer has joined {channel}")
        return peers[0]

    # -- async transaction flow --------------------------------------------

    def submit(self, creator: Enrollment, channel: str, chaincode: str, function: str,
               args: Sequence[str | bytes], *, endorsers: Optional[Sequence[Peer]] = None,
               nonce: Optional[bytes] = None) -> TxHandle:
        proposal = make_proposal(creator, channel, chaincode, function, args,
                                 timestamp=self.sim.now, nonce=nonce)
        return self.submit_proposal(proposal, endorsers=endorsers)

    def submit_proposal(self, proposal: Proposal, *, endorsers: Optional[Sequence[Peer]] = None) -> TxHandle:
        """Send an already-signed proposal through endorsement, ordering and commit."""
        handle = TxHandle(proposal.tx_id, proposal, self.sim.now, proposal.creator.org)
        if proposal.tx_id not in self.handles:
            self.handles[proposal.tx_id] = handle
        if proposal.channel not in self.channels:
            handle._finish("failed", error=NotAMember(f"unknown channel {proposal.channel}"))
            return handle
        targets = list(endorsers) if endorsers is not None else self.endorsers_for(proposal.channel, proposal.chaincode)
        if not targets:
            handle._finish("failed", error=ChaincodeNotInstalled(f"no peer has {proposal.chaincode} installed"))
            return handle
        roots = self.channels[proposal.channel].config.trusted_roots
        replies: dict[str, object] = {}
        for peer in targets:
            try:
                self.link(peer, proposal.creator, roots)
            except HandshakeFailed as exc:
                replies[peer.name] = exc
                continue
            self.sim.schedule(self.latency.link, self._endorse_at, peer, proposal, handle, targets, replies)
        if len(replies) == len(targets):
            self._endorsements_done(handle, targets, replies)
        return handle

    def _endorse_at(self, peer, proposal, handle, targets, replies):
        def run():
            try:
                result = peer.endorse(proposal)
            except TamperledError as exc:
                result = exc
            self.sim.schedule(self.latency.link, self._endorsement_reply, peer, result, handle, targets, replies)
        self._resources[peer.name].submit(self.latency.endorse, run)

    def _endorsement_reply(self, peer, result, handle, targets, replies):
        replies[peer.name] = result
        if len(replies) == len(targets):
            self._endorsements_done(handle, targets, replies)

    def _endorsements_done(self, handle, targets, replies):
        results = [replies[p.name] for p in targets]
        errors = [r for r in results if isinstance(r, Exception)]
        if errors:
            handle._finish("failed", error=errors[0])
            return
        try:
            envelope = assemble_envelope(handle.proposal, results)
        except DivergentEndorsements as exc:
            handle._finish("failed", error=exc)
            return
        self.sim.schedule(self.latency.link, self._orderer_arrival, envelope, handle)

    def _orderer_arrival(self, envelope, handle):
        channel = envelope.proposal.channel
        bucket = self._arrivals.setdefault(channel, [])
        if not bucket:
            self.sim.schedule(0, self._flush_arrivals, channel, priority=LATE)
        bucket.append((envelope, handle))

    def _flush_arrivals(self, channel):
        # simultaneous arrivals are ordered by tx_id
        bucket = sorted(self._arrivals.pop(channel, []), key=lambda item: item[0].tx_id)
        for envelope, handle in bucket:
            try:
                self.orderer.broadcast(envelope, self.sim.now)
            except TamperledError as exc:
                handle._finish("failed", error=exc)
                continue
            if self.orderer.pending(channel) == 1:
                self._arm_timer(channel)
        self._cut_ready(channel)

    def _arm_timer(self, channel):
        oldest = self.orderer.oldest_enqueue(channel)
        if oldest is None:
            return
        fire = oldest + self.channels[channel].config.batch_timeout
        if (channel, fire) not in self._timers:
            self._timers.add((channel, fire))
            self.sim.at(fire, self._timeout, channel, fire)

    def _timeout(self, channel, fire):
        self._timers.discard((channel, fire))
        self._cut_ready(channel)

    def _cut_ready(self, channel):
        while True:
            block = self.orderer.cut_block(channel, self.sim.now)
            if block is None:
                break
            self._resources[self.orderer.name].submit(self.latency.order, self._deliver, channel, block)
        self._arm_timer(channel)

    def _deliver(self, channel, block):
        cost = self.latency.commit_block + self.latency.validate_tx * len(block.transactions)
        for peer in self.channel_peers(channel):
            self.sim.schedule(self.latency.link, self._resources[peer.name].submit, cost,
                              self._commit_at, peer, channel, block)

    def _commit_at(self, peer, channel, block):
        try:
            peer.validate_and_commit(block, channel)
        except TamperledError as exc:
            log.error("%s rejected block %d: %s", peer.name, block.number, exc)

    def _on_commit(self, peer: Peer, event: CommitEvent):
        handle = self.handles.get(event.tx_id)
        if handle is None or handle.done:
            return
        if peer is not self.anchor_peer(event.channel, handle.client_org):
            return
        finish = partial(handle._finish, "committed", flag=event.flag, response=event.response,
                         block_number=event.block_number, commit_time=self.sim.now + self.latency.link)
        self.sim.schedule(self.latency.link, finish)

    # -- synchronous helpers -----------------------------------------------

    def run(self, until: Optional[int] = None) -> None:
        self.sim.run(until=until)

    def drain(self) -> None:
        self.sim.run()

    def wait(self, handles: Iterable[TxHandle]) -> None:
        handles = list(handles)
        self.sim.run(stop=lambda: all(h.done for h in handles))

    def invoke(self, creator: Enrollment, channel: str, chaincode: str, function: str,
               args: Sequence[str | bytes], **kwargs) -> TxHandle:
        handle = self.submit(creator, channel, chaincode, function, args, **kwargs)
        self.wait([handle])
        return handle

    def query(self, creator: Enrollment, channel: str, chaincode: str, function: str,
              args: Sequence[str | bytes], *, peer: Optional[Peer] = None) -> bytes:
        proposal = make_proposal(creator, channel, chaincode, function, args, timestamp=self.sim.now)
        target = peer or self.anchor_peer(channel, creator.org)
        self.link(target, creator, self.channels[channel].config.trusted_roots)
        return target.query(proposal)

    def state_digests(self, channel: str) -> dict[str, bytes]:
        return {p.name: p.ledgers[channel].state.digest() for p in self.channel_peers(channel)}
