import dataclasses

import pytest

from tamperled.chaincode import ReadWriteSet
from tamperled.config import build_network, parse_config
from tamperled.errors import (
    AccessDenied,
    BadCertificate,
    BadLinkage,
    BroadcastRejected,
    ChaincodeError,
    DivergentEndorsements,
    HandshakeFailed,
    InvalidConfig,
    NotAMember,
)
from tamperled.ledger import BlockStore, Ok, ValidityFlag, compute_block_hash, verify_chain
from tamperled.membership import CAKind, Role, create_ca, validate_certificate
from tamperled.network import (
    ChannelConfig,
    Peer,
    TransactionEnvelope,
    assemble_and_broadcast,
    assemble_envelope,
    channel_from_genesis,
    create_channel,
    join_channel,
    make_proposal,
)
from tamperled.policy import evaluate_endorsement, parse_policy

from .conftest import prototype_raw

CC = "silomonitor"


def peers(harness):
    net = harness.network
    return [net.peers[n] for n in ("peer@IoT", "peer@org1", "peer@org2")]


def endorse_all(harness, proposal, which=None):
    return [p.endorse(proposal) for p in (which or peers(harness))]


def commit_everywhere(harness, block):
    return [p.validate_and_commit(block) for p in peers(harness)]


def test_genesis_holds_config(harness):
    channel = harness.network.channels["silochannel"]
    assert channel.genesis.number == 0
    assert channel.config.member_orgs == frozenset({"IoT", "Org1", "Org2", "Orderer"})
    assert ChannelConfig.from_bytes(channel.genesis.transactions[0]) == channel.config
    assert channel_from_genesis(channel.genesis).config == channel.config
    store = BlockStore()
    store.append(channel.genesis)
    assert verify_chain(store) == Ok(1)


def test_bad_batch_count_rejected(harness):
    cfg = harness.network.channels["silochannel"].config
    with pytest.raises(InvalidConfig):
        create_channel(dataclasses.replace(cfg, batch_max_count=0))


def test_anchor_of_non_member_rejected(harness):
    cfg = harness.network.channels["silochannel"].config
    members = cfg.members + (dataclasses.replace(cfg.members[0], name="Org3"),)
    with pytest.raises(InvalidConfig):
        create_channel(dataclasses.replace(cfg, members=members[1:]))


def test_join_errors(harness):
    channel = harness.network.channels["silochannel"]
    impostor_ca = create_ca("IoT-CA", "IoT", CAKind.IDENTITY)
    rogue = Peer("peer@rogue", impostor_ca.enroll("peer@rogue", Role.PEER))
    with pytest.raises(BadCertificate):
        join_channel(rogue, channel)
    org3 = Peer("peer@org3", create_ca("Org3-CA", "Org3", CAKind.IDENTITY).enroll("peer@org3", Role.PEER))
    with pytest.raises(NotAMember):
        join_channel(org3, channel)
    good = Peer("peer2@IoT", harness.registry.for_org("IoT").enroll("peer2@IoT", Role.PEER))
    assert join_channel(good, channel).height == 1


def test_handshake_requires_trusted_transport_cert(harness):
    net = harness.network
    iot = harness.registry.for_org("IoT")
    rogue_tls = create_ca("IoT-TLS-CA", "IoT", CAKind.TRANSPORT).enroll("p-tls", Role.PEER)
    peer = Peer("peer3@IoT", iot.enroll("peer3@IoT", Role.PEER), rogue_tls)
    net.add_peer(peer)
    with pytest.raises(HandshakeFailed):
        net.join(peer, "silochannel")
    no_tls = net.add_peer(Peer("peer4@IoT", iot.enroll("peer4@IoT", Role.PEER)))
    with pytest.raises(HandshakeFailed):
        net.join(no_tls, "silochannel")


def test_record_reading_rwset_shape(registered):
    device = registered.identity("silo-device-1")
    proposal = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", "25.0", "60.0", "10.0"])
    e = registered.network.peers["peer@IoT"].endorse(proposal)
    rw = ReadWriteSet.from_bytes(e.rwset)
    assert [k for k, _ in rw.reads] == ["device/silo-1", "latest/silo-1"]
    assert dict(rw.reads)["latest/silo-1"] is None  # absent before the first reading
    assert [k for k, _ in rw.writes] == ["hist/silo-1/0000000001", "latest/silo-1"]
    assert e.response == b"1" and e.signature_valid()
    # nothing applied at endorsement
    assert registered.network.peers["peer@IoT"].ledgers["silochannel"].state.get("latest/silo-1") is None


def test_endorse_access_denied_when_not_writer():
    raw = prototype_raw()
    raw["channels"][0]["policies"]["writers"] = ["iot.any", "org1.any"]
    harness = build_network(parse_config(raw))
    bob = harness.identity("bob")
    proposal = make_proposal(bob, "silochannel", CC, "ReadTemperature", ["silo-1"])
    with pytest.raises(AccessDenied):
        harness.network.peers["peer@org1"].endorse(proposal)
    with pytest.raises(BroadcastRejected):
        harness.network.orderer.broadcast(TransactionEnvelope(proposal, ()))


def test_unknown_function(harness):
    proposal = make_proposal(harness.admin("IoT"), "silochannel", CC, "NoSuchFn", [])
    with pytest.raises(ChaincodeError) as info:
        harness.network.peers["peer@IoT"].endorse(proposal)
    assert info.value.code == "UNKNOWN_FUNCTION"


def test_assembly(registered):
    device = registered.identity("silo-device-1")
    a = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", "25.0", "60.0", "10.0"])
    b = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", "26.0", "60.0", "10.0"], nonce=a.tx_nonce)
    ea = endorse_all(registered, a)
    env = assemble_envelope(a, ea[:2])
    assert env.tx_id == a.tx_id == a.digest().hex()
    assert TransactionEnvelope.from_bytes(env.to_bytes()) == env
    forged = dataclasses.replace(endorse_all(registered, b)[0], proposal_digest=a.digest())
    with pytest.raises(DivergentEndorsements):
        assemble_envelope(a, [ea[0], forged])
    with pytest.raises(BroadcastRejected):
        assemble_and_broadcast(registered.identity("alice"), a, ea, registered.network.orderer)


def _queue(harness, n, now=0):
    admin = harness.admin("IoT")
    orderer = harness.network.orderer
    for i in range(n):
        p = make_proposal(admin, "silochannel", CC, "RegisterDevice", [f"dev-{i}", "IoT"], timestamp=now)
        assemble_and_broadcast(admin, p, endorse_all(harness, p), orderer, now)


def test_cut_by_count_timeout_and_empty(harness):
    orderer = harness.network.orderer
    assert orderer.cut_block("silochannel", now=10_000) is None
    _queue(harness, 12)
    block = orderer.cut_block("silochannel", now=1)
    assert len(block.transactions) == 10 and block.number == 1
    assert orderer.cut_block("silochannel", now=100) is None  # 2 left, timeout not reached
    _queue(harness, 1, now=100)
    block2 = orderer.cut_block("silochannel", now=500)
    assert len(block2.transactions) == 3
    assert block2.header.previous_hash == compute_block_hash(block.header)
    assert block.header.nonce != block2.header.nonce


def test_fifo_order_preserved(harness):
    _queue(harness, 5)
    block = harness.network.orderer.cut_block("silochannel", force=True)
    args = [TransactionEnvelope.from_bytes(t).proposal.args[0] for t in block.transactions]
    assert args == [f"dev-{i}".encode() for i in range(5)]


def test_same_key_conflict_in_one_block(registered):
    device = registered.identity("silo-device-1")
    orderer = registered.network.orderer
    for temp in ("25.0", "26.0"):
        p = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", temp, "60.0", "10.0"])
        assemble_and_broadcast(device, p, endorse_all(registered, p), orderer)
    block = orderer.cut_block("silochannel", force=True)
    flags = commit_everywhere(registered, block)
    assert flags[0] == (ValidityFlag.VALID, ValidityFlag.INVALID_MVCC)
    assert len(set(flags)) == 1
    assert len(set(registered.network.state_digests("silochannel").values())) == 1


def test_policy_failure_flags_invalid_endorsement(registered):
    device = registered.identity("silo-device-1")
    p = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", "25.0", "60.0", "10.0"])
    orderer = registered.network.orderer
    one = endorse_all(registered, p)[:1]
    assemble_and_broadcast(device, p, one, orderer)
    block = orderer.cut_block("silochannel", force=True)
    assert commit_everywhere(registered, block)[0] == (ValidityFlag.INVALID_ENDORSEMENT,)


def test_replayed_envelope_rejected(registered):
    device = registered.identity("silo-device-1")
    orderer = registered.network.orderer
    p = make_proposal(device, "silochannel", CC, "RecordReading", ["silo-1", "25.0", "60.0", "10.0"])
    env = assemble_envelope(p, endorse_all(registered, p))
    orderer.broadcast(env)
    commit_everywhere(registered, orderer.cut_block("silochannel", force=True))
    digest = registered.network.state_digests("silochannel")
    orderer.broadcast(env)
    orderer.broadcast(env)
    flags = commit_everywhere(registered, orderer.cut_block("silochannel", force=True))
    assert flags[0] == (ValidityFlag.INVALID_REPLAY, ValidityFlag.INVALID_REPLAY)
    assert registered.network.state_digests("silochannel") == digest


def test_block_that_does_not_extend_tip_is_rejected(registered):
    _queue(registered, 1)
    block = registered.network.orderer.cut_block("silochannel", force=True)
    peer = registered.network.peers["peer@IoT"]
    peer.validate_and_commit(block)
    with pytest.raises(BadLinkage):
        peer.validate_and_commit(block)


def test_async_flow_uses_timeout_and_notifies(harness):
    net = harness.network
    handle = net.invoke(harness.admin("IoT"), "silochannel", CC, "RegisterDevice", ["silo-9", "IoT"])
    assert handle.valid and handle.block_number == 1
    assert handle.latency_ms >= 500  # one transaction waits for the batch timeout


def test_no_unendorsed_writes_audit(registered):
    net = registered.network
    device = registered.identity("silo-device-1")
    handles = [net.submit(device, "silochannel", CC, "RecordReading", ["silo-1", f"2{i}.0", "50.0", "1.0"])
               for i in range(6)]
    net.wait(handles)
    peer = net.peers["peer@org2"]
    pl = peer.ledgers["silochannel"]
    policy = pl.channel.config.chaincode_policies[CC]
    roots = pl.channel.config.trusted_roots
    valid_at = {}
    for block in pl.store.blocks():
        if block.number == 0:
            continue
        for index, (raw, flag) in enumerate(zip(block.transactions, block.validity_flags)):
            if flag != ValidityFlag.VALID:
                continue
            env = TransactionEnvelope.from_bytes(raw)
            endorsers = [e.endorser for e in env.endorsements
                         if e.signature_valid() and validate_certificate(e.endorser, roots)]
            assert evaluate_endorsement(policy, endorsers)
            valid_at[(block.number, index)] = env
    for key, (_, version) in pl.state.entries.items():
        assert tuple(version) in valid_at, key


def test_same_schedule_same_chain():
    def run():
        h = build_network(parse_config(prototype_raw()))
        net = h.network
        net.invoke(h.admin("IoT"), "silochannel", CC, "RegisterDevice", ["silo-1", "IoT"])
        dev = h.identity("silo-device-1")
        hs = [net.submit(dev, "silochannel", CC, "RecordReading", ["silo-1", "20.0", "50.0", "1.0"],
                         nonce=bytes([i]) * 24) for i in range(5)]
        net.wait(hs)
        return [p.ledgers["silochannel"].state.digest() for p in net.peers.values()]

    assert run() == run()
