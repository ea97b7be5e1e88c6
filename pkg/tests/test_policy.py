from collections import namedtuple
from itertools import combinations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from tamperled.errors import PolicySyntaxError
from tamperled.policy import (
    And,
    ChannelPolicySet,
    Leaf,
    Or,
    OutOf,
    Principal,
    check_channel_access,
    depth,
    evaluate_endorsement,
    parse_policy,
    parse_principal,
)

from .oracles import truth_table

Ident = namedtuple("Ident", "org role subject", defaults=("someone",))
PRINCIPALS = [Principal("IoT", "peer"), Principal("Org1", "peer"), Principal("Org2", "peer"), Principal("Org1", "admin")]
ENDORSERS = [Ident(p.org, p.role) for p in PRINCIPALS]


def to_policy(tree):
    if tree[0] == "leaf":
        return Leaf(PRINCIPALS[tree[1]])
    kids = tuple(to_policy(k) for k in tree[-1])
    return {"and": lambda: And(kids), "or": lambda: Or(kids)}.get(tree[0], lambda: OutOf(tree[1], kids))()


def subset(mask):
    return [ENDORSERS[i] for i in range(4) if mask >> i & 1]


def trees(max_depth=3):
    leaf = st.integers(0, 3).map(lambda i: ("leaf", i))
    def extend(inner):
        kids = st.lists(inner, min_size=1, max_size=4).map(tuple)
        return st.one_of(
            kids.map(lambda k: ("and", k)),
            kids.map(lambda k: ("or", k)),
            kids.flatmap(lambda k: st.integers(1, len(k)).map(lambda n: ("outof", n, k))),
        )
    return st.recursive(leaf, extend, max_leaves=8)


def test_documented_examples():
    org1, org2, iot = (Ident(o, "peer") for o in ("Org1", "Org2", "IoT"))
    assert evaluate_endorsement(parse_policy("outof(2, org1.peer, org2.peer, iot.peer)"), [org1, iot])
    assert not evaluate_endorsement(parse_policy("and(org1.peer, org2.peer)"), [org1])


def test_duplicate_endorsers_count_once():
    policy = parse_policy("outof(2, org1.peer, org2.peer, iot.peer)")
    assert not evaluate_endorsement(policy, [Ident("Org1", "peer", "p0"), Ident("Org1", "peer", "p1")])


@given(trees(), st.integers(0, 15))
def test_random_trees_match_truth_table(tree, mask):
    assert evaluate_endorsement(to_policy(tree), subset(mask)) == bool(truth_table(tree, 4) >> mask & 1)


@given(trees(), st.integers(0, 15), st.integers(0, 3))
def test_monotone(tree, mask, extra):
    policy = to_policy(tree)
    if evaluate_endorsement(policy, subset(mask)):
        assert evaluate_endorsement(policy, subset(mask | 1 << extra))


def test_outof_extremes_equal_or_and():
    leaves = [Leaf(p) for p in PRINCIPALS]
    for k in range(1, 5):
        for kids in combinations(leaves, k):
            for mask in range(16):
                s = subset(mask)
                assert evaluate_endorsement(OutOf(1, kids), s) == evaluate_endorsement(Or(kids), s)
                assert evaluate_endorsement(OutOf(k, kids), s) == evaluate_endorsement(And(kids), s)


@given(trees())
def test_print_parse_round_trip(tree):
    policy = to_policy(tree)
    assert str(parse_policy(str(policy))) == str(policy)
    assert depth(parse_policy(str(policy))) == depth(policy)


@pytest.mark.parametrize("text", [
    "", "org1", "org1.", "org1.boss", "and()", "outof(0, org1.peer)", "outof(3, org1.peer, org2.peer)",
    "or(org1.peer,", "and(org1.peer) extra", "xor(org1.peer)", "outof(x, org1.peer)",
])
def test_syntax_errors(text):
    with pytest.raises(PolicySyntaxError):
        parse_policy(text)


def test_principal_case_insensitive_org():
    assert parse_principal("iot.admin").matches(Ident("IoT", "admin"))
    assert not parse_principal("iot.admin").matches(Ident("IoT", "peer"))
    assert parse_principal("org2.any").matches(Ident("Org2", "client"))


def test_outof_bounds():
    with pytest.raises(ValueError):
        OutOf(0, (Leaf(PRINCIPALS[0]),))
    with pytest.raises(ValueError):
        ChannelPolicySet(readers=(PRINCIPALS[0],))


def test_channel_access_examples():
    policies = ChannelPolicySet(readers=(Principal("Org1"),), writers=(Principal("IoT", "device"),),
                                admins=(Principal("IoT", "admin"),))
    assert check_channel_access(policies, Ident("Org1", "client"), "read")
    assert not check_channel_access(policies, Ident("Org2", "client"), "write")
    assert check_channel_access(policies, Ident("IoT", "admin"), "write")
    assert check_channel_access(policies, Ident("IoT", "admin"), "admin")
    assert not check_channel_access(policies, Ident("IoT", "device"), "admin")
    with pytest.raises(ValueError):
        check_channel_access(policies, Ident("IoT", "admin"), "delete")


ORGS = ["IoT", "Org1", "Org2", "Orderer"]
ROLES = ["admin", "peer", "client", "orderer", "device"]


@given(st.sampled_from(ORGS), st.sampled_from(ROLES), st.text(max_size=12), st.text(max_size=12))
def test_access_ignores_subject(org, role, name_a, name_b):
    policies = ChannelPolicySet(readers=(Principal("Org1"), Principal("IoT")),
                                writers=(Principal("IoT", "device"), Principal("Org2", "client")),
                                admins=(Principal("IoT", "admin"),))
    for action in ("read", "write", "admin"):
        assert (check_channel_access(policies, Ident(org, role, name_a), action)
                == check_channel_access(policies, Ident(org, role, name_b), action))
