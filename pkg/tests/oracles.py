"""Independent reference implementations used to check the library.

Nothing here imports hashing, policy or contract code from ``tamperled``;
the only shared pieces are data decoders needed to read committed blocks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

# -- SHA-256, straight from the FIPS 180-4 description ----------------------

_K = [
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
]
_H0 = [0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A, 0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19]
_MASK = 0xFFFFFFFF


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & _MASK


def sha256(message: bytes) -> bytes:
    bit_len = len(message) * 8
    padded = message + b"\x80" + b"\x00" * ((55 - len(message)) % 64) + bit_len.to_bytes(8, "big")
    h = list(_H0)
    for chunk in range(0, len(padded), 64):
        w = [int.from_bytes(padded[chunk + 4 * i: chunk + 4 * i + 4], "big") for i in range(16)]
        for i in range(16, 64):
            s0 = _rotr(w[i - 15], 7) ^ _rotr(w[i - 15], 18) ^ (w[i - 15] >> 3)
            s1 = _rotr(w[i - 2], 17) ^ _rotr(w[i - 2], 19) ^ (w[i - 2] >> 10)
            w.append((w[i - 16] + s0 + w[i - 7] + s1) & _MASK)
        a, b, c, d, e, f, g, hh = h
        for i in range(64):
            t1 = (hh + (_rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)) + ((e & f) ^ (~e & g)) + _K[i] + w[i]) & _MASK
            t2 = ((_rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c))) & _MASK
            a, b, c, d, e, f, g, hh = (t1 + t2) & _MASK, a, b, c, (d + t1) & _MASK, e, f, g
        h = [(x + y) & _MASK for x, y in zip(h, (a, b, c, d, e, f, g, hh))]
    return b"".join(x.to_bytes(4, "big") for x in h)


def header_layout(number: int, previous_hash: bytes, data_hash: bytes, nonce: int, timestamp: int) -> bytes:
    """The documented 88-byte header: u64 | 32 | 32 | u64 | u64, big-endian."""
    return (number.to_bytes(8, "big") + previous_hash + data_hash
            + nonce.to_bytes(8, "big") + timestamp.to_bytes(8, "big"))


# -- endorsement policies as truth tables -----------------------------------
#
# A tree is ("leaf", i) | ("and", kids) | ("or", kids) | ("outof", n, kids).
# Its table is a 2^P-bit mask: bit s is set iff endorser subset s satisfies it.

def leaf_table(index: int, principals: int) -> int:
    return sum(1 << s for s in range(1 << principals) if s >> index & 1)


def truth_table(tree, principals: int) -> int:
    full = (1 << (1 << principals)) - 1
    kind = tree[0]
    if kind == "leaf":
        return leaf_table(tree[1], principals)
    kids = [truth_table(k, principals) for k in tree[-1]]
    if kind == "and":
        out = full
        for t in kids:
            out &= t
        return out
    if kind == "or":
        out = 0
        for t in kids:
            out |= t
        return out
    n = tree[1]
    out = 0
    for s in range(1 << principals):
        if sum(t >> s & 1 for t in kids) >= n:
            out |= 1 << s
    return out


def tree_depth(tree) -> int:
    return 1 if tree[0] == "leaf" else 1 + max(tree_depth(k) for k in tree[-1])


def _gates(kids):
    yield ("and", kids)
    yield ("or", kids)
    for n in range(1, len(kids) + 1):
        yield ("outof", n, kids)


def enumerate_trees(principals: int = 4):
    """Every tree of depth <= 3 over ``principals`` leaves, within fan-out bounds.

    Depth 2: gates over every 2..P-subset of distinct leaves.
    Depth 3: gates over every pair from the depth <= 2 pool (at least one
    gate), and every triple drawn from leaves plus two-leaf gates.
    """
    leaves = [("leaf", i) for i in range(principals)]
    depth2 = [g for k in range(2, principals + 1) for kids in combinations(leaves, k) for g in _gates(kids)]
    yield from leaves
    yield from depth2
    pool = leaves + depth2
    for kids in combinations(pool, 2):
        if any(k[0] != "leaf" for k in kids):
            yield from _gates(kids)
    small = leaves + [g for g in depth2 if len(g[-1]) == 2]
    for kids in combinations(small, 3):
        if any(k[0] != "leaf" for k in kids):
            yield from _gates(kids)


# -- silo contract, re-implemented for serial execution ---------------------

def _tenths(text: str) -> int:
    whole, _, frac = text.partition(".")
    sign = -1 if whole.startswith("-") else 1
    return sign * (abs(int(whole)) * 10 + int((frac or "0")[:1]))


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class SerialSilo:
    """Executes the committed VALID transactions one at a time, in order.

    ``state`` maps key -> (value bytes, (block, tx)).
    """

    state: dict = field(default_factory=dict)

    def version(self, key):
        entry = self.state.get(key)
        return None if entry is None else entry[1]

    def execute(self, function, args, timestamp, version):
        writes = {}
        if function == "RegisterDevice":
            device_id, owner = args
            writes[f"device/{device_id}"] = _json({"authorized_readers": [], "device_id": device_id,
                                                   "owner_org": owner, "registered_at": timestamp})
        elif function == "RecordReading":
            device_id, t, h, n = args
            latest = self.state.get(f"latest/{device_id}")
            seq = 1 if latest is None else json.loads(latest[0])["seq"] + 1
            value = _json({"device_id": device_id, "humidity": _tenths(h), "nh3": _tenths(n), "seq": seq,
                           "temperature": _tenths(t), "timestamp": timestamp})
            writes[f"latest/{device_id}"] = value
            writes[f"hist/{device_id}/{seq:010d}"] = value
        elif function not in ("ReadTemperature", "GetHistory"):
            raise NotImplementedError(function)
        for key, value in writes.items():
            self.state[key] = (value, version)
        return writes


def mvcc_ok(reads, versions) -> bool:
    """A read set is current iff every recorded version equals the oracle's."""
    return all(versions(key) == seen for key, seen in reads)


def stats_fold(samples):
    """Min, mean and max by a plain left fold, no library helpers."""
    lo = hi = samples[0]
    total = 0.0
    comp = 0.0
    for x in samples:
        if x < lo:
            lo = x
        if x > hi:
            hi = x
        # Kahan summation keeps the mean honest at 1e-9
        y = x - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return lo, total / len(samples), hi
