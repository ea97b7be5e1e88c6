"""Endorsement policy trees and channel access policies.

Policies are written in a small prefix notation::

    expr := leaf | and(expr, ...) | or(expr, ...) | outof(N, expr, ...)
    leaf := org '.' role

Organization names match case-insensitively, so ``iot.peer`` refers to the
``IoT`` organization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Union

from .errors import PolicySyntaxError

PRINCIPAL_ROLES = ("any", "admin", "peer", "client", "device", "orderer")


class HasOrgRole(Protocol):
    org: str
    role: object


def _role_name(role) -> str:
    return getattr(role, "value", role)


@dataclass(frozen=True)
class Principal:
    org: str
    role: str = "any"

    def __post_init__(self):
        if self.role not in PRINCIPAL_ROLES:
            raise ValueError(f"unknown principal role {self.role!r}")

    def matches(self, identity: HasOrgRole) -> bool:
        if identity.org.casefold() != self.org.casefold():
            return False
        return self.role == "any" or _role_name(identity.role) == self.role

    def __str__(self):
        return f"{self.org.lower()}.{self.role}"


@dataclass(frozen=True)
class Leaf:
    principal: Principal

    def __str__(self):
        return str(self.principal)


@dataclass(frozen=True)
class And:
    children: tuple["Policy", ...]

    def __str__(self):
        return "and(" + ", ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class Or:
    children: tuple["Policy", ...]

    def __str__(self):
        return "or(" + ", ".join(map(str, self.children)) + ")"


@dataclass(frozen=True)
class OutOf:
    n: int
    children: tuple["Policy", ...]

    def __post_init__(self):
        if not 1 <= self.n <= len(self.children):
            raise ValueError(f"outof needs 1 <= n <= {len(self.children)}, got {self.n}")

    def __str__(self):
        return f"outof({self.n}, " + ", ".join(map(str, self.children)) + ")"


Policy = Union[Leaf, And, Or, OutOf]


def principals(policy: Policy) -> set[Principal]:
    if isinstance(policy, Leaf):
        return {policy.principal}
    return set().union(*(principals(c) for c in policy.children))


def depth(policy: Policy) -> int:
    if isinstance(policy, Leaf):
        return 1
    return 1 + max(depth(c) for c in policy.children)


def evaluate_endorsement(policy: Policy, endorsers: Iterable[HasOrgRole]) -> bool:
    """Whether a set of already-validated endorser identities satisfies ``policy``.

    Endorsers are reduced to distinct (org, role) pairs first, so repeated
    endorsements from one organization count once.
    """
    present = {(e.org.casefold(), _role_name(e.role)) for e in endorsers}
    return _evaluate(policy, present)


def _evaluate(policy: Policy, present: set[tuple[str, str]]) -> bool:
    if isinstance(policy, Leaf):
        org, role = policy.principal.org.casefold(), policy.principal.role
        return any(o == org and (role == "any" or r == role) for o, r in present)
    results = (_evaluate(c, present) for c in policy.children)
    if isinstance(policy, And):
        return all(results)
    if isinstance(policy, Or):
        return any(results)
    return sum(results) >= policy.n


_TOKEN = re.compile(r"\s*(?:(\d+)|([A-Za-z_][\w-]*)|(\.)|(\()|(\))|(,))")


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise PolicySyntaxError(f"unexpected character at offset {pos}: {text[pos:pos + 10]!r}")
        kinds = ("num", "name", ".", "(", ")", ",")
        for kind, value in zip(kinds, m.groups()):
            if value is not None:
                tokens.append((kind, value))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("eof", "")

    def take(self, kind):
        tok = self.peek()
        if tok[0] != kind:
            raise PolicySyntaxError(f"expected {kind!r}, found {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok[1]

    def expr(self) -> Policy:
        kind, value = self.peek()
        if kind == "name" and value.lower() in ("and", "or", "outof") and self._is_call():
            op = self.take("name").lower()
            self.take("(")
            n = None
            if op == "outof":
                n = int(self.take("num"))
                self.take(",")
            children = [self.expr()]
            while self.peek()[0] == ",":
                self.take(",")
                children.append(self.expr())
            self.take(")")
            if op == "and":
                return And(tuple(children))
            if op == "or":
                return Or(tuple(children))
            try:
                return OutOf(n, tuple(children))
            except ValueError as exc:
                raise PolicySyntaxError(str(exc)) from None
        org = self.take("name")
        self.take(".")
        role = self.take("name").lower()
        if role not in PRINCIPAL_ROLES:
            raise PolicySyntaxError(f"unknown role {role!r} in principal {org}.{role}")
        return Leaf(Principal(org, role))

    def _is_call(self):
        nxt = self.tokens[self.i + 1] if self.i + 1 < len(self.tokens) else ("eof", "")
        return nxt[0] == "("


def parse_policy(text: str) -> Policy:
    parser = _Parser(text)
    policy = parser.expr()
    if parser.peek()[0] != "eof":
        raise PolicySyntaxError(f"trailing input after policy: {parser.peek()[1]!r}")
    return policy


def parse_principal(text: str) -> Principal:
    leaf = parse_policy(text)
    if not isinstance(leaf, Leaf):
        raise PolicySyntaxError(f"expected org.role, got {text!r}")
    return leaf.principal


@dataclass(frozen=True)
class ChannelPolicySet:
    readers: tuple[Principal, ...] = ()
    writers: tuple[Principal, ...] = ()
    admins: tuple[Principal, ...] = field(default=())

    def __post_init__(self):
        if not self.admins:
            raise ValueError("a channel needs at least one admin principal")


ACTIONS = ("read", "write", "admin")


def check_channel_access(policies: ChannelPolicySet, identity: HasOrgRole, action: str) -> bool:
    """Admins may also write; otherwise each action consults its own list."""
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    if action == "read":
        lists = (policies.readers,)
    elif action == "write":
        lists = (policies.writers, policies.admins)
    else:
        lists = (policies.admins,)
    return any(p.matches(identity) for plist in lists for p in plist)
