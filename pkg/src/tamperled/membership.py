"""Per-organization certificate authorities and Ed25519 signing.

Certificates use a compact canonical encoding rather than X.509: the
signature covers every field before it, so any byte change invalidates it.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

from .codec import Decoder, Encoder
from .errors import DuplicateCA, MalformedKey, RoleNotAllowed

KEY_SIZE = 32


class Role(str, enum.Enum):
    ADMIN = "admin"
    PEER = "peer"
    CLIENT = "client"
    ORDERER = "orderer"
    DEVICE = "device"


class CAKind(str, enum.Enum):
    IDENTITY = "identity"
    TRANSPORT = "transport"


TRANSPORT_ROLES = frozenset({Role.PEER, Role.ORDERER})


@dataclass(frozen=True)
class KeyPair:
    public_key: bytes
    private_key: bytes = field(repr=False)


def generate_keypair(seed: Optional[bytes] = None) -> KeyPair:
    """Fresh Ed25519 keypair; a seed makes it reproducible (deterministic runs)."""
    if seed is None:
        sk = Ed25519PrivateKey.generate()
    else:
        sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
    private = sk.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
    public = sk.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    return KeyPair(public, private)


def sign(private_key: bytes, message: bytes) -> bytes:
    if len(private_key) != KEY_SIZE:
        raise MalformedKey(f"private key must be {KEY_SIZE} bytes, got {len(private_key)}")
    return Ed25519PrivateKey.from_private_bytes(private_key).sign(message)


def verify(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(public_key) != KEY_SIZE:
        raise MalformedKey(f"public key must be {KEY_SIZE} bytes, got {len(public_key)}")
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class Certificate:
    subject: str
    org: str
    role: Role
    attributes: tuple[tuple[str, str], ...]
    public_key: bytes
    issuer: str
    signature: bytes = b""

    def attribute(self, name: str) -> Optional[str]:
        return dict(self.attributes).get(name)

    def tbs_bytes(self) -> bytes:
        """The signed portion: every field except the signature."""
        enc = Encoder().text(self.subject).text(self.org).text(Role(self.role).value)
        enc.u32(len(self.attributes))
        for name, value in self.attributes:
            enc.text(name).text(value)
        return enc.blob(self.public_key).text(self.issuer).getvalue()

    def to_bytes(self) -> bytes:
        return Encoder().raw(self.tbs_bytes()).blob(self.signature).getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        dec = Decoder(data)
        subject, org, role = dec.text(), dec.text(), Role(dec.text())
        attrs = tuple((dec.text(), dec.text()) for _ in range(dec.u32()))
        public_key, issuer, signature = dec.blob(), dec.text(), dec.blob()
        dec.expect_end()
        return cls(subject, org, role, attrs, public_key, issuer, signature)

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_bytes()).digest()

    def render(self) -> str:
        lines = [
            f"subject:    {self.subject}",
            f"org:        {self.org}",
            f"role:       {Role(self.role).value}",
            f"issuer:     {self.issuer}",
            f"attributes: " + ", ".join(f"{k}={v}" for k, v in self.attributes),
            f"public_key: {self.public_key.hex()}",
            f"signature:  {self.signature.hex()}",
            f"encoded:    {self.to_bytes().hex()}",
        ]
        return "\n".join(lines)


def _normalize_attributes(attributes: Optional[Mapping[str, str]]) -> tuple[tuple[str, str], ...]:
    return tuple(sorted((str(k), str(v)) for k, v in (attributes or {}).items()))


@dataclass(frozen=True)
class Enrollment:
    """A certificate together with the matching private key."""

    certificate: Certificate
    keypair: KeyPair

    def sign(self, message: bytes) -> bytes:
        return sign(self.keypair.private_key, message)

    @property
    def subject(self) -> str:
        return self.certificate.subject

    @property
    def org(self) -> str:
        return self.certificate.org

    @property
    def role(self) -> Role:
        return self.certificate.role


@dataclass
class CertificateAuthority:
    name: str
    org: str
    kind: CAKind
    keypair: KeyPair
    issued: int = 0
    seed: Optional[bytes] = field(default=None, repr=False)

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    def root(self) -> "TrustedRoot":
        return TrustedRoot(self.name, self.org, self.kind, self.public_key)

    def enroll(
        self, subject: str, role: Role, attributes: Optional[Mapping[str, str]] = None
    ) -> Enrollment:
        """Generate a keypair for ``subject`` and issue its certificate."""
        key_seed = None if self.seed is None else self.seed + f"|{self.name}|{subject}|{role}".encode()
        keypair = generate_keypair(key_seed)
        cert = issue_certificate(self, subject, role, attributes, keypair.public_key)
        return Enrollment(cert, keypair)


def issue_certificate(
    ca: CertificateAuthority,
    subject: str,
    role: Role,
    attributes: Optional[Mapping[str, str]],
    public_key: bytes,
) -> Certificate:
    role = Role(role)
    if ca.kind is CAKind.TRANSPORT and role not in TRANSPORT_ROLES:
        raise RoleNotAllowed(f"{ca.name} issues transport certificates only for peers and orderers")
    if len(public_key) != KEY_SIZE:
        raise MalformedKey("subject public key must be 32 bytes")
    unsigned = Certificate(subject, ca.org, role, _normalize_attributes(attributes), public_key, ca.name)
    signature = sign(ca.keypair.private_key, unsigned.tbs_bytes())
    ca.issued += 1
    return replace(unsigned, signature=signature)


@dataclass(frozen=True)
class TrustedRoot:
    name: str
    org: str
    kind: CAKind
    public_key: bytes


class TrustedRoots:
    """CA roots a channel accepts, keyed by CA name."""

    def __init__(self, roots: Iterable[TrustedRoot] = ()):
        self._roots: dict[str, TrustedRoot] = {}
        for root in roots:
            self._roots[root.name] = root

    def __iter__(self):
        return iter(self._roots.values())

    def __len__(self):
        return len(self._roots)

    def __eq__(self, other):
        if not isinstance(other, TrustedRoots):
            return NotImplemented
        return self._roots == other._roots

    __hash__ = None

    def get(self, name: str) -> Optional[TrustedRoot]:
        return self._roots.get(name)

    def orgs(self) -> set[str]:
        return {r.org for r in self._roots.values()}


def validate_certificate(
    cert: Certificate, trusted_roots: TrustedRoots, kind: CAKind = CAKind.IDENTITY
) -> bool:
    """True iff ``cert`` was signed by the root registered for its org and ``kind``."""
    if not len(trusted_roots):
        raise ValueError("trusted_roots must not be empty")
    root = trusted_roots.get(cert.issuer)
    if root is None or root.org != cert.org or root.kind is not kind:
        return False
    if kind is CAKind.TRANSPORT and cert.role not in TRANSPORT_ROLES:
        return False
    try:
        return verify(root.public_key, cert.tbs_bytes(), cert.signature)
    except (MalformedKey, ValueError):
        return False


class CARegistry:
    """All CAs of a network; enforces one CA per (org, kind)."""

    def __init__(self, seed: Optional[bytes] = None):
        self.seed = seed
        self._by_name: dict[str, CertificateAuthority] = {}
        self._by_slot: dict[tuple[str, CAKind], CertificateAuthority] = {}

    def create_ca(self, name: str, org: str, kind: CAKind) -> CertificateAuthority:
        kind = CAKind(kind)
        if (org, kind) in self._by_slot:
            raise DuplicateCA(f"organization {org} already has a {kind.value} CA")
        if name in self._by_name:
            raise DuplicateCA(f"CA name {name} already in use")
        ca_seed = None if self.seed is None else self.seed + f"|ca|{name}".encode()
        ca = CertificateAuthority(name, org, kind, generate_keypair(ca_seed), seed=ca_seed)
        self._by_name[name] = ca
        self._by_slot[(org, kind)] = ca
        return ca

    def add(self, ca: CertificateAuthority) -> None:
        """Register an existing CA, e.g. one restored from disk."""
        if (ca.org, ca.kind) in self._by_slot or ca.name in self._by_name:
            raise DuplicateCA(f"{ca.name} conflicts with an existing CA")
        self._by_name[ca.name] = ca
        self._by_slot[(ca.org, ca.kind)] = ca

    def get(self, name: str) -> CertificateAuthority:
        return self._by_name[name]

    def for_org(self, org: str, kind: CAKind = CAKind.IDENTITY) -> CertificateAuthority:
        return self._by_slot[(org, CAKind(kind))]

    def __iter__(self):
        return iter(self._by_name.values())

    def __len__(self):
        return len(self._by_name)

    def roots(self) -> TrustedRoots:
        return TrustedRoots(ca.root() for ca in self._by_name.values())


def create_ca(name: str, org: str, kind: CAKind, registry: Optional[CARegistry] = None) -> CertificateAuthority:
    return (registry if registry is not None else CARegistry()).create_ca(name, org, kind)
