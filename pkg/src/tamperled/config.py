"""Harness configuration: parsing, validation and network construction."""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import yaml

from .errors import AlreadyRunning, ConfigError, PolicySyntaxError, TamperledError
from .ledger import decode_block, encode_block
from .membership import (
    CAKind,
    CARegistry,
    CertificateAuthority,
    Certificate,
    Enrollment,
    KeyPair,
    Role,
    TrustedRoots,
)
from .network import (
    Channel,
    ChannelConfig,
    FabricNetwork,
    LatencyModel,
    OrgMember,
    Orderer,
    Peer,
    channel_from_genesis,
    create_channel,
)
from .policy import ChannelPolicySet, parse_policy, parse_principal
from .silo import SiloMonitor

ROLES = tuple(r.value for r in Role)


@dataclass(frozen=True)
class CASpec:
    name: str
    host: str = ""


@dataclass(frozen=True)
class OrgSpec:
    name: str
    ca: CASpec
    tls_ca: CASpec


@dataclass(frozen=True)
class NodeSpec:
    name: str
    org: str
    host: str = ""
    anchor: bool = False


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    members: tuple[str, ...]
    readers: tuple[str, ...]
    writers: tuple[str, ...]
    admins: tuple[str, ...]
    chaincodes: Mapping[str, str]
    batch_max_count: int = 10
    batch_timeout: int = 500


@dataclass(frozen=True)
class IdentitySpec:
    subject: str
    org: str
    role: str
    attributes: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class HarnessConfig:
    organizations: tuple[OrgSpec, ...]
    peers: tuple[NodeSpec, ...]
    orderer: NodeSpec
    channels: tuple[ChannelSpec, ...]
    identities: tuple[IdentitySpec, ...] = ()
    latency: LatencyModel = LatencyModel()
    topology: Mapping[str, Any] = field(default_factory=dict)
    workload: Mapping[str, Any] = field(default_factory=dict)
    seed: Optional[int] = 0
    raw: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def org(self, name: str) -> OrgSpec:
        for o in self.organizations:
            if o.name == name:
                return o
        raise KeyError(name)

    @property
    def hosts(self) -> list[tuple[str, str]]:
        """(name, host label) for every machine in the network."""
        out = []
        for o in self.organizations:
            out += [(o.tls_ca.name, o.tls_ca.host), (o.ca.name, o.ca.host)]
        out += [(p.name, p.host) for p in self.peers]
        out.append((self.orderer.name, self.orderer.host))
        return out


def _req(raw: Mapping, key: str, path: str):
    if not isinstance(raw, Mapping):
        raise ConfigError(path, "expected a mapping")
    if key not in raw:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return raw[key]


def _list(value, path) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list")
    return value


def _ca(raw, path) -> CASpec:
    if isinstance(raw, str):
        return CASpec(raw)
    return CASpec(str(_req(raw, "name", path)), str(raw.get("host", "")))


def parse_config(raw: Mapping[str, Any]) -> HarnessConfig:
    """Build a :class:`HarnessConfig`, raising :class:`ConfigError` with a field path."""
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "configuration must be a mapping")
    orgs = []
    for i, o in enumerate(_list(_req(raw, "organizations", ""), "organizations")):
        path = f"organizations[{i}]"
        orgs.append(OrgSpec(str(_req(o, "name", path)), _ca(_req(o, "ca", path), f"{path}.ca"),
                            _ca(_req(o, "tls_ca", path), f"{path}.tls_ca")))
    org_names = [o.name for o in orgs]
    if len(set(org_names)) != len(org_names):
        raise ConfigError("organizations", "duplicate organization name")
    ca_names = [c.name for o in orgs for c in (o.ca, o.tls_ca)]
    if len(set(ca_names)) != len(ca_names):
        raise ConfigError("organizations", "duplicate CA name")

    def node(n, path) -> NodeSpec:
        spec = NodeSpec(str(_req(n, "name", path)), str(_req(n, "org", path)),
                        str(n.get("host", "")), bool(n.get("anchor", False)))
        if spec.org not in org_names:
            raise ConfigError(f"{path}.org", f"unknown organization {spec.org!r}")
        return spec

    peers = tuple(node(p, f"peers[{i}]") for i, p in enumerate(_list(_req(raw, "peers", ""), "peers")))
    if len({p.name for p in peers}) != len(peers):
        raise ConfigError("peers", "duplicate peer name")
    orderer_raw = _req(raw, "orderer", "")
    if isinstance(orderer_raw, list):
        if len(orderer_raw) != 1:
            raise ConfigError("orderer", "exactly one (solo) orderer is supported")
        orderer_raw = orderer_raw[0]
    orderer = node(orderer_raw, "orderer")

    channels = []
    for i, c in enumerate(_list(_req(raw, "channels", ""), "channels")):
        path = f"channels[{i}]"
        members = tuple(str(m) for m in _list(_req(c, "members", path), f"{path}.members"))
        for j, m in enumerate(members):
            if m not in org_names:
                raise ConfigError(f"{path}.members[{j}]", f"unknown organization {m!r}")
        pol = c.get("policies", {})
        lists = {}
        for action in ("readers", "writers", "admins"):
            entries = tuple(str(p) for p in pol.get(action, ()))
            for j, text in enumerate(entries):
                try:
                    parse_principal(text)
                except (PolicySyntaxError, ValueError) as exc:
                    raise ConfigError(f"{path}.policies.{action}[{j}]", str(exc)) from None
            lists[action] = entries
        if not lists["admins"]:
            raise ConfigError(f"{path}.policies.admins", "at least one admin principal required")
        chaincodes = dict(c.get("chaincodes", {}))
        for name, expr in chaincodes.items():
            try:
                parse_policy(str(expr))
            except (PolicySyntaxError, ValueError) as exc:
                raise ConfigError(f"{path}.chaincodes.{name}", str(exc)) from None
        batch = int(c.get("batch_max_count", 10))
        if batch < 1:
            raise ConfigError(f"{path}.batch_max_count", "must be at least 1")
        timeout = int(c.get("batch_timeout", 500))
        if timeout < 1:
            raise ConfigError(f"{path}.batch_timeout", "must be positive")
        channels.append(ChannelSpec(str(_req(c, "name", path)), members, lists["readers"],
                                    lists["writers"], lists["admins"], chaincodes, batch, timeout))

    identities = []
    for i, ident in enumerate(raw.get("identities", []) or []):
        path = f"identities[{i}]"
        spec = IdentitySpec(str(_req(ident, "subject", path)), str(_req(ident, "org", path)),
                            str(_req(ident, "role", path)),
                            {str(k): str(v) for k, v in (ident.get("attributes") or {}).items()})
        if spec.org not in org_names:
            raise ConfigError(f"{path}.org", f"unknown organization {spec.org!r}")
        if spec.role not in ROLES:
            raise ConfigError(f"{path}.role", f"unknown role {spec.role!r}")
        identities.append(spec)

    try:
        latency = LatencyModel(**{k: int(v) for k, v in (raw.get("latency") or {}).items()})
    except TypeError as exc:
        raise ConfigError("latency", str(exc)) from None

    return HarnessConfig(
        organizations=tuple(orgs),
        peers=peers,
        orderer=orderer,
        channels=tuple(channels),
        identities=tuple(identities),
        latency=latency,
        topology=dict(raw.get("topology") or {}),
        workload=dict(raw.get("workload") or {}),
        seed=raw.get("seed", 0),
        raw=dict(raw),
    )


def load_config(path) -> HarnessConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML: {exc}") from None
    return parse_config(raw)


def prototype_config_text() -> str:
    return resources.files("tamperled").joinpath("data/prototype.yaml").read_text()


def prototype_config() -> HarnessConfig:
    return parse_config(yaml.safe_load(prototype_config_text()))


# --------------------------------------------------------------------------
# assembling a network


def admin_subject(org: str) -> str:
    return f"admin@{org}"


class Harness:
    """A running simulated network plus every CA and enrollment it uses."""

    def __init__(self, config: HarnessConfig, registry: CARegistry, network: FabricNetwork,
                 enrollments: dict[str, Enrollment], state_dir: Optional[Path] = None):
        self.config = config
        self.registry = registry
        self.network = network
        self.enrollments = enrollments
        self.state_dir = state_dir

    @property
    def default_channel(self) -> str:
        return self.config.channels[0].name

    def identity(self, subject: str) -> Enrollment:
        try:
            return self.enrollments[subject]
        except KeyError:
            raise ConfigError("identity", f"unknown identity {subject!r}") from None

    def admin(self, org: str) -> Enrollment:
        return self.identity(admin_subject(org))

    def enroll(self, subject: str, org: str, role: str, attributes: Optional[Mapping[str, str]] = None,
               kind: CAKind = CAKind.IDENTITY) -> Enrollment:
        ca = self.registry.for_org(org, kind)
        enrollment = ca.enroll(subject, Role(role), attributes)
        self.enrollments[subject] = enrollment
        if self.state_dir is not None:
            _save_enrollment(self.state_dir, enrollment)
            _save_ca(self.state_dir, ca)
        return enrollment


def _channel_config(spec: ChannelSpec, config: HarnessConfig, registry: CARegistry) -> ChannelConfig:
    members = []
    for org in spec.members:
        anchor = next((p for p in config.peers if p.org == org and p.anchor), None)
        if anchor is None:
            anchor = next((p for p in config.peers if p.org == org), None)
        members.append(OrgMember(org, anchor.name if anchor else "", anchor.host if anchor else ""))
    member_set = set(spec.members)
    roots = [ca.root() for ca in registry if ca.org in member_set]
    return ChannelConfig(
        name=spec.name,
        members=tuple(members),
        policy_set=ChannelPolicySet(
            tuple(parse_principal(p) for p in spec.readers),
            tuple(parse_principal(p) for p in spec.writers),
            tuple(parse_principal(p) for p in spec.admins),
        ),
        chaincode_policies={k: parse_policy(v) for k, v in spec.chaincodes.items()},
        trusted_roots=TrustedRoots(roots),
        batch_max_count=spec.batch_max_count,
        batch_timeout=spec.batch_timeout,
    )


def _seed_bytes(seed) -> Optional[bytes]:
    return None if seed is None else f"tamperled:{seed}".encode()


def build_network(config: HarnessConfig, state_dir: Optional[Path] = None) -> Harness:
    """Create CAs, issue certificates, create channels, join peers, install the contract."""
    registry = CARegistry(seed=_seed_bytes(config.seed))
    for org in config.organizations:
        registry.create_ca(org.ca.name, org.name, CAKind.IDENTITY)
        registry.create_ca(org.tls_ca.name, org.name, CAKind.TRANSPORT)
    enrollments: dict[str, Enrollment] = {}
    for org in config.organizations:
        enrollments[admin_subject(org.name)] = registry.for_org(org.name).enroll(admin_subject(org.name), Role.ADMIN)
    for ident in config.identities:
        enrollments[ident.subject] = registry.for_org(ident.org).enroll(ident.subject, Role(ident.role), ident.attributes)
    node_enrollments = {}
    for spec, role in [(p, Role.PEER) for p in config.peers] + [(config.orderer, Role.ORDERER)]:
        node_enrollments[spec.name] = (
            registry.for_org(spec.org).enroll(spec.name, role),
            registry.for_org(spec.org, CAKind.TRANSPORT).enroll(f"{spec.name}-tls", role),
        )
    genesis = {spec.name: create_channel(_channel_config(spec, config, registry)) for spec in config.channels}
    harness = _assemble(config, registry, enrollments, node_enrollments, genesis, state_dir)
    if state_dir is not None:
        _save_state(harness, node_enrollments)
    return harness


def _assemble(config, registry, enrollments, node_enrollments, channels: Mapping[str, Channel], state_dir):
    o = config.orderer
    orderer = Orderer(o.name, *node_enrollments[o.name], host=o.host, seed=config.seed or 0)
    network = FabricNetwork(orderer, latency=config.latency)
    ledger_dir = None if state_dir is None else Path(state_dir) / "channels"
    for spec in config.peers:
        peer = Peer(spec.name, *node_enrollments[spec.name], host=spec.host, ledger_dir=ledger_dir)
        peer.install(SiloMonitor())
        network.add_peer(peer)
    for ch_spec in config.channels:
        channel = channels[ch_spec.name]
        network.add_channel(channel)
        for peer in network.peers.values():
            if channel.config.is_member(peer.org):
                network.join(peer, channel.name)
        # resume ordering from the longest peer ledger
        tallest = max(network.channel_peers(channel.name), key=lambda p: p.ledgers[channel.name].height, default=None)
        if tallest is not None:
            store = tallest.ledgers[channel.name].store
            orderer.add_channel(channel, store.height, store.tip_hash)
            if store.height > 1:
                tip = store.read_block(store.height - 1)
                network.sim.now = max(network.sim.now, tip.header.timestamp + 1)
    return Harness(config, registry, network, enrollments, Path(state_dir) if state_dir else None)


# --------------------------------------------------------------------------
# state directory: <dir>/config.yaml, <dir>/identities/, <dir>/channels/, <dir>/reports/


def _enrollment_dict(e: Enrollment) -> dict:
    return {
        "certificate": e.certificate.to_bytes().hex(),
        "private_key": e.keypair.private_key.hex(),
    }


def _load_enrollment(raw: Mapping) -> Enrollment:
    cert = Certificate.from_bytes(bytes.fromhex(raw["certificate"]))
    return Enrollment(cert, KeyPair(cert.public_key, bytes.fromhex(raw["private_key"])))


def _save_enrollment(state_dir: Path, e: Enrollment, sub: str = "") -> None:
    d = Path(state_dir) / "identities" / sub
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{e.subject}.json").write_text(json.dumps(_enrollment_dict(e), indent=2))


def _save_ca(state_dir: Path, ca: CertificateAuthority) -> None:
    d = Path(state_dir) / "identities" / "ca"
    d.mkdir(parents=True, exist_ok=True)
    raw = {"name": ca.name, "org": ca.org, "kind": ca.kind.value, "issued": ca.issued,
           "private_key": ca.keypair.private_key.hex(), "public_key": ca.keypair.public_key.hex(),
           "seed": ca.seed.hex() if ca.seed is not None else None}
    (d / f"{ca.name}.json").write_text(json.dumps(raw, indent=2))


def _save_state(harness: Harness, node_enrollments) -> None:
    state_dir = harness.state_dir
    (state_dir / "reports").mkdir(parents=True, exist_ok=True)
    (state_dir / "config.yaml").write_text(yaml.safe_dump(dict(harness.config.raw), sort_keys=False))
    for ca in harness.registry:
        _save_ca(state_dir, ca)
    for e in harness.enrollments.values():
        _save_enrollment(state_dir, e)
    for ident, tls in node_enrollments.values():
        _save_enrollment(state_dir, ident, "nodes")
        _save_enrollment(state_dir, tls, "nodes")
    for name, peer_ch in harness.network.channels.items():
        (state_dir / "channels" / name).mkdir(parents=True, exist_ok=True)
        (state_dir / "channels" / name / "genesis.block").write_bytes(encode_block(peer_ch.genesis))


def netup(config: HarnessConfig, state_dir) -> Harness:
    state_dir = Path(state_dir)
    if (state_dir / "config.yaml").exists():
        raise AlreadyRunning(f"{state_dir} already holds a network; remove it or choose another --state")
    state_dir.mkdir(parents=True, exist_ok=True)
    try:
        return build_network(config, state_dir)
    except TamperledError:
        shutil.rmtree(state_dir, ignore_errors=True)
        raise


def load_harness(state_dir) -> Harness:
    """Reopen a network created by :func:`netup`; peers rebuild state by replay."""
    state_dir = Path(state_dir)
    if not (state_dir / "config.yaml").exists():
        raise ConfigError(str(state_dir), "no network here; run `tamperled netup` first")
    config = load_config(state_dir / "config.yaml")
    registry = CARegistry(seed=_seed_bytes(config.seed))
    for f in sorted((state_dir / "identities" / "ca").glob("*.json")):
        raw = json.loads(f.read_text())
        ca = CertificateAuthority(
            raw["name"], raw["org"], CAKind(raw["kind"]),
            KeyPair(bytes.fromhex(raw["public_key"]), bytes.fromhex(raw["private_key"])),
            issued=raw["issued"], seed=bytes.fromhex(raw["seed"]) if raw.get("seed") else None,
        )
        registry.add(ca)
    enrollments = {}
    for f in sorted((state_dir / "identities").glob("*.json")):
        e = _load_enrollment(json.loads(f.read_text()))
        enrollments[e.subject] = e
    nodes = {}
    for f in (state_dir / "identities" / "nodes").glob("*.json"):
        e = _load_enrollment(json.loads(f.read_text()))
        nodes[e.subject] = e
    node_enrollments = {
        spec.name: (nodes[spec.name], nodes[f"{spec.name}-tls"])
        for spec in (*config.peers, config.orderer)
    }
    channels = {}
    for spec in config.channels:
        genesis = decode_block((state_dir / "channels" / spec.name / "genesis.block").read_bytes())
        channels[spec.name] = channel_from_genesis(genesis)
    return _assemble(config, registry, enrollments, node_enrollments, channels, state_dir)
