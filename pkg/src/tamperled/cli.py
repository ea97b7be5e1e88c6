"""Command line: ``tamperled <command>``.

Exit status is 0 on success, 1 on a domain error (access denied, tamper
detected, invalid transaction, ...) and 2 on usage or configuration
errors. Failures print one ``CODE: message`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import WorkloadSpec, run_benchmark, write_report
from .config import build_network, load_config, load_harness, netup, prototype_config, prototype_config_text
from .errors import ConfigError, TamperledError
from .ingestion import inject_tamper, run_topology, sources_from_config
from .ledger import BlockStore, Ok, store_file, verify_chain
from .membership import CAKind

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
DEFAULT_STATE = "tamperled-state"


def _config(path):
    return prototype_config() if path in (None, "prototype") else load_config(path)


def cmd_netup(args) -> int:
    harness = netup(_config(args.config), args.state)
    net = harness.network
    for name, host in harness.config.hosts:
        print(f"{name:<16} {host}")
    for channel in net.channels:
        heights = {p.ledgers[channel].height for p in net.channel_peers(channel)}
        print(f"NETUP channel={channel} peers={len(net.peers)} orderer=1 cas={len(harness.registry)} "
              f"height={max(heights)}")
    return EXIT_OK


def cmd_id_issue(args) -> int:
    harness = load_harness(args.state)
    attrs = dict(_kv(a) for a in args.attr or ())
    kind = CAKind.TRANSPORT if args.tls else CAKind.IDENTITY
    enrollment = harness.enroll(args.subject, args.org, args.role, attrs, kind=kind)
    print(enrollment.certificate.render())
    return EXIT_OK


def cmd_id_show(args) -> int:
    harness = load_harness(args.state)
    print(harness.identity(args.subject).certificate.render())
    return EXIT_OK


def _kv(text):
    if "=" not in text:
        raise ConfigError("--attr", f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key, value


def cmd_invoke(args) -> int:
    harness = load_harness(args.state)
    channel = args.channel or harness.default_channel
    handle = harness.network.invoke(harness.identity(args.identity), channel, args.cc, args.fn, args.args)
    if handle.error is not None:
        raise handle.error
    status = "COMMITTED" if handle.valid else handle.flag.name
    print(f"{status} tx={handle.tx_id} block={handle.block_number} response={handle.response.decode(errors='replace')}")
    return EXIT_OK if handle.valid else EXIT_DOMAIN


def cmd_query(args) -> int:
    harness = load_harness(args.state)
    channel = args.channel or harness.default_channel
    net = harness.network
    peer = net.peers[args.peer] if args.peer else None
    response = net.query(harness.identity(args.identity), channel, args.cc, args.fn, args.args, peer=peer)
    print(response.decode(errors="replace"))
    return EXIT_OK


def _state_config(state: Path):
    if not (state / "config.yaml").exists():
        raise ConfigError(str(state), "no network here; run `tamperled netup` first")
    return load_config(state / "config.yaml")


def _peer_stores(state: Path, channel: str, peer_name=None):
    """Open each peer's block store directly, without replaying it into a network.

    A tampered chain cannot be replayed, but it must still be inspectable.
    """
    config = _state_config(state)
    channel = channel or config.channels[0].name
    names = [p.name for p in config.peers]
    if peer_name is not None:
        if peer_name not in names:
            raise ConfigError("--peer", f"no peer {peer_name!r} in this network")
        names = [peer_name]
    out = []
    for name in names:
        base = state / "channels" / channel / "blocks" / name
        if store_file(base, ".blk").exists():
            out.append((name, BlockStore(base)))
    if not out:
        raise ConfigError("--channel", f"no block stores for channel {channel!r}")
    return out


def cmd_verify(args) -> int:
    status = EXIT_OK
    for name, store in _peer_stores(Path(args.state), args.channel, args.peer):
        result = verify_chain(store)
        if isinstance(result, Ok):
            print(f"OK height={result.height} peer={name}")
        else:
            print(f"TAMPER block={result.block_number} reason={result.reason} peer={name}")
            status = EXIT_DOMAIN
    return status


def cmd_tamper(args) -> int:
    config = _state_config(Path(args.state))
    channel = args.channel or config.channels[0].name
    peer = args.peer or config.peers[0].name
    base = Path(args.state) / "channels" / channel / "blocks" / peer
    position = inject_tamper(base, args.block, args.byte)
    print(f"TAMPERED peer={peer} block={args.block} byte={args.byte} file_offset={position}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.config:
        config = _config(args.config)
        harness = build_network(config)
    else:
        harness = load_harness(args.state)
        config = harness.config
    try:
        spec = WorkloadSpec.from_dict(dict(config.workload))
    except (TypeError, ValueError) as exc:
        raise ConfigError("workload", str(exc)) from None
    report = run_benchmark(spec, harness, clock="logical" if args.deterministic else "wall")
    out = Path(args.out) if args.out else Path(args.state) / "reports" / "bench"
    paths = write_report(report, out, figures=not args.no_figures)
    print(report.table())
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    if args.config:
        harness = build_network(_config(args.config))
    else:
        harness = load_harness(args.state)
    topo = dict(harness.config.topology)
    mode = args.mode or topo.get("mode", "direct")
    channel = topo.get("channel") or harness.default_channel
    sources = sources_from_config(topo, harness.enrollments)
    net = harness.network
    state = net.anchor_peer(channel, "IoT").ledgers[channel].state
    for source in sources:
        if state.get(f"device/{source.device_id}") is None:
            handle = net.invoke(harness.admin("IoT"), channel, "silomonitor", "RegisterDevice", [source.device_id, "IoT"])
            if handle.error is not None:
                raise handle.error
    gw, br = topo.get("gateway", {}), topo.get("broker", {})
    report = run_topology(
        net, mode, sources, int(args.duration or topo.get("duration", 10_000)), channel=channel,
        buffer_capacity=int(gw.get("buffer_capacity", 16)), flush_interval=int(gw.get("flush_interval", 100)),
        topic_prefix=str(br.get("topic_prefix", "silo")), monitors=int(br.get("monitors", 1)),
    )
    out = Path(args.out) if args.out else Path(args.state) / "reports" / "ingestion"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ingestion-{mode}.json").write_text(json.dumps(report.to_dict(), indent=2))
    if not args.no_figures:
        from .plotting import history_plot
        from .silo import read_history

        for source in sources:
            readings = [r.render() for r in read_history(state, source.device_id)]
            history_plot(readings, out / f"history-{source.device_id}.png")
    print(report.render())
    return EXIT_OK


def cmd_config(args) -> int:
    print(prototype_config_text(), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tamperled", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--state", default=DEFAULT_STATE, help="state directory (default: %(default)s)")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True,
                        help="logical-clock mode (default on)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("netup", help="create CAs, identities, channel and peers")
    p.add_argument("--config", help="network config file, or 'prototype' for the shipped one")
    p.set_defaults(func=cmd_netup)

    p = sub.add_parser("id", help="identity management")
    idsub = p.add_subparsers(dest="id_command", required=True)
    q = idsub.add_parser("issue", help="enroll a new identity with an organization's CA")
    q.add_argument("--org", required=True)
    q.add_argument("--subject", required=True)
    q.add_argument("--role", required=True, choices=["admin", "peer", "client", "orderer", "device"])
    q.add_argument("--attr", action="append", metavar="KEY=VALUE")
    q.add_argument("--tls", action="store_true", help="issue from the transport CA")
    q.set_defaults(func=cmd_id_issue)
    q = idsub.add_parser("show", help="print a stored certificate")
    q.add_argument("subject")
    q.set_defaults(func=cmd_id_show)

    for name, func, help_text in (("invoke", cmd_invoke, "submit a transaction and wait for commit"),
                                  ("query", cmd_query, "evaluate a function on one peer without ordering")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--channel")
        p.add_argument("--cc", default="silomonitor")
        p.add_argument("--fn", required=True)
        p.add_argument("--as", dest="identity", default="admin@IoT", help="identity subject to sign with")
        if name == "query":
            p.add_argument("--peer")
        p.add_argument("--args", nargs="*", default=[])
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="recompute hashes and linkage of every stored block")
    p.add_argument("--channel")
    p.add_argument("--peer")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("tamper", help="flip one stored byte (testing only)")
    p.add_argument("--channel")
    p.add_argument("--peer")
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--byte", type=int, required=True)
    p.set_defaults(func=cmd_tamper)

    p = sub.add_parser("bench", help="run the configured workload and write a report")
    p.add_argument("--config", help="build a fresh in-memory network from this config")
    p.add_argument("--out", help="report directory (default: <state>/reports/bench)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("ingest", help="feed sensor readings through a topology")
    p.add_argument("--mode", choices=["direct", "gateway", "broker"])
    p.add_argument("--config", help="build a fresh in-memory network from this config")
    p.add_argument("--duration", type=int, help="emission window in logical ms")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("config", help="print the shipped prototype network config")
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TamperledError as exc:
        print(f"{exc.code}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
