"""graphguard command line.

Exit codes: 0 success, 1 findings or violations present, 2 usage or runtime error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path

from graphguard import monitor, pki, simnet
from graphguard.errors import GraphGuardError
from graphguard.graph import dump_records, parse_denials, snapshot_from_datagrams, snapshot_records
from graphguard.pcap import read_pcap
from graphguard.policy import audit, factor_profiles, generate_policy, load_policy, refine, save_policy

log = logging.getLogger("graphguard")

EXIT_OK, EXIT_FINDINGS, EXIT_ERROR = 0, 1, 2
KEYSTORE_ENV = "GRAPHGUARD_KEYSTORE"


class CliError(Exception):
    pass


def _keystore_root(value):
    root = value or os.environ.get(KEYSTORE_ENV)
    if not root:
        raise CliError(f"no keystore root given and {KEYSTORE_ENV} is not set")
    return Path(root)


def _read_bytes(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def _write_output(data: bytes, path):
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
        return
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from None


def _assignments(items):
    out = {}
    for item in items or ():
        node, sep, enclave = item.partition("=")
        if not sep or not node or not enclave.startswith("/"):
            raise CliError(f"--assign expects NODE=/ENCLAVE, got {item!r}")
        out[node if node.startswith("/") else "/" + node] = enclave
    return out or None


def _snapshot(pcap_path):
    return snapshot_from_datagrams(read_pcap(pcap_path))


def _timestamp(text):
    try:
        value = dt.datetime.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO-8601 timestamp: {text!r}") from None
    return value if value.tzinfo else value.replace(tzinfo=dt.timezone.utc)


# --------------------------------------------------------------------------
# handlers

def cmd_keystore_init(args):
    root = _keystore_root(args.root)
    pki.init_keystore(root, key_type=args.key_type, shared_ca=args.shared_ca, domains=args.domain or (0,))
    print(f"initialized keystore at {root}")
    return EXIT_OK


def cmd_keystore_verify(args):
    findings = pki.verify_keystore(_keystore_root(args.root))
    if args.json:
        for f in findings:
            print(json.dumps({"check": f.check, "subject": f.subject, "detail": f.detail}, sort_keys=True))
    else:
        for f in findings:
            print(f)
        print(f"{len(findings)} finding{'' if len(findings) == 1 else 's'}")
    return EXIT_FINDINGS if findings else EXIT_OK


def cmd_enclave_create(args):
    if len(args.target) == 2:
        root, path = args.target
    elif len(args.target) == 1:
        root, path = None, args.target[0]
    else:
        raise CliError("expected [ROOT] ENCLAVE_PATH")
    ks = pki.open_keystore(_keystore_root(root))
    policy = load_policy(_read_bytes(args.policy))
    validity = None
    if args.not_before or args.not_after:
        if not (args.not_before and args.not_after):
            raise CliError("--not-before and --not-after go together")
        validity = (args.not_before, args.not_after)
    material = pki.create_enclave(ks, path, policy, validity=validity, domains=args.domain or (0,),
                                  key_type=args.key_type, renew=args.renew)
    print(f"enclave {path} written to {material.directory}")
    return EXIT_OK


def cmd_graph_list(args):
    snapshot = _snapshot(args.pcap)
    sys.stdout.write(dump_records(snapshot_records(snapshot)) if args.json else snapshot.render())
    return EXIT_OK


def cmd_policy_generate(args):
    policy = generate_policy(_snapshot(args.pcap), _assignments(args.assign), version=args.policy_version)
    _write_output(save_policy(policy), args.output)
    return EXIT_OK


def cmd_policy_refine(args):
    policy = load_policy(_read_bytes(args.policy))
    denials = parse_denials(_read_bytes(args.denials).decode("utf-8"))
    _write_output(save_policy(refine(policy, denials, enclave=args.enclave)), args.output)
    return EXIT_OK


def cmd_policy_audit(args):
    policy = load_policy(_read_bytes(args.policy))
    report = audit(policy, _snapshot(args.pcap), _assignments(args.assign))
    sys.stdout.write(report.to_json_lines() if args.json else report.render())
    return EXIT_OK if report.clean else EXIT_FINDINGS


def cmd_policy_factor(args):
    policy = load_policy(_read_bytes(args.policy))
    _write_output(save_policy(factor_profiles(policy, prefix=args.prefix)), args.output)
    return EXIT_OK


def cmd_monitor(args):
    db = monitor.load_cve_db(args.cve_db) if args.cve_db else monitor.default_cve_db()
    if args.pcap:
        reader = read_pcap(args.pcap)
        packets = reader
    else:
        if not monitor.live_capture_available():
            raise CliError("live capture is not available on this platform; use --pcap")
        reader = None
        packets = monitor.capture(args.iface, limit=args.count, timeout=args.timeout)

    scanner = monitor.Scanner(db, verbose=args.verbose)
    findings = []
    if not args.json:
        print(monitor.BANNER, flush=True)
    try:
        for finding in scanner.run(packets):
            findings.append(finding)
            if not args.json:
                sys.stdout.write(finding.render(args.verbose))
                sys.stdout.flush()
    except KeyboardInterrupt:
        pass
    if reader is not None:
        scanner.summary.unparsed += len(reader.log)
    report = monitor.ScanReport(findings, scanner.summary, args.verbose)
    if args.json:
        sys.stdout.write(report.to_json_lines())
    else:
        sys.stdout.write(report.summary.render())
    return EXIT_FINDINGS if scanner.summary.vulnerable else EXIT_OK


def cmd_simnet(args):
    spec = simnet.read_simspec(args.spec)
    if args.seed is not None:
        spec = simnet.SimSpec(args.seed, spec.participants, spec.endpoints, spec.noise_ratio)
    count = simnet.write_pcap(spec, args.output)
    print(f"wrote {count} datagrams to {args.output}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphguard",
        description="Model, secure and monitor DDS/ROS 2 computational graphs.",
    )
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    ks = sub.add_parser("keystore", help="create or check a keystore")
    ks_sub = ks.add_subparsers(dest="action", required=True)
    p = ks_sub.add_parser("init", help="create both CAs and the signed governance")
    p.add_argument("root", nargs="?", help=f"keystore directory (default ${KEYSTORE_ENV})")
    p.add_argument("--key-type", choices=pki.keystore.KEY_TYPES, default="ecdsa")
    p.add_argument("--shared-ca", action="store_true", help="one CA for identity and permissions")
    p.add_argument("--domain", type=int, action="append", help="domain id (repeatable, default 0)")
    p.set_defaults(func=cmd_keystore_init)
    p = ks_sub.add_parser("verify", help="check chains, signatures, validity and file modes")
    p.add_argument("root", nargs="?", help=f"keystore directory (default ${KEYSTORE_ENV})")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_keystore_verify)

    enc = sub.add_parser("enclave", help="issue enclave identities and permissions")
    enc_sub = enc.add_subparsers(dest="action", required=True)
    p = enc_sub.add_parser("create", help="issue or refresh one enclave")
    p.add_argument("target", nargs="+", metavar="[ROOT] ENCLAVE_PATH")
    p.add_argument("--policy", required=True, help="policy XML file")
    p.add_argument("--domain", type=int, action="append", help="domain id (repeatable, default 0)")
    p.add_argument("--key-type", choices=pki.keystore.KEY_TYPES, default="ecdsa")
    p.add_argument("--not-before", type=_timestamp, help="permissions validity start (ISO-8601)")
    p.add_argument("--not-after", type=_timestamp, help="permissions validity end (ISO-8601)")
    p.add_argument("--renew", action="store_true", help="issue a new key and certificate")
    p.set_defaults(func=cmd_enclave_create)

    gr = sub.add_parser("graph", help="inspect the computational graph")
    gr_sub = gr.add_subparsers(dest="action", required=True)
    p = gr_sub.add_parser("list", help="nodes and their resources seen in a capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_graph_list)

    pol = sub.add_parser("policy", help="generate, refine, audit and factor policies")
    pol_sub = pol.add_subparsers(dest="action", required=True)
    p = pol_sub.add_parser("generate", help="least-privilege policy from a capture")
    p.add_argument("--pcap", required=True)
    p.add_argument("--assign", action="append", metavar="NODE=/ENCLAVE",
                   help="enclave for a node (repeatable; default: every node in /)")
    p.add_argument("--policy-version", default="0.2.0")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_policy_generate)
    p = pol_sub.add_parser("refine", help="grant the accesses in a denial log")
    p.add_argument("--policy", required=True)
    p.add_argument("--denials", required=True, help="lines of 'DENY <node> <kind> <name>'")
    p.add_argument("--enclave", default="/", help="enclave for nodes new to the policy")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_policy_refine)
    p = pol_sub.add_parser("audit", help="compare a policy with observed traffic")
    p.add_argument("--pcap", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--assign", action="append", metavar="NODE=/ENCLAVE")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_policy_audit)
    p = pol_sub.add_parser("factor", help="move shared permissions into common profiles")
    p.add_argument("--policy", required=True)
    p.add_argument("--prefix", default="common")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_policy_factor)

    p = sub.add_parser("monitor", help="report DDS participants with known CVEs")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pcap")
    src.add_argument("--iface", help="capture live (Linux, needs CAP_NET_RAW)")
    p.add_argument("--cve-db", help="CVE database (default: bundled sample)")
    p.add_argument("--verbose", action="store_true", help="list every participant and its endpoints")
    p.add_argument("--count", type=int, help="stop live capture after N UDP datagrams")
    p.add_argument("--timeout", type=float, help="stop live capture after S idle seconds")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("simnet", help="write synthetic discovery traffic to a pcap")
    p.add_argument("--spec", required=True, help="simulation spec file")
    p.add_argument("--seed", type=int, help="override the spec's seed")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_simnet)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="graphguard: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, GraphGuardError, OSError, ValueError) as exc:
        print(f"graphguard: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
