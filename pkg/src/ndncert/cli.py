"""Operator-facing entry points: ndncert-ca, ndncert-client,
ndncert-authority, ndncert-bench.

Every error path exits with its own code and prints exactly one
machine-parsable line to stderr: `error: <code>: <message>`.  Prompts only
appear when the corresponding flag is absent, so every flow is scriptable.
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
import time

from . import crypto
from .certs import (
    load_cert,
    save_cert,
    self_signed_anchor,
)
from .client import (
    KeyStore,
    default_keystore_root,
    discover_profile,
    renew_certificate,
    request_certificate,
    request_revocation,
)
from .errors import (
    ChallengeFailedError,
    ClientError,
    ConfigError,
    IssuerError,
    NdncertError,
    ProtocolError,
    RedirectedError,
    RenewDeniedError,
    TimeoutError_,
    UnfetchableError,
    UntrustedProfileError,
    ValidationFailedError,
)
from .issuer import AdminServer, IssuerConfig, admin_request, issuer_from_config
from .names import Name
from .transparency import TransparencyLog, verify_chain
from .transport import Forwarder, LoopbackFace, UdpFace, UdpServer

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CHALLENGE_FAILED = 4
EXIT_ISSUER_ERROR = 5
EXIT_VALIDATION_FAILED = 6
EXIT_TIMEOUT = 7
EXIT_UNTRUSTED_PROFILE = 8
EXIT_REDIRECTED = 9
EXIT_RENEW_DENIED = 10
EXIT_UNAUTHORIZED = 11
EXIT_LOG_BROKEN = 12
EXIT_INTERNAL = 13

_CODE_FOR = [
    (ConfigError, EXIT_CONFIG, "config"),
    (ChallengeFailedError, EXIT_CHALLENGE_FAILED, "challenge-failed"),
    (RenewDeniedError, EXIT_RENEW_DENIED, "renew-denied"),
    (RedirectedError, EXIT_REDIRECTED, "redirected"),
    (UntrustedProfileError, EXIT_UNTRUSTED_PROFILE, "untrusted-profile"),
    (ValidationFailedError, EXIT_VALIDATION_FAILED, "validation-failed"),
    ((TimeoutError_, UnfetchableError), EXIT_TIMEOUT, "timeout"),
    (IssuerError, EXIT_ISSUER_ERROR, None),  # code from the wire
    (ProtocolError, EXIT_ISSUER_ERROR, None),
    (ClientError, EXIT_INTERNAL, "client"),
    (NdncertError, EXIT_INTERNAL, "internal"),
]


def _fail(exc: Exception) -> int:
    for classes, code, label in _CODE_FOR:
        if isinstance(exc, classes):
            name = label or getattr(exc, "code", "error")
            print(f"error: {name}: {exc}", file=sys.stderr)
            return code
    print(f"error: internal: {exc}", file=sys.stderr)
    return EXIT_INTERNAL


def _run(fn) -> int:
    try:
        return fn() or EXIT_OK
    except NdncertError as exc:
        return _fail(exc)
    except KeyboardInterrupt:
        return 130


def _make_face(transport: str):
    if transport == "loopback":
        # An empty in-process forwarder; useful only for self-tests.
        return LoopbackFace(Forwarder())
    if transport.startswith("udp:"):
        hostport = transport[len("udp:"):]
        host, _, port = hostport.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"bad --transport {transport!r}; want udp:<host:port>")
        return UdpFace(host, int(port))
    raise ConfigError(f"unknown transport {transport!r}")


def _anchor_policy(anchor_path: str):
    from .certs import NamePattern, TrustPolicy, TrustRule

    anchor = load_cert(anchor_path)
    prefix = anchor.identity.to_text()
    return TrustPolicy(anchor, [
        TrustRule(NamePattern(prefix + "/**"), NamePattern(prefix + "/**"),
                  signer_prefix_of_subject=True),
    ])


# ----------------------------------------------------------------------
# ndncert-ca
# ----------------------------------------------------------------------

def main_ca(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ndncert-ca",
                                     description="certificate issuer daemon and admin")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the issuer daemon")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--port", type=int, default=None,
                       help="UDP port (overrides config udp-port)")

    init_p = sub.add_parser("init", help="create a key and self-signed anchor cert")
    init_p.add_argument("--identity", required=True)
    init_p.add_argument("--validity-seconds", type=int, default=30 * 86400)
    init_p.add_argument("--dir", default=".")

    revoke_p = sub.add_parser("revoke", help="revoke a certificate (admin socket)")
    revoke_p.add_argument("--socket", required=True)
    revoke_p.add_argument("--cert-name", required=True)
    revoke_p.add_argument("--reason", default="")

    reload_p = sub.add_parser("reload", help="reload profile settings (admin socket)")
    reload_p.add_argument("--socket", required=True)
    reload_p.add_argument("--challenges", default=None,
                          help="comma-separated challenge ids")

    log_p = sub.add_parser("log", help="transparency log tools")
    log_sub = log_p.add_subparsers(dest="log_command", required=True)
    verify_p = log_sub.add_parser("verify", help="verify the whole hash chain")
    verify_p.add_argument("--log-file", required=True)
    verify_p.add_argument("--cert-file", required=True,
                          help="issuer certificate (for the signing key)")
    query_p = log_sub.add_parser("query", help="records for a name prefix")
    query_p.add_argument("--log-file", required=True)
    query_p.add_argument("--name", required=True)

    args = parser.parse_args(argv)
    return _run(lambda: _dispatch_ca(args))


def _dispatch_ca(args) -> int:
    if args.command == "run":
        return _ca_run(args)
    if args.command == "init":
        return _ca_init(args)
    if args.command == "revoke":
        reply = admin_request(args.socket, {
            "cmd": "revoke", "cert-name": args.cert_name, "reason": args.reason,
        })
        if not reply.get("ok"):
            print(f"error: {reply.get('error', 'revoke-failed')}: admin refused",
                  file=sys.stderr)
            return EXIT_UNAUTHORIZED
        print(reply["cert-name"])
        return EXIT_OK
    if args.command == "reload":
        command = {"cmd": "reload"}
        if args.challenges:
            command["challenges"] = [c.strip() for c in args.challenges.split(",")]
        reply = admin_request(args.socket, command)
        if not reply.get("ok"):
            print(f"error: reload-failed: {reply.get('error')}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"profile version {reply['profile-version']}")
        return EXIT_OK
    if args.command == "log":
        return _ca_log(args)
    raise ConfigError(f"unknown command {args.command}")


def _ca_init(args) -> int:
    identity = Name.from_text(args.identity)
    pair = crypto.generate_keypair(identity)
    anchor = self_signed_anchor(pair, args.validity_seconds * 1000)
    os.makedirs(args.dir, exist_ok=True)
    key_path = os.path.join(args.dir, "ca.key")
    cert_path = os.path.join(args.dir, "ca.cert")
    crypto.save_private_key(key_path, pair.private_key)
    save_cert(cert_path, anchor)
    print(anchor.name.to_text())
    print(key_path)
    print(cert_path)
    return EXIT_OK


def _ca_run(args) -> int:
    config = IssuerConfig.load(args.config)
    issuer = issuer_from_config(config)
    forwarder = Forwarder(cache_capacity=256)
    issuer.register_on(forwarder)

    port = args.port if args.port is not None else (config.udp_port or 6363)
    server = UdpServer(forwarder, port=port).start()
    admin = None
    if config.admin_socket:
        admin = AdminServer(issuer, config.admin_socket).start()

    stop = threading.Event()

    def handle_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, handle_signal)
    signal.signal(signal.SIGINT, handle_signal)
    print(f"listening on udp port {server.port}", flush=True)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        server.stop()
        if admin is not None:
            admin.stop()
    print("shut down cleanly", flush=True)
    return EXIT_OK


def _ca_log(args) -> int:
    if args.log_command == "verify":
        issuer_cert = load_cert(args.cert_file)
        status = verify_chain(args.log_file, issuer_cert.public_key_bits)
        if status.ok:
            print("ok")
            return EXIT_OK
        print(f"error: log-broken: record {status.broken_at}: {status.detail}",
              file=sys.stderr)
        return EXIT_LOG_BROKEN
    if args.log_command == "query":
        log = TransparencyLog(args.log_file)
        for record in log.query_records(Name.from_text(args.name)):
            print(f"{record.sequence}\t{record.record_type.name.lower()}"
                  f"\t{record.cert_name.to_text()}\t{record.timestamp_ms}")
        return EXIT_OK
    raise ConfigError(f"unknown log command {args.log_command}")


# ----------------------------------------------------------------------
# ndncert-client
# ----------------------------------------------------------------------

def main_client(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ndncert-client",
                                     description="certificate requester")
    parser.add_argument("--anchor", help="trust anchor certificate file")
    parser.add_argument("--transport", default="udp:127.0.0.1:6363",
                        help="loopback or udp:<host:port>")
    parser.add_argument("--home", default=None,
                        help="key-store root (default $NDNCERT_HOME or ~/.ndncert)")
    sub = parser.add_subparsers(dest="command", required=True)

    request_p = sub.add_parser("request", help="request a certificate")
    request_p.add_argument("--identity", required=True)
    request_p.add_argument("--challenge", required=True)
    request_p.add_argument("--ca-prefix", required=True)
    request_p.add_argument("--validity-seconds", type=int, default=3600)
    request_p.add_argument("--pin", default=None)
    request_p.add_argument("--pin-from-file", default=None)
    request_p.add_argument("--email", default=None)

    renew_p = sub.add_parser("renew", help="renew via possession of the current cert")
    renew_p.add_argument("--identity", required=True)
    renew_p.add_argument("--ca-prefix", required=True)

    revoke_p = sub.add_parser("revoke", help="request revocation, signed by own key")
    revoke_p.add_argument("--identity", required=True)
    revoke_p.add_argument("--ca-prefix", required=True)
    revoke_p.add_argument("--reason", default="")

    show_p = sub.add_parser("show", help="print installed certificates")
    show_p.add_argument("--identity", default=None)

    args = parser.parse_args(argv)
    return _run(lambda: _dispatch_client(args))


def _keystore(args) -> KeyStore:
    return KeyStore(args.home or default_keystore_root())


def _dispatch_client(args) -> int:
    if args.command == "show":
        return _client_show(args)
    if not args.anchor:
        raise ConfigError("--anchor is required for network commands")
    policy = _anchor_policy(args.anchor)
    face = _make_face(args.transport)
    try:
        if args.command == "request":
            return _client_request(args, face, policy)
        if args.command == "renew":
            return _client_renew(args, face, policy)
        if args.command == "revoke":
            return _client_revoke(args, face)
        raise ConfigError(f"unknown command {args.command}")
    finally:
        face.close()


def _read_pin(args) -> bytes | None:
    if args.pin is not None:
        return args.pin.strip().encode()
    if args.pin_from_file is not None:
        with open(args.pin_from_file, "r", encoding="utf-8") as f:
            return f.read().strip().encode()
    if sys.stdin.isatty():
        return input("pin code: ").strip().encode()
    return None


def _client_request(args, face, policy) -> int:
    store = _keystore(args)
    identity = Name.from_text(args.identity)
    inputs: dict[str, bytes] = {}
    responder = None
    if args.challenge == "pin":
        code = _read_pin(args)
        if code is None:
            raise ConfigError("pin challenge needs --pin or --pin-from-file")
        inputs["code"] = code
    elif args.challenge == "email":
        if not args.email:
            raise ConfigError("email challenge needs --email")
        inputs["email"] = args.email.encode()

        def responder(round_number, visible):
            code = input(f"code mailed to {args.email}: ").strip().encode()
            return {"code": code}

    possession_cert = possession_pair = None
    if args.challenge == "possession":
        possession_cert = store.latest_cert(identity)
        possession_pair = store.load_key(identity)
        if possession_cert is None or possession_pair is None:
            raise ConfigError(f"no stored certificate/key for {identity}")

    cert = request_certificate(
        face, Name.from_text(args.ca_prefix), identity, args.challenge, inputs,
        policy=policy, keystore=store,
        pair=possession_pair if args.challenge == "possession" else None,
        validity_ms=args.validity_seconds * 1000,
        responder=responder,
        possession_cert=possession_cert, possession_pair=possession_pair,
    )
    print(cert.name.to_text())
    return EXIT_OK


def _client_renew(args, face, policy) -> int:
    store = _keystore(args)
    identity = Name.from_text(args.identity)
    cert = store.latest_cert(identity)
    pair = store.load_key(identity)
    if cert is None or pair is None:
        raise ConfigError(f"no stored certificate/key for {identity}")
    renewed = renew_certificate(face, Name.from_text(args.ca_prefix), cert, pair,
                                policy=policy, keystore=store)
    print(renewed.name.to_text())
    return EXIT_OK


def _client_revoke(args, face) -> int:
    store = _keystore(args)
    identity = Name.from_text(args.identity)
    cert = store.latest_cert(identity)
    pair = store.load_key(identity)
    if cert is None or pair is None:
        raise ConfigError(f"no stored certificate/key for {identity}")
    request_revocation(face, Name.from_text(args.ca_prefix), cert.name, pair,
                       reason=args.reason)
    print(cert.name.to_text())
    return EXIT_OK


def _client_show(args) -> int:
    store = _keystore(args)
    roots: list[Name] = []
    if args.identity:
        roots.append(Name.from_text(args.identity))
    else:
        for dirpath, dirnames, filenames in os.walk(store.root):
            if any(f.endswith(".cert") for f in filenames):
                rel = os.path.relpath(dirpath, store.root)
                roots.append(Name.from_text("/" + rel.replace(os.sep, "/")))
    shown = 0
    for identity in roots:
        for cert in store.certs(identity):
            not_after = time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                      time.gmtime(cert.not_after_ms / 1000))
            print(f"{cert.name.to_text()}\tnotAfter={not_after}")
            shown += 1
    if shown == 0:
        print("no certificates installed", file=sys.stderr)
    return EXIT_OK


# ----------------------------------------------------------------------
# ndncert-authority
# ----------------------------------------------------------------------

def main_authority(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ndncert-authority",
        description="name-authority token provisioning (issuer admin socket)")
    sub = parser.add_subparsers(dest="command", required=True)
    insert_p = sub.add_parser("insert", help="provision an assertion token")
    insert_p.add_argument("--socket", required=True)
    insert_p.add_argument("--identity", required=True)
    insert_p.add_argument("--token", default=None,
                          help="6-digit code (generated when absent)")
    insert_p.add_argument("--expiry-seconds", type=int, default=300)

    args = parser.parse_args(argv)
    return _run(lambda: _dispatch_authority(args))


def _dispatch_authority(args) -> int:
    if args.command == "insert":
        import secrets

        token = args.token or f"{secrets.randbelow(10 ** 6):06d}"
        reply = admin_request(args.socket, {
            "cmd": "token-insert", "identity": args.identity,
            "token": token, "expiry-s": args.expiry_seconds,
        })
        if not reply.get("ok"):
            print(f"error: token-insert-failed: {reply.get('error')}", file=sys.stderr)
            return EXIT_ISSUER_ERROR
        print(token)
        return EXIT_OK
    raise ConfigError(f"unknown command {args.command}")


# ----------------------------------------------------------------------
# ndncert-bench
# ----------------------------------------------------------------------

def main_bench(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ndncert-bench",
                                     description="packet-size and crypto-op timings")
    parser.add_argument("--runs", type=int, default=1000,
                        help="runs per crypto op (median reported)")
    parser.add_argument("--out", default=None,
                        help="machine-readable sidecar (one JSON record per line)")
    args = parser.parse_args(argv)

    def run() -> int:
        from .bench import run_bench

        report = run_bench(runs=args.runs)
        for line in report.lines():
            print(line)
        if args.out:
            report.write_jsonl(args.out)
        return EXIT_OK

    return _run(run)
