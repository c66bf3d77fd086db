"""Shared test bed: a CA (or a hierarchy of them) wired onto one forwarder."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from ndncert import crypto
from ndncert.certs import (
    Certificate,
    NamePattern,
    TrustPolicy,
    TrustRule,
    issue_certificate,
    save_cert,
    self_signed_anchor,
)
from ndncert.challenges import AssertionTokenTable
from ndncert.issuer import Issuer
from ndncert.names import Name
from ndncert.transparency import TransparencyLog
from ndncert.transport import Forwarder, LoopbackFace, Repo


def now_ms() -> int:
    return int(time.time() * 1000)


def anchor_policy(anchor: Certificate) -> TrustPolicy:
    prefix = anchor.identity.to_text()
    return TrustPolicy(anchor, [
        TrustRule(NamePattern(prefix + "/**"), NamePattern(prefix + "/**"),
                  signer_prefix_of_subject=True),
    ])


@dataclass
class CaSetup:
    pair: crypto.KeyPair
    certificate: Certificate
    anchor: Certificate
    issuer: Issuer
    forwarder: Forwarder
    face: LoopbackFace
    policy: TrustPolicy
    token_table: AssertionTokenTable
    repo: Repo
    log_path: str
    registrations: list = field(default_factory=list)

    def provision_token(self, identity: str, token: str, ttl_s: int = 300) -> None:
        self.token_table.insert(Name.from_text(identity), token, now_ms() + ttl_s * 1000)


def build_root_ca(
    tmp_path,
    *,
    prefix: str = "/ndn",
    challenges: list[str] | None = None,
    name_patterns: list[str] | None = None,
    redirects: list[tuple[str, str, str]] | None = None,
    max_validity_s: int = 3600,
    anchor_lifetime_s: int = 86400,
    forwarder: Forwarder | None = None,
    deliver=None,
    state_file: str | None = None,
    clock=None,
) -> CaSetup:
    pair = crypto.generate_keypair(Name.from_text(prefix))
    anchor = self_signed_anchor(pair, anchor_lifetime_s * 1000)
    forwarder = forwarder or Forwarder(cache_capacity=64)
    token_table = AssertionTokenTable()
    repo = Repo(tmp_path / "root-repo")
    log_path = str(tmp_path / "root-issuance.log")
    issuer = Issuer(
        pair,
        anchor,
        anchor,
        max_validity_ms=max_validity_s * 1000,
        challenges=challenges or ["pin", "email", "possession"],
        name_patterns=name_patterns or [prefix + "/**"],
        redirects=redirects or [],
        repo=repo,
        log=TransparencyLog(log_path, pair),
        token_table=token_table,
        deliver=deliver,
        state_file=state_file,
        issuer_id="root",
        clock=clock,
    )
    regs = issuer.register_on(forwarder)
    return CaSetup(pair, anchor, anchor, issuer, forwarder, LoopbackFace(forwarder),
                   anchor_policy(anchor), token_table, repo, log_path, regs)


def build_site_ca(
    tmp_path,
    root: CaSetup,
    *,
    site_prefix: str = "/ndn/campus1",
    challenges: list[str] | None = None,
    max_validity_s: int = 3600,
    site_cert: Certificate | None = None,
    site_pair: crypto.KeyPair | None = None,
) -> CaSetup:
    if site_pair is None:
        site_pair = crypto.generate_keypair(Name.from_text(site_prefix))
    if site_cert is None:
        site_cert = issue_certificate(
            site_pair.public_bits, site_pair.identity, now_ms(),
            now_ms() + max_validity_s * 1000, root.pair, "root",
        )
        root.repo.insert(site_cert)
    token_table = AssertionTokenTable()
    repo = Repo(tmp_path / "site-repo")
    log_path = str(tmp_path / "site-issuance.log")
    issuer = Issuer(
        site_pair,
        site_cert,
        root.anchor,
        max_validity_ms=max_validity_s * 1000,
        challenges=challenges or ["pin", "possession"],
        name_patterns=[site_prefix + "/**"],
        repo=repo,
        log=TransparencyLog(log_path, site_pair),
        token_table=token_table,
        issuer_id=site_prefix.rsplit("/", 1)[-1],
    )
    regs = issuer.register_on(root.forwarder)
    return CaSetup(site_pair, site_cert, root.anchor, issuer, root.forwarder,
                   root.face, root.policy, token_table, repo, log_path, regs)


def write_anchor_file(tmp_path, anchor: Certificate) -> str:
    path = tmp_path / "anchor.cert"
    save_cert(path, anchor)
    return str(path)
