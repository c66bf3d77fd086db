from __future__ import annotations

import time

import pytest

from ndncert import crypto
from ndncert.certs import TrustPolicy, TrustRule, NamePattern, self_signed_anchor
from ndncert.names import Name


def now_ms() -> int:
    return int(time.time() * 1000)


@pytest.fixture(scope="session")
def root_pair():
    return crypto.generate_keypair(Name.from_text("/ndn"))


@pytest.fixture(scope="session")
def root_anchor(root_pair):
    return self_signed_anchor(root_pair, lifetime_ms=86400_000)


@pytest.fixture()
def prefix_policy(root_anchor):
    """Anchor-rooted policy: signer identity must properly prefix the subject."""
    rule = TrustRule(NamePattern("/ndn/**"), NamePattern("/ndn/**"),
                     signer_prefix_of_subject=True)
    return TrustPolicy(root_anchor, [rule])
