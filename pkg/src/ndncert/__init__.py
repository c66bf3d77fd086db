"""Certificate issuance, renewal, and revocation for Named Data Networking."""

__version__ = "0.1.0"

from .names import Name, NameComponent  # noqa: F401
from .packets import DataPacket, InterestPacket, SignatureInfo, SignatureType  # noqa: F401
