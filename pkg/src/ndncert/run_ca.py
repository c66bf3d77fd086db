"""`python -m ndncert.run_ca` — the issuer daemon without installed scripts."""

import sys

from .cli import main_ca

if __name__ == "__main__":
    sys.exit(main_ca())
