"""Run the localize study; extra arguments (--out, --threads, --config) are passed through."""

import argparse
import logging
import sys

import _common
from mflab.cli import dispatch

if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", default=str(_common.ROOT / "configs" / "localize.toml"))
    p.add_argument("--out", default=str(_common.ROOT / "out"))
    p.add_argument("--threads", default="1")
    a = p.parse_args()
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    sys.exit(dispatch(["localize", "--config", a.config, "--out", a.out, "--threads", a.threads]))
