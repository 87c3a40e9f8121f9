#!/usr/bin/env python3
"""Download the MovieLens 100k ratings file into data/ml-100k/.

The experiments and the acceptance suite look for the tab-separated
ratings at data/ml-100k/u.data (or at $BITMC_MOVIELENS).  This script
fetches the archive from grouplens.org and extracts just that file.
Run it from the repository root on a machine with network access:

    python3 scripts/fetch_movielens.py
"""

import io
import sys
import urllib.request
import zipfile
from pathlib import Path

URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
TARGET = Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "u.data"
EXPECTED_LINES = 100_000


def main() -> int:
    if TARGET.exists():
        print(f"already present: {TARGET}")
        return 0
    print(f"downloading {URL} ...")
    try:
        with urllib.request.urlopen(URL, timeout=120) as response:
            payload = response.read()
    except OSError as exc:
        print(f"download failed: {exc}", file=sys.stderr)
        return 1
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        raw = archive.read("ml-100k/u.data")
    lines = raw.decode("utf-8").count("\n")
    if lines != EXPECTED_LINES:
        print(f"unexpected ratings count {lines}, wanted {EXPECTED_LINES}",
              file=sys.stderr)
        return 1
    TARGET.parent.mkdir(parents=True, exist_ok=True)
    TARGET.write_bytes(raw)
    print(f"wrote {TARGET} ({lines} ratings)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
