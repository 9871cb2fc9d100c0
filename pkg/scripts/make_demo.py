#!/usr/bin/env python3
"""Build a small demo corpus: two firmware images (a fixed-passkey binary
and a service/characteristic chaining binary) plus the vendor pack that
extracts their configuration.

Usage: python scripts/make_demo.py [outdir]
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "tests"))

import fixture_lib  # noqa: E402


def main():
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo")
    bins = outdir / "bins"
    pack = outdir / "pack"
    (pack / "argdefs").mkdir(parents=True, exist_ok=True)
    bins.mkdir(parents=True, exist_ok=True)

    passkey = fixture_lib.passkey_fixture("123456", base=0x1B000)
    (bins / "fixed_passkey.bin").write_bytes(passkey.data)
    chain = fixture_lib.chaining_fixture()
    (bins / "service_chain.bin").write_bytes(chain.data)

    manifest = {
        "name": "demo",
        "mode": "svc",
        "svcs": {"ble_opt_set": "0x68", "service_add": "0x10",
                 "char_add": "0x20"},
        "argdefs": ["argdefs/ble_opt_set.json", "argdefs/service_add.json",
                    "argdefs/char_add.json"],
    }
    (pack / "pack.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for name, body in (("ble_opt_set", fixture_lib.PASSKEY_ARGDEF),
                       ("service_add", fixture_lib.SERVICE_ADD_ARGDEF),
                       ("char_add", fixture_lib.CHAR_ADD_ARGDEF)):
        (pack / "argdefs" / f"{name}.json").write_text(
            json.dumps(body, indent=2) + "\n")

    print(f"demo corpus in {outdir}/")
    print(f"  analyze: cmsift {bins} --pack {pack} --out {outdir}/reports")


if __name__ == "__main__":
    main()
