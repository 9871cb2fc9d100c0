#!/usr/bin/env python3
"""Build the demo corpus and run the analyzer over it end-to-end.

Usage: python scripts/run_demo.py [workdir]
"""

import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import make_demo  # noqa: E402

from cmsift.cli import main as cmsift_main  # noqa: E402


def main():
    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo")
    sys.argv = ["make_demo.py", str(workdir)]
    make_demo.main()

    out = workdir / "reports"
    rc = cmsift_main([str(workdir / "bins"), "--pack", str(workdir / "pack"),
                      "--out", str(out), "--workers", "2",
                      "--dump-structure"])
    if rc != 0:
        sys.exit(rc)

    for report_path in sorted(out.glob("*.json")):
        if report_path.name.endswith(".structure.json"):
            continue
        doc = json.loads(report_path.read_text())
        print(f"\n== {doc['file']} (base {doc['code_base']})")
        for coi in doc["cois"]:
            print(f"  {coi['coi']} at {coi['site']} path {coi['path']}:")
            for arg in coi["args"]:
                value = arg.get("value")
                if isinstance(value, dict):
                    leaf = value
                    while isinstance(leaf, dict) and isinstance(
                            leaf.get("value"), dict):
                        leaf = leaf["value"]
                    shown = leaf.get("ascii") or leaf.get("hex") \
                        or leaf.get("value")
                else:
                    shown = value
                extra = ""
                if arg.get("fed_back") is not None:
                    extra = f" (fed back {arg['fed_back']:#x})"
                print(f"    {arg['name']} = {shown}{extra}")


if __name__ == "__main__":
    main()
