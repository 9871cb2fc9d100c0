"""Batch driver: analyze one binary or a directory tree against a vendor pack.

Flags mirror CMSIFT_* environment variables; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path

from .errors import CmsiftError
from .pipeline import RunConfig, VendorPack, analyze_binary, analyze_corpus

log = logging.getLogger(__name__)


def parse_duration(text: str) -> float:
    """'90m', '1.5h', '30s' or bare seconds."""
    m = re.fullmatch(r"\s*([\d.]+)\s*([smh]?)\s*", str(text))
    if not m:
        raise argparse.ArgumentTypeError(f"bad duration: {text!r}")
    value = float(m.group(1))
    return value * {"": 1, "s": 1, "m": 60, "h": 3600}[m.group(2)]


def _env(name: str, default=None):
    return os.environ.get(f"CMSIFT_{name}", default)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cmsift",
        description="Recover structure from stripped Cortex-M firmware and "
                    "extract the arguments of security-relevant calls.")
    p.add_argument("input", help=".bin file or a directory of .bin files")
    p.add_argument("--pack", default=_env("PACK"), required=_env("PACK") is None,
                   help="vendor pack directory (pack.json + argdefs)")
    p.add_argument("--mode", choices=["svc", "function"],
                   default=_env("MODE"),
                   help="COI identification mode (default: pack setting)")
    p.add_argument("--max-call-depth", type=int,
                   default=int(_env("MAX_CALL_DEPTH", 1)),
                   help="enter off-path callees below this depth (default 1)")
    p.add_argument("--trace-time-limit", type=parse_duration,
                   default=parse_duration(_env("TRACE_TIME_LIMIT", "90m")),
                   help="per-trace wall-clock limit (default 90m)")
    p.add_argument("--workers", type=int, default=int(_env("WORKERS", 1)),
                   help="parallel worker processes for corpus runs")
    p.add_argument("--out", default=_env("OUT"),
                   help="output directory for <sha256>.json reports")
    p.add_argument("--code-base", default=_env("CODE_BASE"),
                   help="pin the application code base (hex), bypassing recovery")
    p.add_argument("--dump-structure",
                   action="store_true",
                   default=bool(_env("DUMP_STRUCTURE")),
                   help="also emit blocks/annotations sidecar")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else
        logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")

    config = RunConfig(
        mode=args.mode,
        max_call_depth=args.max_call_depth,
        trace_time_limit=args.trace_time_limit,
        workers=args.workers,
        out_dir=args.out,
        code_base=int(args.code_base, 16) if args.code_base else None,
        dump_structure=args.dump_structure,
    )

    target = Path(args.input)
    if not target.exists():
        print(f"cmsift: {target}: no such file or directory", file=sys.stderr)
        return 2

    try:
        pack = VendorPack.load(args.pack)
    except (CmsiftError, OSError, json.JSONDecodeError) as e:
        print(f"cmsift: bad pack: {e}", file=sys.stderr)
        return 2

    if target.is_dir():
        summary = analyze_corpus(target, args.pack, config)
        produced = sum(summary[k] for k in ("ok", "partial", "timeout"))
        print(json.dumps({k: summary[k]
                          for k in ("ok", "partial", "failed", "timeout")}))
        if not summary["reports"]:
            print(f"cmsift: no .bin files under {target}", file=sys.stderr)
            return 1
        return 0 if produced > 0 else 1

    result = analyze_binary(target, pack, config)
    doc = json.dumps(result.report, indent=2)
    if config.out_dir:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / f"{result.sha256}.json"
        report_path.write_text(doc + "\n")
        print(f"{result.status}: {report_path}")
        if result.structure is not None:
            sp = out_dir / f"{result.sha256}.structure.json"
            sp.write_text(json.dumps(result.structure, indent=2) + "\n")
    else:
        print(doc)
        if result.structure is not None:
            print(json.dumps(result.structure, indent=2))
    return 0 if result.status in ("ok", "partial", "timeout") else 1


if __name__ == "__main__":
    sys.exit(main())
