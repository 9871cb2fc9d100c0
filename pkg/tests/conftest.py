import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import fixture_lib  # noqa: E402

from cmsift.datascan import identify_inline_data  # noqa: E402
from cmsift.funcs import (  # noqa: E402
    annotate_functions,
    estimate_boundaries,
    protected_starts,
    seed_function_starts,
)
from cmsift.image import (  # noqa: E402
    FirmwareImage,
    identify_code_base,
    read_vector_table,
)
from cmsift.isa import decode_stream  # noqa: E402


class Analysis:
    """Pipeline stages applied to an assembled fixture, for tests."""

    def __init__(self, asm_result, rebase=True):
        self.asm = asm_result
        self.img = FirmwareImage(data=asm_result.data)
        read_vector_table(self.img)
        if rebase:
            identify_code_base(self.img, decode_stream(self.img).values())
        self.scan = identify_inline_data(self.img)
        self.instrs = self.scan.instructions
        seeds = seed_function_starts(self.img, self.instrs,
                                     self.scan.target_sets)
        self.blocks = estimate_boundaries(
            seeds, self.instrs, self.img, self.scan.target_sets,
            protected_starts(self.img, self.instrs))
        annotate_functions(self.blocks, self.instrs, self.scan.target_sets)

    def block_at(self, start):
        for b in self.blocks:
            if b.start == start:
                return b
        raise AssertionError(f"no block at 0x{start:x}")

    def sym(self, name):
        return self.asm.symbols[name]


@pytest.fixture(scope="session")
def compiled_samples(tmp_path_factory):
    """(image, {name: addr}, base) per optimization level, or skip."""
    workdir = tmp_path_factory.mktemp("csample")
    out = {}
    for opt in ("-Os", "-O2"):
        built = fixture_lib.build_compiled_sample(workdir, opt)
        if built is None:
            pytest.skip("no ARM cross toolchain available")
        out[opt] = built
    return out


def write_pack(pack_dir: Path, manifest: dict, argdefs: dict | None = None,
               patterns: dict | None = None) -> Path:
    """Materialize a vendor pack directory; returns its path."""
    pack_dir.mkdir(parents=True, exist_ok=True)
    if argdefs:
        (pack_dir / "argdefs").mkdir(exist_ok=True)
        manifest.setdefault("argdefs", [])
        for name, body in argdefs.items():
            rel = f"argdefs/{name}.json"
            (pack_dir / rel).write_text(json.dumps(body, indent=2))
            if rel not in manifest["argdefs"]:
                manifest["argdefs"].append(rel)
    if patterns:
        (pack_dir / "patterns").mkdir(exist_ok=True)
        manifest.setdefault("patterns", [])
        for name, body in patterns.items():
            rel = f"patterns/{name}.json"
            (pack_dir / rel).write_text(json.dumps(body, indent=2))
            if rel not in manifest["patterns"]:
                manifest["patterns"].append(rel)
    (pack_dir / "pack.json").write_text(json.dumps(manifest, indent=2))
    return pack_dir
