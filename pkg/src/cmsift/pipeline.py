"""End-to-end analysis: image -> decode -> data -> functions -> COIs ->
traces -> argument reports, plus the corpus driver.

Every stage failure downgrades the result to partial/failed with a
stage-tagged diagnostic instead of aborting the run; one corrupt file
never kills a corpus.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from . import argdefs as argdefs_mod
from .argdefs import FeedbackAllocator, apply_feedback, extract_arguments
from .coi import CoiSite, FunctionMatcher, FunctionPattern, find_call_sites, find_svcs
from .datascan import identify_inline_data
from .errors import AmbiguousMatch, CmsiftError, NoMatch, PackError
from .funcs import (
    annotate_functions,
    blocks_to_json,
    estimate_boundaries,
    protected_starts,
    seed_function_starts,
)
from .image import identify_code_base, load_image, read_vector_table
from .isa import decode_stream
from .trace import TraceConfig, Tracer

log = logging.getLogger(__name__)


@dataclass
class VendorPack:
    name: str
    mode: str                              # "svc" | "function"
    svcs: dict = field(default_factory=dict)        # name -> number
    patterns: list = field(default_factory=list)    # FunctionPattern
    argdefs: list = field(default_factory=list)     # ArgumentDefinition, ordered
    modeled: dict = field(default_factory=dict)     # model name -> FunctionPattern
    code_base: int | None = None

    @classmethod
    def load(cls, pack_dir) -> "VendorPack":
        pack_dir = Path(pack_dir)
        manifest_path = pack_dir / "pack.json"
        if not manifest_path.exists():
            raise PackError(f"{pack_dir}: no pack.json")
        manifest = json.loads(manifest_path.read_text())
        mode = manifest.get("mode", "svc")
        if mode not in ("svc", "function"):
            raise PackError(f"{pack_dir}: bad mode {mode!r}")
        svcs = {name: int(str(num), 0)
                for name, num in manifest.get("svcs", {}).items()}
        patterns = [FunctionPattern.load(pack_dir / p)
                    for p in manifest.get("patterns", [])]
        modeled = {name: FunctionPattern.load(pack_dir / p)
                   for name, p in manifest.get("modeled", {}).items()}
        defs = [argdefs_mod.parse_argdef(pack_dir / p)
                for p in manifest.get("argdefs", [])]
        code_base = manifest.get("code_base")
        if code_base is not None:
            code_base = int(str(code_base), 0)
        pack = cls(name=manifest.get("name", pack_dir.name), mode=mode,
                   svcs=svcs, patterns=patterns, argdefs=defs,
                   modeled=modeled, code_base=code_base)
        pack.validate()
        return pack

    def validate(self) -> None:
        known = set(self.svcs) | {p.name for p in self.patterns}
        for d in self.argdefs:
            if d.coi not in known:
                raise PackError(
                    f"argdef {d.coi!r} references no svc or pattern in pack "
                    f"{self.name!r}")


@dataclass
class RunConfig:
    mode: str | None = None               # overrides pack mode when set
    max_call_depth: int = 1
    trace_time_limit: float = 90 * 60.0
    workers: int = 1
    out_dir: str | None = None
    code_base: int | None = None
    dump_structure: bool = False
    max_forks: int = 64

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class AnalysisResult:
    path: str
    sha256: str
    status: str               # ok | partial | failed | timeout
    report: dict
    structure: dict | None = None


def analyze_binary(path, pack: VendorPack, config: RunConfig | None = None)\
        -> AnalysisResult:
    config = config or RunConfig()
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    diagnostics: list[str] = []
    report: dict = {
        "binary_sha256": digest,
        "file": path.name,
        "code_base": None,
        "cois": [],
        "diagnostics": diagnostics,
    }
    status = "ok"
    structure = None

    try:
        img = load_image(path)
        read_vector_table(img)
    except CmsiftError as e:
        diagnostics.append(f"image: {e}")
        return AnalysisResult(str(path), digest, "failed", report)

    pin = config.code_base if config.code_base is not None else pack.code_base
    try:
        if pin is not None:
            img.rebase(pin)
        else:
            identify_code_base(img, decode_stream(img).values())
    except CmsiftError as e:
        diagnostics.append(f"code-base: {e}")
        return AnalysisResult(str(path), digest, "failed", report)
    report["code_base"] = f"0x{img.code_base:x}"

    try:
        scan = identify_inline_data(img)
    except CmsiftError as e:
        diagnostics.append(f"data-id: {e}")
        return AnalysisResult(str(path), digest, "failed", report)
    instrs = scan.instructions
    diagnostics.extend(scan.warnings)

    try:
        seeds = seed_function_starts(img, instrs, scan.target_sets)
        blocks = estimate_boundaries(seeds, instrs, img,
                                     switch_map=scan.target_sets,
                                     protected=protected_starts(img, instrs))
        annotate_functions(blocks, instrs, scan.target_sets)
    except CmsiftError as e:
        diagnostics.append(f"funcs: {e}")
        return AnalysisResult(str(path), digest, "failed", report)

    mode = config.mode or pack.mode
    sites: list[CoiSite] = []
    matched_starts: dict[str, int] = {}
    try:
        if mode == "svc":
            numbers = {num: name for name, num in pack.svcs.items()}
            sites = find_svcs(instrs, numbers)
        else:
            matcher = FunctionMatcher(img, instrs, blocks)
            for pattern in pack.patterns:
                try:
                    start = matcher.match(pattern)
                except NoMatch:
                    diagnostics.append(f"coi: no match for {pattern.name}")
                    continue
                except AmbiguousMatch as e:
                    diagnostics.append(
                        f"coi: ambiguous match for {pattern.name}: "
                        + ", ".join(hex(c) for c in e.candidates))
                    status = "partial"
                    continue
                matched_starts[pattern.name] = start
                sites.extend(find_call_sites(instrs, start, scan.target_sets,
                                             name=pattern.name))
    except CmsiftError as e:
        diagnostics.append(f"coi: {e}")
        return AnalysisResult(str(path), digest, "failed", report)

    modeled_map: dict[int, str] = {}
    if pack.modeled:
        matcher = FunctionMatcher(img, instrs, blocks)
        for model_name, pattern in pack.modeled.items():
            try:
                modeled_map[matcher.match(pattern)] = model_name
            except (NoMatch, AmbiguousMatch):
                diagnostics.append(f"model: {model_name} not located")

    trace_config = TraceConfig(max_call_depth=config.max_call_depth,
                               time_limit=config.trace_time_limit,
                               max_forks=config.max_forks)
    shared_overlay: dict = {}
    allocator = FeedbackAllocator()
    tracer = Tracer(img, instrs, blocks, trace_config,
                    shared_overlay=shared_overlay, modeled=modeled_map)

    sites_by_name: dict[str, list[CoiSite]] = {}
    for s in sorted(sites, key=lambda s: s.site_address):
        sites_by_name.setdefault(s.name, []).append(s)

    timed_out = False
    for definition in pack.argdefs:
        for site in sites_by_name.get(definition.coi, []):
            outcome = tracer.trace_site(site)
            diagnostics.extend(outcome.warnings)
            if outcome.timed_out:
                timed_out = True
            for capture in outcome.captures:
                extracted = extract_arguments(capture, definition, img=img,
                                              shared_overlay=shared_overlay)
                apply_feedback(extracted, shared_overlay, allocator)
                report["cois"].append(extracted.to_dict())

    if timed_out:
        status = "timeout"

    if config.dump_structure:
        structure = {
            "code_base": f"0x{img.code_base:x}",
            "blocks": json.loads(blocks_to_json(blocks)),
            "annotations": {f"0x{a:x}": v
                            for a, v in sorted(img.annotation_map().items())},
            "coi_sites": [{"name": s.name, "kind": s.kind,
                           "site": f"0x{s.site_address:x}"}
                          for s in sorted(sites, key=lambda s: s.site_address)],
        }

    return AnalysisResult(str(path), digest, status, report, structure)


# ---------------------------------------------------------------------------
# corpus driver

def _analyze_one(args) -> tuple:
    path, pack_dir, config = args
    try:
        pack = VendorPack.load(pack_dir)
        result = analyze_binary(path, pack, config)
    except Exception as e:                       # per-file isolation
        digest = ""
        try:
            digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        except OSError:
            pass
        log.error("analysis of %s failed: %s", path, e)
        return (str(path), digest, "failed",
                {"binary_sha256": digest, "file": Path(path).name,
                 "code_base": None, "cois": [],
                 "diagnostics": [f"internal: {e}",
                                 traceback.format_exc(limit=3)]},
                None)
    return (result.path, result.sha256, result.status, result.report,
            result.structure)


def analyze_corpus(directory, pack_dir, config: RunConfig) -> dict:
    """Analyze every .bin under directory; per-file isolation; returns a
    summary dict.  Reports land in config.out_dir as <sha256>.json."""
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*.bin") if p.is_file())
    summary = {"ok": 0, "partial": 0, "failed": 0, "timeout": 0,
               "reports": []}
    if not files:
        return summary
    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [(str(p), str(pack_dir), config) for p in files]
    if config.workers == 1:
        results = [_analyze_one(j) for j in jobs]
    else:
        with multiprocessing.Pool(config.workers) as pool:
            results = pool.map(_analyze_one, jobs)

    for path, digest, status, report, structure in sorted(results):
        summary[status] = summary.get(status, 0) + 1
        entry = {"file": path, "sha256": digest, "status": status}
        if out_dir and digest:
            report_path = out_dir / f"{digest}.json"
            report_path.write_text(json.dumps(report, indent=2) + "\n")
            entry["report"] = str(report_path)
            if structure is not None:
                sp = out_dir / f"{digest}.structure.json"
                sp.write_text(json.dumps(structure, indent=2) + "\n")
                entry["structure"] = str(sp)
        summary["reports"].append(entry)
    return summary
