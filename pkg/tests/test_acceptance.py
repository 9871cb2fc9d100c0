"""Acceptance criteria, one test per criterion.

Each test prints a PASS line on success (run with -s to watch them);
a failing criterion fails its test with the measured numbers.
"""

import json
import time
import pytest

import fixture_lib
from conftest import Analysis, write_pack
from cmsift.coi import FunctionMatcher, FunctionPattern, find_svcs
from cmsift.datascan import identify_inline_data
from cmsift.errors import AmbiguousMatch
from cmsift.funcs import (
    annotate_functions,
    estimate_boundaries,
    protected_starts,
    seed_function_starts,
)
from cmsift.image import FirmwareImage, identify_code_base, read_vector_table
from cmsift.isa import decode_stream
from cmsift.pipeline import RunConfig, VendorPack, analyze_binary, analyze_corpus
from cmsift.trace import TraceConfig, Tracer


def report(criterion: str, detail: str):
    print(f"ACCEPTANCE {criterion}: PASS  {detail}")


# ---------------------------------------------------------------------------

def test_criterion_1_code_base_recovery():
    """Recovered base equals link base exactly on five fixtures, < 1 s each."""
    bases = [0, 0x1B000, 0x10051000, 0x26000, 0x3C000]
    timings = []
    for base in bases:
        res = fixture_lib.base_fixture(base)
        img = FirmwareImage(data=res.data)
        read_vector_table(img)
        t0 = time.monotonic()
        recovered = identify_code_base(img, decode_stream(img).values())
        dt = time.monotonic() - t0
        timings.append(dt)
        assert recovered == base, f"base 0x{base:x}: got 0x{recovered:x}"
        assert dt < 1.0, f"base 0x{base:x}: took {dt:.3f}s"
    report("1 code-base recovery",
           f"5/5 exact, max {max(timings) * 1000:.1f} ms")


def test_criterion_2_inline_data_mechanisms():
    """One fixture per mechanism; annotations match generator ground truth
    byte-for-byte."""
    checks = []

    def bytes_of(img):
        return set(img._data_bytes)

    def rng(res, label, n):
        s = res.symbols[label]
        return set(range(s, s + n))

    # (a) reset-handler segment
    res = fixture_lib.data_segment_fixture(data_size=16)
    a = Analysis(res, rebase=False)
    expected = {x for start, size in res.data_ranges
                for x in range(start, start + size)
                if start >= res.symbols["reset"]}
    assert bytes_of(a.img) == expected
    checks.append("reset-handler-segment")

    # (b) pc-relative loads incl. the ldrh residual re-decode
    res = fixture_lib.literal_fixture()
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == (rng(res, "word_slot", 4)
                               | rng(res, "half_slot", 2)
                               | rng(res, "byte_slot", 1))
    assert res.symbols["residual"] in a.instrs
    assert a.instrs[res.symbols["residual"]].render() == "movs r0, #34"
    checks.append("pc-relative+residual")

    # (c) tbb / tbh tables
    res = fixture_lib.tbb_fixture()
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == rng(res, "tb_table", 4)
    res = fixture_lib.tbh_fixture(cases=6)
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == rng(res, "th_table", 12)
    assert len(a.scan.target_sets[res.symbols["th_table"] - 4].targets) == 6
    checks.append("tbb/tbh")

    # (d) GNU and Keil switch helpers
    res = fixture_lib.gnu_switch_fixture()
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == rng(res, "g_table", 4)
    res = fixture_lib.keil_switch_fixture()
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == rng(res, "k_table", 6)
    checks.append("gnu+keil-helpers")

    # (e) write-to-PC table
    res = fixture_lib.pc_write_fixture(cases=4)
    a = Analysis(res, rebase=False)
    assert bytes_of(a.img) == rng(res, "p_table", 16)
    targets = {t for ts in a.scan.target_sets.values() for t in ts.targets}
    assert {res.symbols[f"pcase{i}"] for i in range(4)} <= targets
    checks.append("pc-write")

    report("2 inline-data mechanisms", ", ".join(checks))


def _boundary_metrics(image, funcs, expect_base=None):
    img = FirmwareImage(data=image)
    read_vector_table(img)
    identify_code_base(img, decode_stream(img).values())
    if expect_base is not None:
        assert img.code_base == expect_base
    scan = identify_inline_data(img)
    instrs = scan.instructions
    seeds = seed_function_starts(img, instrs, scan.target_sets)
    blocks = estimate_boundaries(seeds, instrs, img, scan.target_sets,
                                 protected_starts(img, instrs))
    annotate_functions(blocks, instrs, scan.target_sets)
    truth = set(funcs.values()) if isinstance(funcs, dict) else set(funcs)
    est = {b.start for b in blocks}
    bl_targets = {i.target for i in instrs.values() if i.mnemonic == "bl"}
    tpr = len(truth & est) / len(truth)
    efp = (est - truth) & bl_targets
    return tpr, len(efp) / len(truth), truth, est


def test_criterion_3_function_boundaries(compiled_samples):
    """Fixture corpus: 100% TPR, 0 effective FPs.  Compiled sample with an
    unstripped twin: TPR >= 95%, EFPR <= 1.5%."""
    res, names = fixture_lib.twenty_function_fixture()
    truth = {res.symbols[n] for n in names}
    tpr, efpr, _, est = _boundary_metrics(res.data, truth)
    assert tpr == 1.0, f"fixture TPR {tpr:.2%}"
    assert efpr == 0.0, f"fixture EFPR {efpr:.2%}"

    detail = [f"fixture TPR 100% ({len(truth)} fns), 0 effective FPs"]
    for opt, (image, funcs, base) in compiled_samples.items():
        tpr, efpr, truth2, _ = _boundary_metrics(image, funcs, base)
        assert tpr >= 0.95, f"{opt}: TPR {tpr:.2%} < 95%"
        assert efpr <= 0.015, f"{opt}: EFPR {efpr:.2%} > 1.5%"
        detail.append(f"clang {opt}: TPR {tpr:.1%}, EFPR {efpr:.1%} "
                      f"({len(truth2)} fns)")
    report("3 function boundaries", "; ".join(detail))


def test_criterion_4_executor_differential_suite():
    """Every supported mnemonic passes >= 3 value+flag cases against the
    hand-maintained truth table with zero deviations."""
    from collections import Counter
    import test_executor

    failures = []
    counts = Counter()
    for text, regs, flags, mem, expect in test_executor.TRUTH_TABLE:
        head = text.split()[0]
        head = head[:-2] if head.endswith(".w") else head
        if head.startswith("b") and head not in ("bics", "bkpt", "bx", "blx"):
            head = "b-family"
        counts[head] += 1
        try:
            state, _ = test_executor.run_one(text, regs, flags, mem)
            test_executor.check(state, expect)
        except AssertionError as e:
            failures.append(f"{text}: {e}")
    assert not failures, failures[:5]
    thin = {m: c for m, c in counts.items() if c < 3}
    assert not thin, f"mnemonics below 3 cases: {thin}"
    report("4 executor differential suite",
           f"{len(test_executor.TRUTH_TABLE)} cases over {len(counts)} "
           "mnemonic groups, zero deviations")


def test_criterion_5_pattern_matching(compiled_samples):
    """memset pattern uniquely identifies the true block among >= 10 decoys
    across compiler variants; ambiguity always surfaces as an error."""
    pattern = FunctionPattern.from_dict(fixture_lib.MEMSET_PATTERN)
    variants = []

    for variant in ("a", "b"):
        res = fixture_lib.memset_fixture(variant)
        a = Analysis(res)
        decoy_count = len(fixture_lib.DECOY_NAMES)
        assert decoy_count >= 10
        m = FunctionMatcher(a.img, a.instrs, a.blocks)
        assert m.match(pattern) == res.symbols["fill_bytes"]
        variants.append(f"asm-{variant}")

    for opt, (image, funcs, base) in compiled_samples.items():
        img = FirmwareImage(data=image)
        read_vector_table(img)
        identify_code_base(img, decode_stream(img).values())
        scan = identify_inline_data(img)
        seeds = seed_function_starts(img, scan.instructions, scan.target_sets)
        blocks = estimate_boundaries(seeds, scan.instructions, img,
                                     scan.target_sets,
                                     protected_starts(img, scan.instructions))
        annotate_functions(blocks, scan.instructions, scan.target_sets)
        m = FunctionMatcher(img, scan.instructions, blocks)
        assert m.match(pattern) == funcs["fill8"], opt
        variants.append(f"clang{opt}")

    # ambiguity surfaces, never silently resolved
    src = (
        fixture_lib.vector_table()
        + "reset:\n    bl twin_a\n    bl twin_b\nhang:\n    b hang\n"
        + fixture_lib.DEFAULT_HANDLERS
        + """
twin_a:
    push {lr}
    adds r0, r0, r1
    pop {pc}
twin_b:
    push {lr}
    adds r0, r0, r1
    pop {pc}
"""
    )
    res = fixture_lib.assemble(src, base=0)
    a = Analysis(res)
    twin = FunctionPattern.from_dict({
        "name": "twin", "test_sets": [
            {"regs_in": {"r0": "1", "r1": "2"}, "regs_out": {"r0": "3"}}]})
    with pytest.raises(AmbiguousMatch):
        FunctionMatcher(a.img, a.instrs, a.blocks).match(twin)

    report("5 pattern matching",
           f"unique among {len(fixture_lib.DECOY_NAMES)} decoys in "
           + ", ".join(variants) + "; ambiguity raises")


def test_criterion_6_end_to_end_fixed_passkey(tmp_path):
    """The reconstruction fixture renders the passkey string exactly."""
    for passkey, hexs in (("123456", "313233343536"),
                          ("000000", "303030303030")):
        res = fixture_lib.passkey_fixture(passkey)
        binpath = tmp_path / f"fw_{passkey}.bin"
        binpath.write_bytes(res.data)
        pack_dir = write_pack(
            tmp_path / f"pack_{passkey}",
            {"name": "t", "mode": "svc", "svcs": {"ble_opt_set": "0x68"}},
            argdefs={"ble_opt_set": fixture_lib.PASSKEY_ARGDEF})
        result = analyze_binary(binpath, VendorPack.load(pack_dir),
                                RunConfig())
        assert result.status == "ok"
        coi = result.report["cois"][0]
        assert coi["args"][0]["value"] == 34
        leaf = coi["args"][1]["value"]["value"]
        assert leaf["ascii"] == passkey          # exact string match
        assert leaf["hex"] == hexs
    report("6 end-to-end fixed passkey",
           'rendered "123456" and "000000" exactly, opt_id 34')


def test_criterion_7_trace_rule_properties():
    """max_call_depth=0 enters nothing off-path; deny-listed blocks appear
    on no capture path; skipped bl leaves r0=0; indeterminate conditional
    yields exactly two captures."""
    # (i) + (iii) depth rule and skip convention
    res = fixture_lib.depth_rule_fixture()
    a = Analysis(res)
    sites = find_svcs(a.instrs, {0x42})
    shallow = Tracer(a.img, a.instrs, a.blocks,
                     TraceConfig(max_call_depth=0)).trace_site(sites[0])
    assert len(shallow.captures) == 1
    assert shallow.captures[0].regs[0] == 0      # helper never entered
    deep = Tracer(a.img, a.instrs, a.blocks,
                  TraceConfig(max_call_depth=1)).trace_site(sites[0])
    assert deep.captures[0].regs[0] == 7         # helper entered at depth 1

    # (ii) deny-listed blocks never on a capture path
    res = fixture_lib.deny_rule_fixture()
    a = Analysis(res)
    spin = res.symbols["spin"]
    assert a.block_at(spin).deny_listed
    sites = find_svcs(a.instrs, {0x42})
    outcome = Tracer(a.img, a.instrs, a.blocks,
                     TraceConfig(max_call_depth=8)).trace_site(sites[0])
    assert outcome.captures
    for cap in outcome.captures:
        assert cap.regs[0] == 0                  # bl spin skipped
    trapped = find_svcs(a.instrs, {0x43})
    outcome2 = Tracer(a.img, a.instrs, a.blocks,
                      TraceConfig()).trace_site(trapped[0])
    assert all(not a.block_at(spin).contains(c.site.site_address)
               for c in outcome2.captures)

    # (iv) two-path fixture: exactly two captures
    res = fixture_lib.two_path_fixture()
    a = Analysis(res)
    sites = find_svcs(a.instrs, {0x42})
    outcome = Tracer(a.img, a.instrs, a.blocks,
                     TraceConfig()).trace_site(sites[0])
    assert len(outcome.captures) == 2
    assert {c.regs[1] for c in outcome.captures} == {1, 2}

    report("7 trace-rule properties",
           "depth-0 skip, deny-list exclusion, r0=0 convention, 2-way fork")


def test_criterion_8_chaining(tmp_path):
    """COI-B's argument equals COI-A's fed-back output handle."""
    res = fixture_lib.chaining_fixture()
    binpath = tmp_path / "fw.bin"
    binpath.write_bytes(res.data)
    pack_dir = write_pack(
        tmp_path / "pack",
        {"name": "chain", "mode": "svc",
         "svcs": {"service_add": "0x10", "char_add": "0x20"}},
        argdefs={"service_add": fixture_lib.SERVICE_ADD_ARGDEF,
                 "char_add": fixture_lib.CHAR_ADD_ARGDEF})
    result = analyze_binary(binpath, VendorPack.load(pack_dir), RunConfig())
    cois = {c["coi"]: c for c in result.report["cois"]}
    handle = cois["service_add"]["args"][1]
    assert handle["type"] == "out"
    fed = handle["fed_back"]
    assert fed is not None
    assert cois["char_add"]["args"][0]["value"] == fed
    report("8 chaining", f"characteristic linked to service handle {fed:#x}")


def test_criterion_9_corpus_determinism(tmp_path):
    """1-worker and 4-worker corpus runs produce byte-identical reports."""
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    fixtures = [fixture_lib.passkey_fixture("123456"),
                fixture_lib.passkey_fixture("000000", base=0x26000),
                fixture_lib.chaining_fixture(),
                fixture_lib.two_path_fixture(),
                fixture_lib.depth_rule_fixture(),
                fixture_lib.memset_fixture("a")]
    for i, res in enumerate(fixtures):
        (corpus / f"fw{i}.bin").write_bytes(res.data)
    pack_dir = write_pack(
        tmp_path / "pack",
        {"name": "mix", "mode": "svc",
         "svcs": {"ble_opt_set": "0x68", "service_add": "0x10",
                  "char_add": "0x20", "probe": "0x42"}},
        argdefs={"ble_opt_set": fixture_lib.PASSKEY_ARGDEF,
                 "service_add": fixture_lib.SERVICE_ADD_ARGDEF,
                 "char_add": fixture_lib.CHAR_ADD_ARGDEF,
                 "probe": {"coi": "probe",
                           "args": [{"name": "a", "type": "u32"},
                                    {"name": "b", "type": "u32"}]}})
    blobs = {}
    for workers in (1, 4):
        out = tmp_path / f"out{workers}"
        summary = analyze_corpus(corpus, pack_dir,
                                 RunConfig(workers=workers,
                                           out_dir=str(out)))
        assert summary["failed"] == 0
        blobs[workers] = {p.name: p.read_bytes()
                          for p in sorted(out.glob("*.json"))}
    assert blobs[1] == blobs[4]
    report("9 corpus determinism",
           f"{len(blobs[1])} reports byte-identical across 1 vs 4 workers")
