"""Inline-data identification.

Four mechanisms locate data interleaved with code in the text region:
the Reset Handler's copy-loop literals (whole trailing ``.data`` image),
PC-relative loads (literal pools), table branches (tbb/tbh) and compact
switch helpers, and write-to-PC dispatch tables.  Discovered indirect
branch targets are kept for function identification.

Passes run to a fixpoint: marking bytes as data changes the decode, which
can expose further loads, so the driver re-decodes between rounds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources

from .executor import Executor, IndeterminateCondition
from .errors import UnsupportedInstruction
from .image import DataSource, FirmwareImage, reset_handler_address
from .isa import PC, SP, DecodedInstruction, Imm, Reg, decode_stream

log = logging.getLogger(__name__)

BACKWARD_WALK_LIMIT = 16            # instructions searched for a comparison
RESET_HANDLER_SCAN_LIMIT = 48       # instructions examined for the copy loop


@dataclass
class BranchTargetSet:
    origin: int
    targets: list = field(default_factory=list)
    low_confidence: bool = False

    def add(self, target: int) -> None:
        if target not in self.targets:
            self.targets.append(target)

    @property
    def max_target(self) -> int | None:
        return max(self.targets) if self.targets else None


@dataclass
class DataScanResult:
    instructions: dict
    target_sets: dict            # origin address -> BranchTargetSet
    data_segment: tuple | None   # (text_end, data_start, data_end)
    warnings: list
    rounds: int = 0


def load_helper_signatures() -> list[dict]:
    with resources.files("cmsift.data").joinpath(
            "switch_helpers.json").open("r") as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# .data segment via the Reset Handler

def find_data_segment(img: FirmwareImage, reset_handler: int | None,
                      instrs: dict) -> tuple | None:
    """Detect the text-end / data-start / data-end literal triple.

    The Reset Handler's copy loop loads three consecutive PC-relative
    literals: the end of .text inside the image, and a start/end pair
    outside it (RAM).  When the shape matches, everything after text-end
    is the .data load image and is annotated as data.
    """
    if reset_handler is None or reset_handler not in instrs:
        return None
    addresses = sorted(instrs)
    try:
        idx = addresses.index(reset_handler)
    except ValueError:
        return None

    literals = []
    for addr in addresses[idx:idx + RESET_HANDLER_SCAN_LIMIT]:
        ins = instrs[addr]
        if ins.is_load:
            lit = ins.pc_relative_target()
            if lit is not None and img.contains(lit, 4):
                literals.append(img.read_word(lit))
        if ins.mnemonic in ("bx", "pop") or \
                (ins.mnemonic == "b" and ins.condition is None and
                 ins.target is not None and ins.target < addr):
            break

    for i in range(len(literals) - 2):
        text_end, data_start, data_end = literals[i:i + 3]
        if not (img.code_base < text_end <= img.end):
            continue
        if img.contains(data_start) or img.contains(data_end):
            continue
        if data_start > data_end:
            continue
        if (data_end - data_start) > (img.end - text_end):
            continue
        if text_end < img.end:
            img.mark_data(text_end, img.end - text_end,
                          DataSource.RESET_HANDLER_SEGMENT)
        log.info(".data segment: text ends 0x%x, data 0x%x..0x%x",
                 text_end, data_start, data_end)
        return text_end, data_start, data_end
    return None


# ---------------------------------------------------------------------------
# PC-relative loads (literal pools)

def scan_pc_relative_loads(img: FirmwareImage, instrs: dict) -> bool:
    """Annotate literal-pool slots referenced by [pc, #imm] loads."""
    changed = False
    for ins in instrs.values():
        if not ins.is_load:
            continue
        target = ins.pc_relative_target()
        if target is None:
            continue
        n = ins.load_size
        if not img.contains(target, n):
            log.warning("literal at 0x%x outside image (load at 0x%x)",
                        target, ins.address)
            continue
        if img.mark_data(target, n, DataSource.PC_RELATIVE_LOAD):
            changed = True
    return changed


# ---------------------------------------------------------------------------
# comparison discovery shared by table branches and PC writes

def _preceding_comparison(instrs_sorted: list, instrs: dict, site: int,
                          want_reg: int | None):
    """Walk back from site to find `cmp <reg>, #imm`; returns
    (cmp_value, cmp_register, cmp_address) or None."""
    try:
        idx = instrs_sorted.index(site)
    except ValueError:
        return None
    for back in range(1, BACKWARD_WALK_LIMIT + 1):
        j = idx - back
        if j < 0:
            break
        ins = instrs[instrs_sorted[j]]
        if ins.mnemonic == "cmp" and isinstance(ins.operands[1], Imm):
            reg = ins.operands[0].n
            if want_reg is not None and reg != want_reg:
                continue
            return ins.operands[1].value, reg, ins.address
    return None


def _branch_bound(instrs: dict, cmp_address: int, cmp_value: int):
    """Range implied by the conditional branch following the comparison.

    Escape-style guards are recognised: the branch diverts out-of-range
    indices, execution falls through for valid ones."""
    nxt = None
    for addr in sorted(instrs):
        if addr > cmp_address:
            nxt = instrs[addr]
            break
    if nxt is None or nxt.base_mnemonic != "b" or nxt.condition is None:
        return None
    bound = {"hi": cmp_value, "cs": cmp_value - 1,
             "gt": cmp_value, "ge": cmp_value - 1}.get(nxt.condition)
    if bound is None or bound < 0:
        return None
    return bound, nxt.address


# ---------------------------------------------------------------------------
# table branches

def scan_table_branches(img: FirmwareImage, instrs: dict,
                        target_sets: dict) -> tuple[bool, list]:
    changed = False
    warnings = []
    instrs_sorted = sorted(instrs)
    for ins in list(instrs.values()):
        if ins.mnemonic not in ("tbb", "tbh"):
            continue
        mul = 2 if ins.mnemonic == "tbh" else 1
        table = ins.address + 4
        found = _preceding_comparison(instrs_sorted, instrs, ins.address,
                                      ins.operands[0].index)
        if found is None:
            bound_addr = _next_known_code(instrs, target_sets, ins.address + 4)
            if bound_addr is None or bound_addr <= table:
                warnings.append(
                    f"table branch at 0x{ins.address:x}: no comparison and "
                    "no conservative bound; skipped")
                continue
            if img.mark_data(table, bound_addr - table,
                             DataSource.TABLE_BRANCH):
                changed = True
            ts = target_sets.setdefault(ins.address,
                                        BranchTargetSet(ins.address))
            ts.low_confidence = True
            warnings.append(
                f"table branch at 0x{ins.address:x}: bounded conservatively "
                f"at 0x{bound_addr:x}")
            continue
        cmp_value, _, _ = found
        max_addr = table + cmp_value * mul + 2
        if ins.mnemonic == "tbb" and img.contains(max_addr, 1) and \
                img.read_bytes(max_addr, 1)[0] == 0:
            max_addr += 1
        if not img.contains(table, max_addr - table):
            warnings.append(f"table branch at 0x{ins.address:x}: table "
                            "extends past image; skipped")
            continue
        if img.mark_data(table, max_addr - table, DataSource.TABLE_BRANCH):
            changed = True
        ts = target_sets.setdefault(ins.address, BranchTargetSet(ins.address))
        for i in range(cmp_value + 1):
            entry_addr = table + i * mul
            raw = img.read_bytes(entry_addr, mul)
            entry = int.from_bytes(raw, "little")
            target = table + 2 * entry
            if img.contains(target, 2):
                ts.add(target)
    return changed, warnings


def _next_known_code(instrs: dict, target_sets: dict, after: int):
    """First address beyond `after` known to hold code: a direct branch
    target or a recorded indirect target."""
    candidates = []
    for ins in instrs.values():
        if ins.base_mnemonic in ("b", "bl") and ins.target is not None:
            if ins.target > after:
                candidates.append(ins.target)
    for ts in target_sets.values():
        candidates.extend(t for t in ts.targets if t > after)
    return min(candidates) if candidates else None


# ---------------------------------------------------------------------------
# compact switch helpers

def find_switch_helpers(img: FirmwareImage,
                        signatures: list[dict]) -> dict[int, dict]:
    """Locate helper bodies by prologue byte signature.

    Returns helper start address -> signature entry."""
    out = {}
    data = img.data
    for sig in signatures:
        pattern = bytes.fromhex(sig["prologue"])
        start = 0
        while True:
            pos = data.find(pattern, start)
            if pos < 0:
                break
            if pos % 2 == 0 and not img.is_data(img.code_base + pos):
                out[img.code_base + pos] = sig
            start = pos + 2
    return out


def scan_switch_helpers(img: FirmwareImage, instrs: dict,
                        helpers: dict[int, dict],
                        target_sets: dict) -> tuple[bool, list]:
    changed = False
    warnings = []
    if not helpers:
        return changed, warnings
    instrs_sorted = sorted(instrs)
    for ins in list(instrs.values()):
        if ins.mnemonic != "bl" or ins.target not in helpers:
            continue
        sig = helpers[ins.target]
        base = ins.address + 4
        entry_size = sig["entry_size"]
        signed = sig.get("signed", False)
        if sig["table_rule"] == "count_byte":
            if not img.contains(base, 1):
                continue
            count = img.read_bytes(base, 1)[0]
            table_end = base + count + 2
            if table_end % 2:
                table_end += 1
            entry_base = base + 1
        elif sig["table_rule"] == "cmp_bound":
            if entry_size == 4:
                entry_base = (base + 2) & ~3
            else:
                entry_base = base
            found = _preceding_comparison(instrs_sorted, instrs,
                                          ins.address, 0)
            if found is None:
                warnings.append(
                    f"switch helper call at 0x{ins.address:x}: no index "
                    "comparison found; skipped")
                continue
            cmp_value, _, _ = found
            count = cmp_value + 1
            table_end = entry_base + count * entry_size
            if entry_size == 1 and table_end % 2 and \
                    img.contains(table_end, 1) and \
                    img.read_bytes(table_end, 1)[0] == 0:
                table_end += 1
        else:
            warnings.append(f"unknown table rule {sig['table_rule']!r}")
            continue
        if not img.contains(base, table_end - base):
            warnings.append(f"switch helper table at 0x{base:x} extends "
                            "past image; skipped")
            continue
        if img.mark_data(base, table_end - base, DataSource.SWITCH_HELPER):
            changed = True
        ts = target_sets.setdefault(ins.address, BranchTargetSet(ins.address))
        for i in range(count):
            raw = img.read_bytes(entry_base + i * entry_size, entry_size)
            entry = int.from_bytes(raw, "little", signed=signed)
            if entry_size == 4:
                target = entry_base + entry
            else:
                target = base + 2 * entry
            if img.contains(target, 2):
                ts.add(target)
    return changed, warnings


# ---------------------------------------------------------------------------
# write-to-PC dispatch

def _is_pc_write(ins: DecodedInstruction) -> bool:
    if ins.base_mnemonic in ("mov", "add") and ins.operands and \
            isinstance(ins.operands[0], Reg) and ins.operands[0].n == PC:
        return True
    if ins.is_load and isinstance(ins.operands[0], Reg) and \
            ins.operands[0].n == PC:
        memop = ins.operands[1]
        return memop.base not in (SP, PC)
    return False


def scan_pc_writes(img: FirmwareImage, instrs: dict, executor: Executor,
                   target_sets: dict) -> tuple[bool, list]:
    """Bound the index via the guarding comparison, then concretely execute
    the dispatch slice for every in-range index, collecting load-table
    addresses (data) and branch targets."""
    changed = False
    warnings = []
    instrs_sorted = sorted(instrs)
    for ins in list(instrs.values()):
        if not _is_pc_write(ins):
            continue
        site = ins.address
        found = _preceding_comparison(instrs_sorted, instrs, site, None)
        if found is None:
            warnings.append(f"pc-write at 0x{site:x}: no bounding "
                            "comparison; skipped")
            continue
        cmp_value, cmp_reg, cmp_address = found
        bound = _branch_bound(instrs, cmp_address, cmp_value)
        if bound is None:
            warnings.append(f"pc-write at 0x{site:x}: unbounded index "
                            "range; skipped")
            continue
        max_index, branch_addr = bound

        # slice starts right after the guard branch
        slice_start = None
        for addr in instrs_sorted:
            if addr > branch_addr:
                slice_start = addr
                break
        if slice_start is None or slice_start > site:
            continue

        # the last non-PC-relative load before the pc write is the table read
        load_addr = None
        for addr in instrs_sorted:
            if slice_start <= addr <= site:
                cand = instrs[addr]
                if cand.is_load and cand.pc_relative_target() is None:
                    load_addr = addr
        if load_addr is None and not ins.is_load:
            warnings.append(f"pc-write at 0x{site:x}: no table load found; "
                            "skipped")
            continue
        if load_addr is None:
            load_addr = site

        ts = target_sets.setdefault(site, BranchTargetSet(site))
        for index in range(max_index + 1):
            state = executor.fresh_state(pc=slice_start)
            state.set_reg(cmp_reg, index)
            ok = True
            for _ in range(BACKWARD_WALK_LIMIT * 4):
                addr = state.pc
                if addr == load_addr:
                    cand = instrs[addr]
                    src = executor._mem_address(state, cand.operands[1], cand)
                    if src is not None and img.contains(src, cand.load_size):
                        if img.mark_data(src, cand.load_size,
                                         DataSource.PC_WRITE_TABLE):
                            changed = True
                if addr == site:
                    try:
                        executor.step(state, instrs[addr])
                    except (IndeterminateCondition, UnsupportedInstruction):
                        ok = False
                    break
                if addr not in instrs:
                    ok = False
                    break
                try:
                    executor.step(state, instrs[addr])
                except (IndeterminateCondition, UnsupportedInstruction):
                    ok = False
                    break
            else:
                ok = False
            if ok and state.pc is not None:
                target = state.pc & ~1
                if img.contains(target, 2):
                    ts.add(target)
    return changed, warnings


# ---------------------------------------------------------------------------
# fixpoint driver

def identify_inline_data(img: FirmwareImage,
                         helper_signatures: list[dict] | None = None,
                         max_rounds: int = 10) -> DataScanResult:
    """Run all inline-data passes to a fixpoint and return the final decode."""
    if helper_signatures is None:
        helper_signatures = load_helper_signatures()
    instrs = decode_stream(img)
    segment = find_data_segment(img, reset_handler_address(img), instrs)
    if segment:
        instrs = decode_stream(img)

    executor = Executor(img)
    target_sets: dict[int, BranchTargetSet] = {}
    warnings: list[str] = []
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        helpers = find_switch_helpers(img, helper_signatures)
        changed = scan_pc_relative_loads(img, instrs)
        ch, w = scan_switch_helpers(img, instrs, helpers, target_sets)
        changed |= ch
        warnings.extend(w)
        ch, w = scan_table_branches(img, instrs, target_sets)
        changed |= ch
        warnings.extend(w)
        ch, w = scan_pc_writes(img, instrs, executor, target_sets)
        changed |= ch
        warnings.extend(w)
        if not changed:
            break
        instrs = decode_stream(img)
    return DataScanResult(instructions=instrs, target_sets=target_sets,
                          data_segment=segment, warnings=warnings,
                          rounds=rounds)
