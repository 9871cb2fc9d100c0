"""Function block estimation and annotation.

Boundaries are estimated from seeded start addresses by collecting
candidate exit points inside each region and discarding every exit that
some conditional branch or switch table can jump over; the first exit
that cannot be bypassed ends the function.  A switch table whose targets
overflow the region pulls the following region(s) in (block merging).
Newly exposed starts after an exit are fed back into the worklist.

Annotation adds caller/callee cross-references, call depth over the
call-graph condensation, and a deny-list flag for perpetual loops.

Known limitation: toolchains that use bl to branch-and-link *within* a
function (seen with IAR output) inflate call depths; such blocks are
still bounded correctly but may be skipped earlier by depth-limited
tracing.
"""

from __future__ import annotations

import bisect
import json
import logging
from dataclasses import dataclass, field

from .image import FirmwareImage, handler_addresses
from .isa import LR, PC, DecodedInstruction, Reg, RegList

log = logging.getLogger(__name__)

_PROLOGUE_SUB_SP = ("sub",)


@dataclass
class FunctionBlock:
    start: int
    end: int                     # last byte of the final exit (inclusive)
    xrefs_in: set = field(default_factory=set)    # call-site addresses
    xrefs_out: set = field(default_factory=set)   # callee start addresses
    call_depth: int = 0
    deny_listed: bool = False
    flagged: bool = False        # fallthrough block or merge anomaly

    @property
    def end_exclusive(self) -> int:
        return self.end + 1

    def contains(self, address: int) -> bool:
        return self.start <= address <= self.end


def _is_prologue(ins: DecodedInstruction) -> bool:
    if ins.mnemonic == "push":
        return True
    if ins.mnemonic == "sub" and ins.operands and \
            isinstance(ins.operands[0], Reg) and ins.operands[0].n == 13:
        return True
    if ins.mnemonic == "stmdb" and ins.operands and \
            isinstance(ins.operands[0], Reg) and ins.operands[0].n == 13 and \
            isinstance(ins.operands[1], RegList) and LR in ins.operands[1].regs:
        return True
    return False


def seed_function_starts(img: FirmwareImage, instrs: dict,
                         extra_targets: dict | None = None) -> list[int]:
    """High-certainty function starts: vector-table handlers, bl targets,
    prologue-shaped b targets, and indirect targets from data discovery."""
    seeds = set()
    for h in handler_addresses(img):
        if h in instrs:
            seeds.add(h)
    for ins in instrs.values():
        if ins.target is None or ins.target not in instrs:
            continue
        if ins.mnemonic == "bl":
            seeds.add(ins.target)
        elif ins.base_mnemonic == "b" and ins.condition is None:
            if _is_prologue(instrs[ins.target]):
                seeds.add(ins.target)
    if extra_targets:
        for ts in extra_targets.values():
            for t in ts.targets:
                if t in instrs:
                    seeds.add(t)
    return sorted(seeds)


def protected_starts(img: FirmwareImage, instrs: dict) -> set[int]:
    """Starts that block merging may never swallow: VT handlers, bl targets."""
    out = {h for h in handler_addresses(img) if h in instrs}
    for ins in instrs.values():
        if ins.mnemonic == "bl" and ins.target in instrs:
            out.add(ins.target)
    return out


def _is_exit(ins: DecodedInstruction, start: int, bound: int) -> bool:
    m = ins.mnemonic
    if m == "pop" and PC in ins.operands[0].regs:
        return True
    if m == "ldmia.w" and PC in ins.operands[1].regs:
        return True
    if m == "bx" and ins.operands[0].n == LR:
        return True
    if m in ("unknown", "udf"):
        return True
    if ins.base_mnemonic == "b" and ins.condition is None:
        t = ins.target
        return t is not None and (t <= ins.address or t < start or t >= bound)
    return False


def _region_items(img, instrs, start, bound):
    """Yield (address, kind, payload) for instructions and data runs."""
    addr = start
    while addr < bound:
        if img.is_data(addr):
            ext = min(img.data_extent_after(addr), bound)
            yield addr, "data", ext
            addr = ext
            if addr % 2:
                addr += 1
            continue
        ins = instrs.get(addr)
        if ins is None:
            yield addr, "hole", addr + 2
            addr += 2
            continue
        yield addr, "ins", ins
        addr += ins.width


def _analyze_region(img, instrs, switch_map, start, bound):
    """One Alg-style pass over [start, bound).

    Returns (end_exclusive, merge_to, flagged): merge_to is set when a
    switch table's max target overflows the region."""
    exits = []          # (address, kind, width)
    bypassers = []      # (from_address, to_address)
    merge_to = None
    for addr, kind, payload in _region_items(img, instrs, start, bound):
        if kind == "data":
            exits.append((addr, "data", 0))
            continue
        if kind == "hole":
            exits.append((addr, "data", 0))
            continue
        ins = payload
        if _is_exit(ins, start, bound):
            exits.append((addr, "exit", ins.width))
        if ins.base_mnemonic in ("b", "cbz", "cbnz") and \
                (ins.condition is not None or
                 ins.base_mnemonic in ("cbz", "cbnz")):
            t = ins.target
            if t is not None and t > addr:
                bypassers.append((addr, min(t, bound)))
        ts = switch_map.get(addr) if switch_map else None
        if ts is not None and ts.targets:
            t = ts.max_target
            if t >= bound:
                merge_to = max(merge_to or 0, t)
            bypassers.append((addr, min(t, bound)))

    surviving = []
    for e_addr, e_kind, e_width in exits:
        if any(b_from < e_addr < b_to for b_from, b_to in bypassers):
            continue
        surviving.append((e_addr, e_kind, e_width))

    if merge_to is not None:
        return bound, merge_to, False
    if not surviving:
        return bound, None, True
    e_addr, e_kind, e_width = surviving[0]
    if e_kind == "data":
        return e_addr, None, False
    return e_addr + e_width, None, False


def _next_valid_instruction(img, instrs, from_addr, bound):
    addr = from_addr
    while addr < bound:
        if img.is_data(addr):
            addr = img.data_extent_after(addr)
            if addr % 2:
                addr += 1
            continue
        ins = instrs.get(addr)
        if ins is None:
            addr += 2
            continue
        if ins.mnemonic == "nop" or ins.raw in (b"\x00\x00", b"\xc0\x46"):
            # 0x0000 pad runs and mov r8, r8 (pre-UAL nop) both count as
            # inter-function padding
            addr += ins.width
            continue
        return addr
    return None


def estimate_boundaries(seeds: list[int], instrs: dict, img: FirmwareImage,
                        switch_map: dict | None = None,
                        protected: set | None = None) -> list[FunctionBlock]:
    """Estimate function blocks from seed starts.

    switch_map maps a switch-construct origin address to its
    BranchTargetSet; protected starts survive block merging.
    """
    if not seeds:
        return []
    switch_map = switch_map or {}
    protected = protected or set()
    starts = sorted(set(seeds))
    code_end = img.end

    blocks: list[FunctionBlock] = []
    i = 0
    while i < len(starts):
        start = starts[i]
        while True:
            bound = starts[i + 1] if i + 1 < len(starts) else code_end
            end_excl, merge_to, flagged = _analyze_region(
                img, instrs, switch_map, start, bound)
            if merge_to is None or merge_to < bound:
                break
            removable = [s for s in starts[i + 1:]
                         if s <= merge_to and s not in protected]
            if not removable:
                # cannot merge past a high-certainty start; flag and stop
                flagged = True
                break
            for s in removable:
                starts.remove(s)
        end_excl = max(end_excl, start + 2)
        blocks.append(FunctionBlock(start=start, end=end_excl - 1,
                                    flagged=flagged))
        nxt = _next_valid_instruction(img, instrs, end_excl, bound)
        if nxt is not None and nxt < bound and nxt > start:
            bisect.insort(starts, nxt)
        i += 1
    return blocks


# ---------------------------------------------------------------------------
# annotation

def _block_index(blocks: list[FunctionBlock]):
    starts = [b.start for b in blocks]

    def block_of(address: int) -> FunctionBlock | None:
        k = bisect.bisect_right(starts, address) - 1
        if k < 0:
            return None
        b = blocks[k]
        return b if b.contains(address) else None

    return block_of


def annotate_functions(blocks: list[FunctionBlock], instrs: dict,
                       target_sets: dict | None = None) -> list[FunctionBlock]:
    """Populate xrefs, call depth (SCC condensation) and deny-list flags."""
    by_start = {b.start: b for b in blocks}
    block_of = _block_index(blocks)

    def add_edge(site: int, target: int):
        src = block_of(site)
        dst = by_start.get(target)
        if src is None or dst is None or src.start == dst.start:
            return
        src.xrefs_out.add(dst.start)
        dst.xrefs_in.add(site)

    for ins in instrs.values():
        if ins.base_mnemonic in ("b", "bl") and ins.target is not None:
            if ins.target in by_start:
                add_edge(ins.address, ins.target)
    if target_sets:
        for ts in target_sets.values():
            for t in ts.targets:
                if t in by_start:
                    add_edge(ts.origin, t)

    _compute_call_depth(blocks)
    for b in blocks:
        b.deny_listed = _is_perpetual(b, instrs)
    return blocks


def _compute_call_depth(blocks: list[FunctionBlock]) -> None:
    """Depth = longest call chain; call cycles collapse to one condensation
    node whose members share the cycle's depth."""
    graph = {b.start: sorted(b.xrefs_out) for b in blocks}
    index = {}
    low = {}
    on_stack = set()
    stack = []
    comp_of = {}
    comps = []
    counter = [0]

    def strongconnect(v):
        # iterative Tarjan
        work = [(v, 0)]
        while work:
            node, pi = work[-1]
            if pi == 0:
                index[node] = low[node] = counter[0]
                counter[0] += 1
                stack.append(node)
                on_stack.add(node)
            advanced = False
            for k in range(pi, len(graph[node])):
                w = graph[node][k]
                if w not in index:
                    work[-1] = (node, k + 1)
                    work.append((w, 0))
                    advanced = True
                    break
                if w in on_stack:
                    low[node] = min(low[node], index[w])
            if advanced:
                continue
            if low[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp_of[w] = len(comps)
                    comp.append(w)
                    if w == node:
                        break
                comps.append(comp)
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])

    for v in graph:
        if v not in index:
            strongconnect(v)

    comp_succ = [set() for _ in comps]
    for v, outs in graph.items():
        for w in outs:
            if comp_of[v] != comp_of[w]:
                comp_succ[comp_of[v]].add(comp_of[w])

    depth_memo = {}

    def comp_depth(c):
        if c in depth_memo:
            return depth_memo[c]
        base = 1 if len(comps[c]) > 1 else 0
        if comp_succ[c]:
            value = base + 1 + max(comp_depth(s) for s in comp_succ[c])
        else:
            value = base
        depth_memo[c] = value
        return value

    for b in blocks:
        b.call_depth = comp_depth(comp_of[b.start])


def _is_perpetual(block: FunctionBlock, instrs: dict) -> bool:
    """True when every path from the block start unconditionally loops."""
    visited = set()
    addr = block.start
    for _ in range(1024):
        if addr in visited:
            return True
        visited.add(addr)
        ins = instrs.get(addr)
        if ins is None:
            return False
        m = ins.mnemonic
        if ins.condition is not None or \
                m in ("cbz", "cbnz", "bx", "bkpt", "udf",
                      "unknown", "unsupported", "tbb", "tbh"):
            return False
        if m == "pop" and PC in ins.operands[0].regs:
            return False
        if m == "ldmia.w" and PC in ins.operands[1].regs:
            return False
        if ins.base_mnemonic == "b":
            if ins.target is None:
                return False
            addr = ins.target
            continue
        # bl/blx/svc return to the next instruction; keep walking
        addr += ins.width
    return False


def blocks_to_json(blocks: list[FunctionBlock]) -> str:
    """Debug dump for twin-diff tooling."""
    out = [{"start": f"0x{b.start:x}",
            "end": f"0x{b.end:x}",
            "call_depth": b.call_depth,
            "deny_listed": b.deny_listed,
            "flagged": b.flagged,
            "xrefs_in": [f"0x{a:x}" for a in sorted(b.xrefs_in)],
            "xrefs_out": [f"0x{a:x}" for a in sorted(b.xrefs_out)]}
           for b in blocks]
    return json.dumps(out, indent=2)
