"""Call-path enumeration and forward tracing to Calls of Interest.

Backward inter-procedural walking over the xref graph yields every
acyclic call chain from a root block to the COI; each chain is then
executed forward under a fixed set of branch-following rules:

  (a) branches on the chain are always taken;
  (b) unconditional branches inside the current block are taken;
  (c) conditional branches follow the flags, forking both ways when the
      flags are indeterminate;
  (d) deny-listed callees are never entered;
  (e) other off-chain callees are entered only when their call depth is
      below the configured maximum; a skipped bl leaves r0 = 0 (the
      success convention), bypassing error-handler branches.

State is captured exactly when control reaches the COI instruction.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .executor import (
    Executor,
    IndeterminateCondition,
    MachineState,
)
from .errors import UnsupportedInstruction
from .funcs import FunctionBlock, _block_index
from .coi import CoiSite, RETURN_SENTINEL
from .isa import LR, Reg

log = logging.getLogger(__name__)

LOOP_GUARD = 256          # per-address execution cap within one fork


@dataclass(frozen=True)
class PathEntry:
    block_start: int
    call_site: int


@dataclass
class TraceConfig:
    max_call_depth: int = 1
    time_limit: float = 90 * 60.0     # seconds, per trace
    max_forks: int = 64

    def __post_init__(self):
        if self.max_call_depth < 0:
            raise ValueError("max_call_depth must be >= 0")


@dataclass
class CoiCapture:
    site: CoiSite
    path_id: int
    decisions: str
    regs: dict                  # r0..r3 -> value | None
    sp: int | None
    stack: tuple                # 64 bytes above sp at capture
    memory: dict                # overlay at capture
    flags: list = field(default_factory=list)

    def dedup_key(self):
        return (tuple(sorted(self.regs.items())), self.stack,
                tuple(sorted((k, v) for k, v in self.memory.items()
                             if v is not None)))


@dataclass
class TraceOutcome:
    captures: list
    truncated: bool = False
    timed_out: bool = False
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# path enumeration

def enumerate_paths(site: CoiSite, blocks: list[FunctionBlock],
                    max_paths: int = 64) -> tuple[list, bool]:
    """All acyclic xref chains from root blocks down to the COI site.

    Returns (paths, truncated).  An unreachable site yields one degenerate
    path starting at its containing block.
    """
    block_of = _block_index(blocks)
    by_start = {b.start: b for b in blocks}
    container = block_of(site.site_address)
    if container is None:
        return [], False

    paths: list[list[PathEntry]] = []
    truncated = False

    def ascend(block: FunctionBlock, below: list, seen: frozenset):
        nonlocal truncated
        if len(paths) >= max_paths:
            truncated = True
            return
        # deny-listed callers stay eligible: rule (d) bars branching INTO
        # such blocks mid-trace, not starting or passing through them as
        # recorded callers (the loop guard bounds their perpetual part)
        callers = sorted(block.xrefs_in)
        live = [c for c in callers if block_of(c) is not None
                and block_of(c).start not in seen]
        if not live:
            paths.append(list(reversed(below)))
            return
        for site_addr in live:
            caller = block_of(site_addr)
            ascend(caller,
                   below + [PathEntry(caller.start, site_addr)],
                   seen | {caller.start})

    ascend(container,
           [PathEntry(container.start, site.site_address)],
           frozenset({container.start}))
    paths.sort(key=lambda p: tuple((e.block_start, e.call_site) for e in p))
    return paths[:max_paths], truncated


# ---------------------------------------------------------------------------
# forward tracing

@dataclass
class _Fork:
    state: MachineState
    pos: int                 # index of the next path entry to consume
    decisions: str
    counts: dict
    flags: list


class Tracer:
    def __init__(self, img, instrs: dict, blocks: list[FunctionBlock],
                 config: TraceConfig | None = None,
                 shared_overlay: dict | None = None,
                 modeled: dict | None = None):
        self.img = img
        self.instrs = instrs
        self.blocks = blocks
        self.block_of = _block_index(blocks)
        self.config = config or TraceConfig()
        self.executor = Executor(img, shared_overlay=shared_overlay)
        self.modeled = modeled or {}      # block start -> model name

    # -- public -----------------------------------------------------------

    def trace_site(self, site: CoiSite) -> TraceOutcome:
        container = self.block_of(site.site_address)
        if container is not None and container.deny_listed:
            return TraceOutcome(captures=[], warnings=[
                f"COI at 0x{site.site_address:x} sits in a deny-listed "
                "block; not traced"])
        paths, truncated = enumerate_paths(site, self.blocks,
                                           self.config.max_forks)
        outcome = TraceOutcome(captures=[], truncated=truncated)
        deadline = time.monotonic() + self.config.time_limit
        for path_id, path in enumerate(paths):
            self._trace_path(site, path, path_id, outcome, deadline)
            if outcome.timed_out:
                break
        seen = set()
        unique = []
        for cap in outcome.captures:
            key = cap.dedup_key()
            if key not in seen:
                seen.add(key)
                unique.append(cap)
        outcome.captures = unique
        return outcome

    def forward_trace(self, site: CoiSite, path: list,
                      path_id: int = 0) -> TraceOutcome:
        outcome = TraceOutcome(captures=[])
        deadline = time.monotonic() + self.config.time_limit
        self._trace_path(site, path, path_id, outcome, deadline)
        return outcome

    # -- internals ----------------------------------------------------------

    def _fresh_fork(self, path) -> _Fork:
        state = self.executor.fresh_state(pc=path[0].block_start)
        state.set_reg(LR, RETURN_SENTINEL | 1)
        return _Fork(state=state, pos=0, decisions="", counts={}, flags=[])

    def _capture(self, site, fork: _Fork, path_id: int) -> CoiCapture:
        ex = self.executor
        state = fork.state
        sp = state.regs[13]
        window = tuple(ex.read_byte(state, sp + i) if sp is not None else None
                       for i in range(64))
        return CoiCapture(site=site, path_id=path_id,
                          decisions=fork.decisions,
                          regs={n: state.regs[n] for n in range(4)},
                          sp=sp, stack=window, memory=dict(state.memory),
                          flags=list(fork.flags))

    def _trace_path(self, site, path, path_id, outcome, deadline):
        if not path:
            return
        forks = [self._fresh_fork(path)]
        made_forks = 1
        while forks:
            if time.monotonic() > deadline:
                outcome.timed_out = True
                outcome.warnings.append("trace time limit hit")
                return
            fork = forks.pop()
            result = self._run_fork(site, path, fork, outcome,
                                    path_id, deadline)
            if result is None:
                continue
            # indeterminate conditional: fork both arms
            ins = result
            if made_forks >= self.config.max_forks:
                outcome.truncated = True
                arms = (True,)
            else:
                made_forks += 1
                arms = (False, True)
            for assume in arms:
                child = _Fork(state=fork.state.clone(), pos=fork.pos,
                              decisions=fork.decisions + ("T" if assume else "F"),
                              counts=dict(fork.counts), flags=list(fork.flags))
                try:
                    self._apply_branch(child, ins, assume)
                except (IndeterminateCondition, UnsupportedInstruction):
                    continue
                forks.append(child)

    def _apply_branch(self, fork, ins, assume: bool):
        if assume and ins.base_mnemonic in ("b", "cbz", "cbnz"):
            target = ins.target
            blk = self.block_of(target) if target is not None else None
            inside = blk is not None and blk.contains(ins.address)
            if not inside and blk is not None and not self._may_enter(blk):
                fork.flags.append(f"skipped-cond-branch:0x{ins.address:x}")
                fork.state.pc = ins.address + ins.width
                return
        self.executor.step(fork.state, ins, assume=assume)

    def _may_enter(self, block: FunctionBlock) -> bool:
        if block.deny_listed:
            return False
        return block.call_depth < self.config.max_call_depth

    def _run_fork(self, site, path, fork, outcome, path_id, deadline):
        """Run one fork until capture, death, or an indeterminate branch.

        Returns the instruction needing a fork decision, or None when the
        fork terminated."""
        ex = self.executor
        state = fork.state
        instrs = self.instrs
        while True:
            pc = state.pc
            if pc is None or pc == RETURN_SENTINEL:
                return None
            if time.monotonic() > deadline:
                outcome.timed_out = True
                return None
            count = fork.counts.get(pc, 0) + 1
            fork.counts[pc] = count
            if count > LOOP_GUARD:
                fork.flags.append(f"loop-guard:0x{pc:x}")
                outcome.warnings.append(
                    f"path {path_id}: loop guard cut at 0x{pc:x}")
                return None
            ins = instrs.get(pc)
            if ins is None:
                fork.flags.append(f"ran-into-data:0x{pc:x}")
                return None

            # on-path transition (rule a), including the COI itself
            if fork.pos < len(path) and pc == path[fork.pos].call_site:
                if fork.pos == len(path) - 1:
                    outcome.captures.append(
                        self._capture(site, fork, path_id))
                    return None
                next_block = path[fork.pos + 1].block_start
                fork.pos += 1
                if ins.mnemonic in ("bl", "blx"):
                    state.set_reg(LR, (pc + ins.width) | 1)
                state.pc = next_block
                continue

            m = ins.base_mnemonic
            if m == "bl" or (m == "blx" and isinstance(ins.operands[0], Reg)):
                target = ins.target
                if target is None:
                    value = state.regs[ins.operands[0].n]
                    target = (value & ~1) if value is not None else None
                if target in self.modeled:
                    ex.run_modeled(state, self.modeled[target])
                    state.pc = pc + ins.width
                    continue
                blk = self.block_of(target) if target is not None else None
                if target is None or blk is None or not self._may_enter(blk):
                    # rules (d)/(e): skip with the success convention
                    state.set_reg(0, 0)
                    state.pc = pc + ins.width
                    continue
                ex.step(state, ins)
                continue
            if m == "b" and ins.condition is None:
                target = ins.target
                blk = self.block_of(target) if target is not None else None
                inside = blk is not None and blk.contains(pc)
                if inside or (blk is not None and self._may_enter(blk)):
                    ex.step(state, ins)
                else:
                    fork.flags.append(f"skipped-branch:0x{pc:x}")
                    state.pc = pc + ins.width
                continue
            if ins.mnemonic in ("unknown", "unsupported", "bkpt", "udf"):
                fork.flags.append(f"unsupported:0x{pc:x}")
                outcome.warnings.append(
                    f"path {path_id}: unsupported instruction at 0x{pc:x}")
                return None
            try:
                ex.step(state, ins)
            except IndeterminateCondition:
                return ins
            except UnsupportedInstruction:
                fork.flags.append(f"unsupported:0x{pc:x}")
                return None
