#!/usr/bin/env python3
"""Compare recovered function starts against an unstripped ELF twin.

The twin's symbol table is ground truth.  Reports TPR and the effective
false-positive rate: misidentified starts actually entered by a bl
(fragments only reachable as data or via direct addressing cannot affect
tracing and are discounted).

Usage:
  python scripts/twin_diff.py <stripped.bin> <twin.elf> [--code-base HEX]
"""

import argparse
import struct
import sys


def read_elf_functions(elf: bytes):
    """FUNC symbols from an ELF32, thumb bit cleared."""
    assert elf[:4] == b"\x7fELF", "not an ELF"
    e_shoff, = struct.unpack_from("<I", elf, 32)
    e_shentsize, e_shnum = struct.unpack_from("<HH", elf, 46)
    symtab = strtab = None
    for i in range(e_shnum):
        off = e_shoff + i * e_shentsize
        _, sh_type, _, _, sh_offset, sh_size, sh_link, _, _, sh_entsize = \
            struct.unpack_from("<IIIIIIIIII", elf, off)
        if sh_type == 2:
            symtab = (sh_offset, sh_size, sh_entsize)
            stroff = e_shoff + sh_link * e_shentsize
            s_offset, s_size = struct.unpack_from("<II", elf, stroff + 16)
            strtab = elf[s_offset:s_offset + s_size]
    functions = {}
    if symtab:
        sh_offset, sh_size, sh_entsize = symtab
        for off in range(sh_offset, sh_offset + sh_size, sh_entsize):
            st_name, st_value, st_size, st_info = \
                struct.unpack_from("<IIIB", elf, off)
            if st_info & 0xF == 2:
                end = strtab.index(b"\x00", st_name)
                functions[strtab[st_name:end].decode()] = st_value & ~1
    return functions


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("stripped")
    ap.add_argument("twin_elf")
    ap.add_argument("--code-base", default=None)
    args = ap.parse_args()

    from cmsift.image import (FirmwareImage, read_vector_table,
                              identify_code_base)
    from cmsift.isa import decode_stream
    from cmsift.datascan import identify_inline_data
    from cmsift.funcs import (seed_function_starts, estimate_boundaries,
                              annotate_functions, protected_starts)

    img = FirmwareImage(data=open(args.stripped, "rb").read())
    read_vector_table(img)
    if args.code_base:
        img.rebase(int(args.code_base, 16))
    else:
        identify_code_base(img, decode_stream(img).values())
    scan = identify_inline_data(img)
    instrs = scan.instructions
    seeds = seed_function_starts(img, instrs, scan.target_sets)
    blocks = estimate_boundaries(seeds, instrs, img, scan.target_sets,
                                 protected_starts(img, instrs))
    annotate_functions(blocks, instrs, scan.target_sets)

    twin = read_elf_functions(open(args.twin_elf, "rb").read())
    truth = set(twin.values())
    est = {b.start for b in blocks}
    bl_targets = {i.target for i in instrs.values() if i.mnemonic == "bl"}

    missed = sorted(truth - est)
    fps = sorted(est - truth)
    efps = sorted(set(fps) & bl_targets)
    tpr = len(truth & est) / len(truth) if truth else 0.0
    efpr = len(efps) / len(truth) if truth else 0.0

    rev = {v: k for k, v in twin.items()}
    print(f"code base       0x{img.code_base:x}")
    print(f"twin functions  {len(truth)}")
    print(f"recovered       {len(est)}")
    print(f"TPR             {tpr:.2%}")
    print(f"raw FPs         {len(fps)}")
    print(f"effective FPs   {len(efps)}  (EFPR {efpr:.2%})")
    for a in missed:
        print(f"  missed  0x{a:x}  {rev.get(a, '?')}")
    for a in efps:
        print(f"  eff FP  0x{a:x}")
    sys.exit(0 if tpr >= 0.95 and efpr <= 0.015 else 1)


if __name__ == "__main__":
    main()
