"""Exception types shared across the toolkit."""


class CmsiftError(Exception):
    pass


class ImageError(CmsiftError):
    pass


class ImageTooSmall(ImageError):
    pass


class NoUsableHandler(ImageError):
    pass


class NoSelfBranch(ImageError):
    pass


class NegativeBase(ImageError):
    pass


class AnnotationConflict(CmsiftError):
    def __init__(self, address, existing, requested):
        self.address = address
        self.existing = existing
        self.requested = requested
        super().__init__(
            f"annotation conflict at 0x{address:x}: "
            f"{existing} already pinned, {requested} requested"
        )


class UnsupportedInstruction(CmsiftError):
    def __init__(self, instruction):
        self.instruction = instruction
        super().__init__(f"unsupported instruction at 0x{instruction.address:x}: "
                         f"{instruction.mnemonic}")


class BudgetExceeded(CmsiftError):
    pass


class NoMatch(CmsiftError):
    pass


class AmbiguousMatch(CmsiftError):
    def __init__(self, candidates):
        self.candidates = list(candidates)
        super().__init__(
            "pattern matched multiple blocks at equal call depth: "
            + ", ".join(hex(c) for c in self.candidates)
        )


class ArgdefError(CmsiftError):
    pass


class PackError(CmsiftError):
    pass
