"""Exception types shared across the package."""


class ThinlabError(Exception):
    """Base class for all thinlab errors."""


# ---- geometry / group input ----

class ZeroLowerLeftEntry(ThinlabError):
    def __init__(self, index):
        super().__init__(f"generator {index}: lower-left entry is 0, no isometric disk")
        self.index = index


class NonHyperbolicGenerator(ThinlabError):
    def __init__(self, index, trace):
        super().__init__(f"generator {index}: |trace| = {abs(trace)} <= 2, not hyperbolic")
        self.index = index
        self.trace = trace


class OverlappingDisks(ThinlabError):
    def __init__(self, i, j):
        super().__init__(f"isometric disk intervals {i} and {j} overlap or touch")
        self.i = i
        self.j = j


class PoleHit(ThinlabError):
    def __init__(self, x):
        super().__init__(f"Moebius map evaluated at pole, x = {x}")
        self.x = x


# ---- symbolic dynamics ----

class NotMixing(ThinlabError):
    pass


class InadmissibleWord(ThinlabError):
    pass


# Spec name for the birkhoff-op failure mode; same condition.
InadmissibleConcatenation = InadmissibleWord


# ---- thermodynamic core ----

class NoConvergence(ThinlabError):
    pass


class RootNotBracketed(ThinlabError):
    pass


# ---- congruence layer ----

class NotSquareFree(ThinlabError):
    def __init__(self, q):
        super().__init__(f"modulus {q} is not square-free")
        self.q = q


class TooLarge(ThinlabError):
    pass


class BadPrime(ThinlabError):
    def __init__(self, q, p):
        super().__init__(f"modulus {q} shares the excluded prime {p}")
        self.q = q
        self.p = p


class ModulusMismatch(ThinlabError):
    pass


class NotInNewSpace(ThinlabError):
    pass


class DepthExhausted(ThinlabError):
    pass


# ---- expander walk / experiments ----

class EnumerationTooLarge(ThinlabError):
    pass


class NotGenerating(ThinlabError):
    pass


class FibersTooLarge(ThinlabError):
    pass


class BudgetExceeded(ThinlabError):
    pass


# ---- cli ----

class ConfigParse(ThinlabError):
    pass
