"""Hot numeric kernels: numba loop implementations and numpy fallbacks.

Family codes used throughout: 0 = normal, 1 = Cauchy, 2 = Gumbel.
Both submodules expose the same functions with identical semantics; the
active one is chosen by :mod:`matchprior.backend`.
"""

FAMILY_CODES = {"normal": 0, "cauchy": 1, "gumbel": 2}
