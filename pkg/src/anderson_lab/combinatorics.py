"""kappa-Sperner families, exact probabilities under product Bernoulli laws,
and the almost-orthonormal counting check.

Subsets of the ground set {0, ..., N-1} are int bitmasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DomainError

MAX_GROUND = 24


def popcount(x: int) -> int:
    return bin(x).count("1")


def mask_of(elements) -> int:
    m = 0
    for e in elements:
        m |= 1 << int(e)
    return m


def elements_of(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


@dataclass(frozen=True)
class SpernerFamily:
    N: int
    members: tuple[int, ...]
    witness: dict | None = None

    def __post_init__(self):
        if not 0 <= self.N <= MAX_GROUND:
            raise DomainError(f"ground size must be in 0..{MAX_GROUND}")
        members = tuple(int(m) for m in self.members)
        if len(set(members)) != len(members):
            raise DomainError("family members must be distinct")
        full = (1 << self.N) - 1
        if any(m & ~full for m in members):
            raise DomainError("member outside the ground set")
        object.__setattr__(self, "members", members)

    @property
    def full(self) -> int:
        return (1 << self.N) - 1

    @classmethod
    def from_sets(cls, N: int, sets, witness=None) -> SpernerFamily:
        members = tuple(mask_of(s) for s in sets)
        w = None if witness is None else {mask_of(k): mask_of(v) for k, v in witness}
        return cls(N, members, w)


def slice_family(N: int, k: int) -> SpernerFamily:
    return SpernerFamily(N, tuple(mask_of(c) for c in combinations(range(N), k)))


def _superset_union(family: SpernerFamily) -> list[int]:
    """For each member A, the union of all members A' with A a proper subset of A'."""
    ms = family.members
    n, N = len(ms), family.N
    if n * n <= N << N:
        arr = np.array(ms, dtype=np.int64)
        out = []
        for A in ms:
            sup = arr[((arr & A) == A) & (arr != A)]
            out.append(int(np.bitwise_or.reduce(sup)) if len(sup) else 0)
        return out
    # superset-OR transform: f[S] = OR of members containing S
    f = np.zeros(1 << N, dtype=np.int64)
    f[np.array(ms, dtype=np.int64)] = ms
    idx = np.arange(1 << N)
    for b in range(N):
        lo = idx[(idx >> b & 1) == 0]
        f[lo] |= f[lo | (1 << b)]
    # f[A] includes A itself; its bits lie in A, so masking them out is harmless
    return [int(f[A]) & ~A for A in ms]


def maximal_witnesses(family: SpernerFamily) -> list[int]:
    """B*(A) = complement of A and of every strict superset of A in the family.

    A witness B(A) must avoid A and every member properly containing A, and
    B*(A) is exactly the set of elements that do, so a family is
    kappa-Sperner iff |B*(A)| >= kappa |A^C| for every member.
    """
    return [family.full & ~(A | U) for A, U in zip(family.members, _superset_union(family))]


def check_witness(family: SpernerFamily, witness: dict, kappa: float) -> bool:
    """Does ``witness`` (member -> subset) satisfy the three witness conditions?"""
    for A in family.members:
        B = witness.get(A)
        if B is None or B & A:
            return False
        if popcount(B) < kappa * (family.N - popcount(A)) - 1e-12:
            return False
        if any(other & B for other in family.members if other != A and other & A == A):
            return False
    return True


def verify_kappa_sperner(family: SpernerFamily, kappa: float) -> bool:
    """True iff some witness system exists for ``kappa``."""
    if not 0 < kappa <= 1:
        raise DomainError("kappa must lie in (0, 1]")
    if family.witness is not None and check_witness(family, family.witness, kappa):
        return True
    for A, B in zip(family.members, maximal_witnesses(family)):
        if popcount(B) < kappa * (family.N - popcount(A)) - 1e-12:
            return False
    return True


def sperner_kappa(family: SpernerFamily) -> float:
    """The largest kappa for which the family is kappa-Sperner (0 if none)."""
    best = 1.0
    for A, B in zip(family.members, maximal_witnesses(family)):
        comp = family.N - popcount(A)
        if comp:
            best = min(best, popcount(B) / comp)
    return best


def is_antichain(family: SpernerFamily) -> bool:
    ms = family.members
    return not any(a != b and a & b == a for a in ms for b in ms)


@dataclass(frozen=True)
class BernoulliEnsemble:
    p: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.p)
        if any(not 0 < x < 1 for x in p):
            raise DomainError("probabilities must lie in (0, 1)")
        object.__setattr__(self, "p", p)

    @property
    def N(self) -> int:
        return len(self.p)

    @property
    def beta(self) -> float:
        return min(min(x, 1 - x) for x in self.p)


def family_probability(family: SpernerFamily, ensemble: BernoulliEnsemble) -> float:
    """P[xi in family] = sum over A of prod_{n in A} p_n prod_{n not in A} (1 - p_n)."""
    if ensemble.N != family.N:
        raise DomainError("ensemble and family have different ground sizes")
    if not family.members:
        return 0.0
    ms = np.array(family.members, dtype=np.int64)
    bits = (ms[:, None] >> np.arange(family.N)) & 1
    p = np.array(ensemble.p)
    logw = bits @ np.log(p) + (1 - bits) @ np.log1p(-p)
    return math.fsum(np.exp(logw).tolist())


def sperner_bound(beta: float, kappa: float, N: int, C: float) -> float:
    """C beta^{-5/2} kappa^{-1} N^{-1/2}."""
    if not 0 < beta <= 0.5 or not 0 < kappa <= 1 or N < 1:
        raise DomainError("need beta in (0, 1/2], kappa in (0, 1], N >= 1")
    return C * beta ** (-2.5) / kappa / math.sqrt(N)


@dataclass(frozen=True)
class OrthonormalCountReport:
    satisfies_gram: bool
    m: int
    n: int
    bound: float
    applicable: bool
    bound_holds: bool
    worst_pair: tuple[int, int] | None
    worst_deviation: float


def almost_orthonormal_count_check(vectors, alpha: float) -> OrthonormalCountReport:
    """Test |<v_i, v_j> - delta_ij| <= alpha n^{-1/2} and compare m with ((alpha^2 - alpha)/2) n.

    ``vectors`` holds one vector per row. ``bound_holds`` is only
    meaningful when ``applicable`` (Gram condition met and alpha n >= 1/2).
    """
    if alpha < 2:
        raise DomainError("the count bound is only asserted for alpha >= 2")
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    m, n = V.shape
    dev = np.abs(V @ V.T - np.eye(m))
    i, j = np.unravel_index(int(np.argmax(dev)), dev.shape)
    worst = float(dev[i, j])
    ok = worst <= alpha / math.sqrt(n) + 1e-12
    bound = (alpha * alpha - alpha) / 2 * n
    applicable = ok and alpha * n >= 0.5
    return OrthonormalCountReport(
        satisfies_gram=ok,
        m=m,
        n=n,
        bound=bound,
        applicable=applicable,
        bound_holds=(m <= bound) if applicable else True,
        worst_pair=None if ok else (int(min(i, j)), int(max(i, j))),
        worst_deviation=worst,
    )


def flip(xi, n: int):
    """Toggle element ``n``: works on bitmasks and on sets of sites."""
    if isinstance(xi, (int, np.integer)):
        if n < 0:
            raise DomainError("element must be non-negative")
        return int(xi) ^ (1 << int(n))
    s = set(xi)
    s ^= {n}
    return frozenset(s)
