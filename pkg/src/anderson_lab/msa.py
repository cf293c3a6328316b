"""Scale and decay scheduling for the multiscale analysis, the final
parameters of the resolvent theorem, and a desk-scale check of the
combination lemma (subcube bounds imply a bound on the whole cube).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError, SchedulingError
from .lattice import Cube, _Region, distance_to_complement, is_dyadic
from .operators import HamiltonianInstance, Resolvent


def _log2_exact(L: int) -> int:
    if not is_dyadic(L):
        raise DomainError(f"{L} is not a power of two")
    return int(L).bit_length() - 1


def _inv_pow(L: int, a: float) -> float:
    """L^{-a} for dyadic L, through the exponent so huge scales do not overflow."""
    return 2.0 ** (-a * _log2_exact(L))


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def next_exponent(l: int, epsilon) -> int:
    """Least integer l' with floor((1 - 6 eps) l') = l."""
    eps = _frac(epsilon)
    if not 0 < eps < Fraction(1, 12):
        raise DomainError("epsilon must lie in (0, 1/12)")
    q = 1 - 6 * eps
    lo = l / q
    cand = math.ceil(lo)
    if not cand < (l + 1) / q or math.floor(q * cand) != l:
        raise SchedulingError(f"no admissible exponent after l={l}; start from a larger L0")
    return cand


def next_scale(L_k: int, epsilon) -> int:
    return 2 ** next_exponent(_log2_exact(L_k), epsilon)


def build_scales(L0: int, epsilon, count: int) -> list[int]:
    L = [int(L0)]
    _log2_exact(L0)
    while len(L) < count:
        L.append(next_scale(L[-1], epsilon))
    return L


def floor_identity_holds(L_k: int, L_next: int, epsilon) -> bool:
    """floor(log2 L_{k+1}^{1 - 6 eps}) == log2 L_k, in exact arithmetic."""
    q = 1 - 6 * _frac(epsilon)
    return math.floor(q * _log2_exact(L_next)) == _log2_exact(L_k)


@dataclass(frozen=True)
class DecaySchedule:
    m: list[float]
    m_star: float
    floors: list[float]
    first_floor_failure: int | None

    @property
    def floor_ok(self) -> bool:
        return self.first_floor_failure is None


def decay_schedule(m0: float, delta_prime: float, delta: float, L_list, check: bool = True) -> DecaySchedule:
    """m_k = m_{k-1} - L_{k-1}^{-delta'}, floors L_k^{-delta}, m_star = m0 - sum_k L_k^{-delta'}.

    With ``check`` a floor violation (1 >= m_k >= L_k^{-delta} failing)
    raises SchedulingError naming the first bad k; otherwise it is reported.
    """
    if not 0 < m0 <= 1:
        raise DomainError("m0 must lie in (0, 1]")
    L = [int(x) for x in L_list]
    if not L:
        raise DomainError("need at least one scale")
    m = [float(m0)]
    for k in range(1, len(L)):
        m.append(m[-1] - _inv_pow(L[k - 1], delta_prime))
    floors = [_inv_pow(x, delta) for x in L]
    bad = next((k for k in range(len(L)) if not floors[k] <= m[k] <= 1), None)
    m_star = m0 - math.fsum(_inv_pow(x, delta_prime) for x in L)
    if check and bad is not None:
        raise SchedulingError(f"decay floor fails at k={bad}: m_k={m[bad]:.4g} < {floors[bad]:.4g}", index=bad)
    return DecaySchedule(m, m_star, floors, bad)


@dataclass(frozen=True)
class FinalParams:
    kappa_star: float
    eps_star: float
    m_star: float
    note: str = "O(eps^2) corrections in kappa_star dropped"


def final_params(kappa: float, epsilon: float, m0: float, delta_prime: float, L_list, slack: float = 0.0) -> FinalParams:
    """kappa* = (kappa - 49 eps - slack)/(1 - 10 eps), eps* = 0.75 eps, m* = m0 - sum L_k^{-delta'}."""
    if not kappa - 49 * epsilon > 0:
        raise DomainError("epsilon too large: need kappa - 49 eps > 0")
    m_star = m0 - math.fsum(_inv_pow(int(x), delta_prime) for x in L_list)
    return FinalParams((kappa - 49 * epsilon - slack) / (1 - 10 * epsilon), 0.75 * epsilon, m_star)


@dataclass(frozen=True)
class ScaleSchedule:
    epsilon: float
    delta: float
    delta_prime: float
    L: list[int]
    m: list[float]
    m_star: float
    kappa_star: float | None
    eps_star: float
    floor_identity_ok: bool
    decay_floor_ok: bool
    epsilon_prime: float | None = None
    metadata: dict = field(default_factory=dict)

    def verify(self) -> bool:
        ok = all(floor_identity_holds(a, b, self.epsilon) for a, b in zip(self.L[:-1], self.L[1:]))
        ok &= all(abs(self.m[k] - (self.m[k - 1] - _inv_pow(self.L[k - 1], self.delta_prime))) < 1e-15 for k in range(1, len(self.L)))
        return bool(ok)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "delta_prime": self.delta_prime,
            "L": self.L,
            "log2_L": [_log2_exact(x) for x in self.L],
            "m": self.m,
            "m_star": self.m_star,
            "kappa_star": self.kappa_star,
            "eps_star": self.eps_star,
            "floor_identity_ok": self.floor_identity_ok,
            "decay_floor_ok": self.decay_floor_ok,
            "m_star_positive": self.m_star > 0,
            **self.metadata,
        }


def plan_schedule(
    L0: int,
    epsilon: float,
    delta: float,
    delta_prime: float,
    count: int = 10,
    m0: float = 1.0,
    kappa: float | None = None,
    epsilon_prime: float | None = None,
) -> ScaleSchedule:
    """Scales, decay rates and final parameters; failures are reported, not raised."""
    if delta <= 0 or delta_prime <= 0:
        raise DomainError("delta and delta' must be positive")
    chain = [epsilon, delta_prime, delta] if epsilon_prime is None else [epsilon_prime, epsilon, delta_prime, delta]
    order_ok = all(a > b for a, b in zip(chain[:-1], chain[1:]))
    L = build_scales(L0, epsilon, count)
    dec = decay_schedule(m0, delta_prime, delta, L, check=False)
    ks = None
    if kappa is not None:
        ks = final_params(kappa, epsilon, m0, delta_prime, L).kappa_star
    fid = all(floor_identity_holds(a, b, epsilon) for a, b in zip(L[:-1], L[1:]))
    return ScaleSchedule(
        epsilon, delta, delta_prime, L, dec.m, dec.m_star, ks, 0.75 * epsilon, fid, dec.floor_ok, epsilon_prime,
        {"parameter_order_ok": order_ok},
    )


def assembled_bound_is_weaker(L: float, L_k: float, dist: float, eps: float, m_k: float, eps_star: float, m_star: float) -> bool:
    """exp(L^{1-eps*} - m*|x-y|) >= exp(L_k^{1-eps} - m_k|x-y|)?"""
    return L ** (1 - eps_star) - m_star * dist >= L_k ** (1 - eps) - m_k * dist - 1e-12


# ---------------------------------------------------------------------------
# combination check


@dataclass(frozen=True)
class SubcubeReport:
    cube: _Region
    bound_holds: bool
    worst_log_margin: float


def pair_distances(sites_a: np.ndarray, sites_b: np.ndarray) -> np.ndarray:
    """Euclidean distances between rows, exact on integer sites."""
    d2 = np.zeros((len(sites_a), len(sites_b)), dtype=np.int64)
    for i in range(sites_a.shape[1]):
        diff = np.subtract.outer(sites_a[:, i].astype(np.int64), sites_b[:, i].astype(np.int64))
        d2 += diff * diff
    return np.sqrt(d2, dtype=float)


def _scan_bound(H: HamiltonianInstance, E: float, log_prefactor: float, m: float, batch: int = 512):
    """Stream all resolvent columns; yields (cols, block, log-bound block)."""
    res = Resolvent(H, E)
    sites = H.region.sites_array()
    for s0 in range(0, H.dim, batch):
        cols = np.arange(s0, min(s0 + batch, H.dim))
        block = res.columns(cols)
        bound = log_prefactor - m * pair_distances(sites, sites[cols])
        yield cols, block, bound


def subcube_report(H: HamiltonianInstance, E: float, log_prefactor: float, m: float) -> SubcubeReport:
    """Do all entries of (H - E)^{-1} obey exp(log_prefactor - m |y - z|)?"""
    worst = math.inf
    for _, block, bound in _scan_bound(H, E, log_prefactor, m):
        with np.errstate(divide="ignore"):
            margin = bound - np.log(np.abs(block))
        worst = min(worst, float(margin.min()))
    return SubcubeReport(H.region, worst >= 0, worst)


def check_scale_chain(ell, nu_prime: float) -> None:
    ell = [int(x) for x in ell]
    if len(ell) != 7:
        raise DomainError("seven scales l_0 >= ... >= l_6 are required")
    for x in ell:
        if not is_dyadic(x):
            raise DomainError(f"scale {x} is not dyadic")
    for a, b in zip(ell[:-1], ell[1:]):
        if not a ** (1 - nu_prime) >= b - 1e-9:
            raise DomainError(f"scale chain fails: {a}^(1-{nu_prime}) < {b}")


@dataclass(frozen=True)
class CombineReport:
    hypotheses_met: bool
    uncovered_sites: int
    m_tilde: float
    checked_entries: int
    violations: int
    examples: list
    worst_log_margin: float
    asymptotic_hypotheses_hold: bool


def combine_resolvents(
    target: HamiltonianInstance,
    subcube_reports: list[SubcubeReport],
    ell,
    m: float,
    E: float,
    nu: float,
    nu_prime: float,
    margin: float | None = None,
    delta: float | None = None,
) -> CombineReport:
    """Check that good subcubes imply |G_target(x, y)| <= exp(l_1 - m~ |x - y|), m~ = m - l_5^{-nu}.

    Hypothesis gate: every target site must lie in a subcube contained in
    the target whose bound holds and whose distance to the rest of the
    target is at least ``margin`` (default l_5 / 8). If the gate fails no
    implication is asserted and no entries are checked.
    """
    check_scale_chain(ell, nu_prime)
    ell = [int(x) for x in ell]
    if not 0 < m <= 1:
        raise DomainError("decay rate must lie in (0, 1]")
    asym = nu_prime > nu > 0 and (delta is None or m >= 2 * ell[5] ** (-delta))
    margin = ell[5] / 8 if margin is None else margin
    region = target.region
    good = [r.cube for r in subcube_reports if r.bound_holds and _contained(r.cube, region)]
    uncovered = 0
    for site in region.sites_array():
        if not any(q.contains(site) and distance_to_complement(site, region, q) >= margin for q in good):
            uncovered += 1
    m_tilde = m - ell[5] ** (-nu)
    if uncovered:
        return CombineReport(False, uncovered, m_tilde, 0, 0, [], math.nan, asym)
    sites = region.sites_array()
    violations, examples, checked, worst = 0, [], 0, math.inf
    for cols, block, bound in _scan_bound(target, E, ell[1], m_tilde):
        with np.errstate(divide="ignore"):
            mg = bound - np.log(np.abs(block))
        worst = min(worst, float(mg.min()))
        bad = np.argwhere(mg < 0)
        violations += len(bad)
        for a, j in bad[: max(0, 20 - len(examples))]:
            examples.append((tuple(sites[a]), tuple(sites[cols[j]]), float(block[a, j])))
        checked += block.size
    return CombineReport(True, 0, m_tilde, checked, violations, examples, worst, asym)


def _contained(inner: _Region, outer: _Region) -> bool:
    return all(a >= b for a, b in zip(inner.lo, outer.lo)) and all(a <= b for a, b in zip(inner.hi, outer.hi))


def contained_dyadic_subcubes(target: Cube, scale: int) -> list[Cube]:
    """Dyadic scale-cubes (centres on the scale/2 grid, spaced by ``scale``) lying inside ``target``."""
    from .lattice import dyadic_cover

    return [q for q in dyadic_cover(target, scale) if _contained(q, target)]
