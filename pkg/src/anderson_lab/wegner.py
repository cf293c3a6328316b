"""Wegner-lemma machinery: annulus events, rank-one eigenvalue pushes,
Feynman-Hellmann paths, eigenfunction mass counts, the cone descent and
Monte Carlo resolvent probabilities.

Eigenvalue indices are 1-based and refer to decreasing order, with the
conventions E_0 = +inf and E_{dim+1} = -inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import rng
from .ensembles import PotentialField, sample_potential
from .errors import CrossingError, DomainError, LemmaViolation
from .lattice import ConeSpec, _Region, layer_offsets
from .operators import HamiltonianInstance, Resolvent, assemble, distance_to_spectrum, lambda_min


# ---------------------------------------------------------------------------
# scales and annulus events


@dataclass(frozen=True)
class WegnerScales:
    """Six dyadic scales with L_j^{1-2 delta} >= L_{j+1} >= L_j^{1-eps/2}."""

    L: tuple[int, ...]
    epsilon: float
    delta: float
    C_shift: float = 0.0

    def __post_init__(self):
        L = tuple(int(x) for x in self.L)
        object.__setattr__(self, "L", L)
        if len(L) != 6:
            raise DomainError("six scales L_0 > ... > L_5 are required")
        if not self.epsilon > self.delta > 0:
            raise DomainError("need epsilon > delta > 0")
        for x in L:
            if x < 1 or x & (x - 1):
                raise DomainError(f"scale {x} is not dyadic")
        for j in range(5):
            hi = L[j] ** (1 - 2 * self.delta)
            lo = L[j] ** (1 - self.epsilon / 2)
            if not hi + 1e-9 >= L[j + 1] >= lo - 1e-9:
                raise DomainError(f"scale condition fails between L_{j} and L_{j + 1}")
        if not L[2] - L[4] + self.C_shift > 0:
            raise DomainError("s_i must increase: need L_2 - L_4 + C > 0")

    def s(self, i: int) -> float:
        """s_i = exp(-L_1 + (L_2 - L_4 + C) i)."""
        return math.exp(-self.L[1] + (self.L[2] - self.L[4] + self.C_shift) * i)


@dataclass(frozen=True)
class AnnulusEvent:
    k1: int
    k2: int
    ell: int
    s_ell: float
    s_ell_plus_1: float

    def __post_init__(self):
        if not 1 <= self.k1 <= self.k2:
            raise DomainError("need 1 <= k1 <= k2")
        if not 0 < self.s_ell < self.s_ell_plus_1:
            raise DomainError("need 0 < s_ell < s_ell+1")

    @classmethod
    def from_scales(cls, scales: WegnerScales, k1: int, k2: int, ell: int) -> AnnulusEvent:
        return cls(k1, k2, ell, scales.s(ell), scales.s(ell + 1))


def _eig_at(eigs: np.ndarray, k: int) -> float:
    if k <= 0:
        return math.inf
    if k > len(eigs):
        return -math.inf
    return float(eigs[k - 1])


def _check_decreasing(eigs) -> np.ndarray:
    eigs = np.asarray(eigs, dtype=float)
    if np.any(np.diff(eigs) > 0):
        raise DomainError("eigenvalues must be sorted in decreasing order")
    return eigs


def annulus_event_holds(eigs, Ebar: float, event: AnnulusEvent) -> bool:
    """|E_k1 - Ebar|, |E_k2 - Ebar| <= s_ell and |E_{k1-1} - Ebar|, |E_{k2+1} - Ebar| >= s_{ell+1}."""
    eigs = _check_decreasing(eigs)
    if event.k2 > len(eigs):
        raise DomainError(f"k2={event.k2} exceeds dimension {len(eigs)}")
    inner = event.s_ell
    outer = event.s_ell_plus_1
    return (
        abs(_eig_at(eigs, event.k1) - Ebar) <= inner
        and abs(_eig_at(eigs, event.k2) - Ebar) <= inner
        and abs(_eig_at(eigs, event.k1 - 1) - Ebar) >= outer
        and abs(_eig_at(eigs, event.k2 + 1) - Ebar) >= outer
    )


def annulus_union(eigs, Ebar: float, s_ell: float, s_ell_plus_1: float) -> bool:
    """Union of the events over 1 < k1 <= k2 < dim, by enumeration."""
    eigs = _check_decreasing(eigs)
    n = len(eigs)
    for k1 in range(2, n):
        for k2 in range(k1, n):
            if annulus_event_holds(eigs, Ebar, AnnulusEvent(k1, k2, 0, s_ell, s_ell_plus_1)):
                return True
    return False


def annulus_predicate(eigs, Ebar: float, s_ell: float, s_ell_plus_1: float) -> bool:
    """Open annulus s_ell < |E - Ebar| < s_{ell+1} empty; inner band and both outer parts occupied."""
    d = np.asarray(eigs, dtype=float) - Ebar
    a = np.abs(d)
    return bool(
        not np.any((a > s_ell) & (a < s_ell_plus_1))
        and np.any(a <= s_ell)
        and np.any(d >= s_ell_plus_1)
        and np.any(d <= -s_ell_plus_1)
    )


# ---------------------------------------------------------------------------
# rank-one pushes


@dataclass(frozen=True)
class PushReport:
    hypotheses_ok: bool
    failed_hypothesis: int | None
    i: int | None
    j: int | None
    count_before: int
    count_after: int

    @property
    def pushed(self) -> bool:
        return self.count_after > self.count_before


def push_hypotheses(A: np.ndarray, r, k: int, c: float = 1 / 16):
    """Check the five hypotheses; returns (failed number or None, i, j), indices 1-based."""
    r1, r2, r3, r4, r5 = (float(x) for x in r)
    if not 0 < r1 < r2 < r3 < r4 < r5 < 1:
        return 1, None, None
    if not r1 <= c * min(r3 * r5, r2 * r3 / r4):
        return 2, None, None
    lam, V = linalg.eigh(A)
    lam, V = lam[::-1], V[:, ::-1]
    below = np.flatnonzero(lam < r1)
    if len(below) == 0:
        return 3, None, None
    i = int(below[0]) + 1
    if _eig_at(lam, i - 1) <= r2 or lam[i - 1] <= 0:
        return 3, i, None
    overlap = V[k, :] ** 2
    cand = [j for j in range(i, len(lam) + 1) if lam[j - 1] > 0 and overlap[j - 1] >= r3]
    if not cand:
        return 4, i, None
    window = (lam > r2) & (lam < r5)
    if overlap[window].sum() > r4:
        return 5, i, cand[0]
    return None, i, cand[0]


def eigen_push_check(A, r, k: int, eta: float = 1.0, c: float = 1 / 16, strict: bool = False) -> PushReport:
    """Does adding eta e_k e_k^T raise the number of eigenvalues >= r_1?

    With ``strict`` a failure of the conclusion under verified hypotheses
    raises LemmaViolation.
    """
    if eta < 1:
        raise DomainError("eta must be at least 1")
    A = np.asarray(A, dtype=float)
    if not np.allclose(A, A.T, atol=1e-12):
        raise DomainError("A must be symmetric")
    failed, i, j = push_hypotheses(A, r, k, c)
    r1 = float(r[0])
    B = A.copy()
    B[k, k] += eta
    before = int(np.sum(linalg.eigvalsh(A) >= r1))
    after = int(np.sum(linalg.eigvalsh(B) >= r1))
    rep = PushReport(failed is None, failed, i, j, before, after)
    if strict and rep.hypotheses_ok and not rep.pushed:
        raise LemmaViolation(f"push failed with all hypotheses verified (i={i}, j={j})")
    return rep


def random_push_instance(gen: np.random.Generator, n: int, c: float = 1 / 16):
    """A random (A, r, k) built to satisfy the push hypotheses (checked by the caller)."""
    r5 = gen.uniform(0.3, 0.95)
    r4 = gen.uniform(0.3, 0.9) * r5
    r3 = gen.uniform(0.2, 0.9) * r4
    r2 = gen.uniform(0.05, 0.9) * r3
    r1 = gen.uniform(0.05, 1.0) * c * min(r3 * r5, r2 * r3 / r4)
    i = int(gen.integers(1, n))  # eigenvalues 1..i-1 above r2, i..n in (0, r1)
    n_low = n - i + 1
    low = np.sort(gen.uniform(0.01, 1.0, n_low) * r1)[::-1]
    high_count = i - 1
    # some of the high eigenvalues in (r2, r5), the rest above r5
    in_win = int(gen.integers(0, high_count + 1)) if high_count else 0
    high = np.concatenate([gen.uniform(r2, r5, in_win) * (1 - 1e-9) + 1e-12, gen.uniform(r5, 3.0, high_count - in_win)])
    lam = np.concatenate([np.sort(high)[::-1], low])
    # row k of the eigenvector matrix: w_j^2 >= r3 for one low j, window mass <= r4
    j = int(gen.integers(0, n_low)) + i - 1
    w2 = np.zeros(n)
    w2[j] = gen.uniform(r3, 1.0)
    others = np.array([x for x in range(n) if x != j])
    w2[others] = gen.dirichlet(np.ones(n - 1)) * (1.0 - w2[j])
    win = (lam > r2) & (lam < r5)
    if w2[win].sum() > 0.99 * r4:
        excess = w2[win].sum() - 0.99 * r4
        w2[win] *= 0.99 * r4 / w2[win].sum()
        free = ~win
        free[j] = False
        if free.any():
            w2[free] += excess / free.sum()
        else:
            w2[j] += excess
    w = np.sqrt(np.maximum(w2, 0)) * gen.choice([-1.0, 1.0], n)
    w /= np.linalg.norm(w)
    # orthogonal Q with Q[k, :] = w: reflect e_k onto w, then rotate the other rows
    k = int(gen.integers(0, n))
    e = np.zeros(n)
    e[k] = 1.0
    v = e - w
    H = np.eye(n) - 2 * np.outer(v, v) / (v @ v) if v @ v > 1e-14 else np.eye(n)
    O, _ = np.linalg.qr(gen.standard_normal((n - 1, n - 1)))
    P = np.eye(n)
    others = [x for x in range(n) if x != k]
    P[np.ix_(others, others)] = O
    Q = P @ H
    A = (Q * lam) @ Q.T
    A = 0.5 * (A + A.T)
    return A, (r1, r2, r3, r4, r5), k


# ---------------------------------------------------------------------------
# Feynman-Hellmann paths


@dataclass(frozen=True)
class PathReport:
    s: np.ndarray
    energies: np.ndarray
    fh: np.ndarray
    fd: np.ndarray
    rel_err: np.ndarray
    min_gap: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0


def _kth(A: np.ndarray, k: int, vectors: bool = False):
    """k-th largest eigenvalue (1-based) of a dense symmetric matrix."""
    n = A.shape[0]
    idx = n - k
    lo, hi = max(idx - 1, 0), min(idx + 1, n - 1)
    if vectors:
        w, U = linalg.eigh(A, subset_by_index=[lo, hi])
        return w, U, idx - lo
    w = linalg.eigh(A, eigvals_only=True, subset_by_index=[idx, idx])
    return float(w[0])


def fh_path(H_start: HamiltonianInstance, H_end: HamiltonianInstance, k: int, steps: int = 10, gap_tol: float = 1e-9) -> PathReport:
    """E_k along H(s) = H_start + s (H_end - H_start), with FH vs finite differences.

    The finite difference is a Richardson-extrapolated centred difference;
    its step is scaled to the local gap so the path stays analytic inside it.
    """
    if H_start.region != H_end.region:
        raise DomainError("paths need two operators on the same cube")
    diff = (H_end.matrix - H_start.matrix).tocoo()
    if np.any((diff.row != diff.col) & (np.abs(diff.data) > 0)):
        raise DomainError("operators differ off the diagonal")
    if not 1 <= k <= H_start.dim:
        raise DomainError(f"k={k} outside 1..{H_start.dim}")
    D = H_end.potential - H_start.potential
    normD = float(np.max(np.abs(D), initial=0.0))
    A0 = H_start.dense()
    s_grid = np.linspace(0.0, 1.0, steps + 1)
    energies, fh, fd, rel = [], [], [], []
    min_gap = math.inf
    for s in s_grid:
        A = A0 + s * np.diag(D)
        w, U, pos = _kth(A, k, vectors=True)
        E = w[pos]
        u = U[:, pos]
        gaps = [abs(E - x) for t, x in enumerate(w) if t != pos]
        gap = min(gaps) if gaps else math.inf
        min_gap = min(min_gap, gap)
        if gap < gap_tol:
            raise CrossingError(f"eigenvalue {k} is not simple at s={s:.6g} (gap {gap:.2e})", s=float(s))
        energies.append(E)
        deriv = float(np.sum(D * u * u))
        fh.append(deriv)
        if 0.0 < s < 1.0:
            h = min(1e-3, 0.1 * gap / normD) if normD > 0 else 1e-3
            def Ek(x):
                return _kth(A0 + x * np.diag(D), k)
            d1 = (Ek(s + h) - Ek(s - h)) / (2 * h)
            d2 = (Ek(s + h / 2) - Ek(s - h / 2)) / h
            est = (4 * d2 - d1) / 3
            fd.append(est)
            rel.append(abs(est - deriv) / max(abs(deriv), 1e-6 * max(normD, 1e-300)))
    return PathReport(s_grid, np.array(energies), np.array(fh), np.array(fd), np.array(rel), float(min_gap))


# ---------------------------------------------------------------------------
# eigenfunction mass


def mass_sets(u, xi, excluded, i: int, threshold: float) -> tuple[frozenset, frozenset]:
    """S1 = {n off F' : xi_n = 1 - i}, S2 = {n off F' : xi_n = i and |u(n)| >= threshold}.

    ``xi`` is the set (of site indices) where xi_n = 1.
    """
    if i not in (0, 1):
        raise DomainError("i must be 0 or 1")
    u = np.asarray(u)
    xi = set(int(x) for x in xi)
    excluded = set(int(x) for x in excluded)
    S1, S2 = set(), set()
    for n in range(len(u)):
        if n in excluded:
            continue
        val = 1 if n in xi else 0
        if val == 1 - i:
            S1.add(n)
        elif abs(u[n]) >= threshold:
            S2.add(n)
    return frozenset(S1), frozenset(S2)


def uc_mass_count(u, cube: _Region | None = None, threshold_factor: float = 0.0, excluded=()) -> int:
    """Number of sites off ``excluded`` with |u(n)| >= threshold_factor ||u||."""
    u = np.asarray(u, dtype=float)
    if cube is not None and cube.size != len(u):
        raise DomainError("vector length does not match the cube")
    mask = np.abs(u) >= threshold_factor * np.linalg.norm(u)
    if len(excluded):
        mask[np.fromiter((int(x) for x in excluded), dtype=int)] = False
    return int(mask.sum())


# ---------------------------------------------------------------------------
# cone descent


@dataclass(frozen=True)
class ConeResult:
    site: tuple[int, int, int]
    value: float
    required: float


def cone_descent(u, K: float, apex, tau: int, iota_sign: int, k: int, cube: _Region) -> ConeResult:
    """A site in layers k or k-1 of the cone with |u| >= (K + 11)^{-k} |u(apex)|.

    Searches both layers exhaustively and raises LemmaViolation if none
    qualifies (the cone lemma says one always does).
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    spec = ConeSpec(apex, tau, iota_sign)
    u = np.asarray(u)
    sites = []
    for layer in (k, k - 1):
        offs = layer_offsets(tau, iota_sign * layer) + np.array(spec.apex)
        inside = np.all((offs >= np.array(cube.lo)) & (offs <= np.array(cube.hi)), axis=1)
        if layer == k and not inside.any():
            raise DomainError(f"layer {k} of the cone misses the cube")
        sites.append(offs[inside])
    cand = np.concatenate(sites)
    shape = np.array(cube.shape)
    rel = cand - np.array(cube.lo)
    idx = (rel[:, 0] * shape[1] + rel[:, 1]) * shape[2] + rel[:, 2]
    vals = np.abs(u[idx])
    required = (K + 11.0) ** (-k) * abs(u[cube.index_of(spec.apex)])
    best = int(np.argmax(vals))
    if vals[best] < required:
        raise LemmaViolation(f"cone descent failed at apex {spec.apex}, tau={tau}, sign={iota_sign}, k={k}")
    return ConeResult(tuple(int(c) for c in cand[best]), float(vals[best]), float(required))


def cone_descent_all(u, K: float, cube: _Region, k_max: int) -> tuple[int, int]:
    """Run the descent from every apex, axis, sign and k <= k_max; returns (attempts, failures).

    Vectorised over apexes: for each (tau, sign, k) the best value in the
    two layers is a maximum of shifted copies of |u| (outside the cube
    counts as absent).
    """
    shape = cube.shape
    a = np.abs(np.asarray(u, dtype=float)).reshape(shape)
    pad = k_max + 1
    big = np.full(tuple(n + 2 * pad for n in shape), -1.0)
    big[pad:-pad, pad:-pad, pad:-pad] = a
    attempts = failures = 0
    for tau in (1, 2, 3):
        for sign in (-1, 1):
            for k in range(1, k_max + 1):
                have_k = np.zeros(shape, dtype=bool)
                best = np.full(shape, -1.0)
                for layer in (k, k - 1):
                    for off in layer_offsets(tau, sign * layer):
                        sx, sy, sz = pad + off
                        view = big[sx : sx + shape[0], sy : sy + shape[1], sz : sz + shape[2]]
                        best = np.maximum(best, view)
                        if layer == k:
                            have_k |= view >= 0
                required = (K + 11.0) ** (-k) * a
                attempts += int(have_k.sum())
                failures += int(np.sum(have_k & (best < required)))
    return attempts, failures


# ---------------------------------------------------------------------------
# Monte Carlo


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class MCEstimate:
    p_hat: float
    ci: tuple[float, float]
    hits: int
    trials: int
    lambda_min: tuple[float, float, float] = field(default=(math.nan, math.nan, math.nan))


def trial_seed(seed: int, trial: int) -> int:
    return rng.derive_seed(seed, 0x5EED, trial)


def wegner_mc(field: PotentialField, cube: _Region, Ebar: float, L1_threshold: float, trials: int, seed: int) -> MCEstimate:
    """Estimate P[||(H - Ebar)^{-1}|| > exp(L1_threshold)] with a Wilson 95% interval.

    Each trial draws the potential from its own substream (seed, trial), so
    the estimate does not depend on the order trials run in.
    """
    if trials < 1:
        raise DomainError("trials must be at least 1")
    cut = math.exp(-L1_threshold)
    hits = 0
    lmins = []
    for t in range(trials):
        V = sample_potential(field, cube, trial_seed(seed, t))
        H = assemble(cube, V)
        lm = lambda_min(H)
        lmins.append(lm)
        if Ebar < lm:
            dist = lm - Ebar
        else:
            dist = distance_to_spectrum(H, Ebar)
        hits += dist < cut
    lo, hi = wilson_interval(hits, trials)
    lm = np.array(lmins)
    return MCEstimate(hits / trials, (lo, hi), hits, trials, (float(lm.min()), float(np.median(lm)), float(lm.max())))


@dataclass(frozen=True)
class ProbeReport:
    good: bool
    per_probe: tuple[bool, ...]
    worst_margin: float


def resolvent_bound_holds(H: HamiltonianInstance, E: float, log_prefactor: float, m: float) -> tuple[bool, float]:
    """All |G(x, y)| <= exp(log_prefactor - m |x - y|)? Returns (ok, worst log-margin)."""
    G = Resolvent(H, E).matrix()
    s = H.region.sites_array().astype(float)
    dist = np.sqrt(((s[:, None, :] - s[None, :, :]) ** 2).sum(axis=-1))
    with np.errstate(divide="ignore"):
        margin = (log_prefactor - m * dist) - np.log(np.abs(G))
    worst = float(margin.min())
    return worst >= 0, worst


def good_robustness_probe(
    field: PotentialField,
    cube: _Region,
    Ebar: float,
    observed,
    probes: int,
    seed: int,
    m: float,
    epsilon: float,
    log_prefactor: float | None = None,
) -> ProbeReport:
    """Test the goodness bound on the sample and on ``probes`` re-draws off ``observed``.

    The bound is exp(L^{1-eps} - m |x - y|) (Euclidean |x - y|, L the cube
    radius) unless ``log_prefactor`` replaces L^{1-eps}.
    """
    if probes < 0:
        raise DomainError("probes must be non-negative")
    L = getattr(cube, "radius", max(cube.shape) // 2)
    lp = L ** (1 - epsilon) if log_prefactor is None else log_prefactor
    V = sample_potential(field, cube, seed)
    mask = np.zeros(cube.size, dtype=bool)
    for s in observed:
        mask[cube.index_of(s)] = True
    results, worst = [], math.inf
    for j in range(probes + 1):
        if j == 0:
            Vj = V
        else:
            Vj = np.where(mask, V, sample_potential(field, cube, seed, stream=j))
        ok, w = resolvent_bound_holds(assemble(cube, Vj), Ebar, lp, m)
        results.append(ok)
        worst = min(worst, w)
    return ProbeReport(all(results), tuple(results), worst)
