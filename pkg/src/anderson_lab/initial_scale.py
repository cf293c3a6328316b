"""Initial-scale estimates: the Lifshitz-type principal eigenvalue bound and
the Neumann-series decay of the resolvent that follows from it.

Distances in the R-net and in the test function are Euclidean; the
Neumann bound uses the graph (l1) distance, which is what the powers of
the hopping operator see.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError, RTooSmall
from .green import asymptotic_constant, green_table, lattice_green
from .lattice import DIM, Cube, _Region
from .operators import HamiltonianInstance, Resolvent, lambda_min

EPS_FACTOR = 0.04


def epsilon_d(d: int = DIM) -> float:
    """eps_d = 0.04 C_d, with C_d the asymptotic constant of the Green's function used."""
    return EPS_FACTOR * asymptotic_constant(d)


def green_zero(d: int = DIM) -> float:
    return lattice_green((0,) * d, d)


def lifshitz_constant(kappa: float, d: int = DIM, eps: float | None = None) -> float:
    """c_{kappa,d} = 2 d eps_d / (1/kappa + G(0))."""
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    eps = epsilon_d(d) if eps is None else eps
    return 2 * d * eps / (1.0 / kappa + green_zero(d))


def principal_lower_bound(kappa: float, d: int, R: float, eps: float | None = None) -> float:
    """c_{kappa,d} R^{-d}."""
    if d < 3:
        raise DomainError("d >= 3 required")
    return lifshitz_constant(kappa, d, eps) * float(R) ** (-d)


def _as_site_array(sites) -> np.ndarray:
    arr = np.array(sorted(map(tuple, sites)) if not isinstance(sites, np.ndarray) else sites, dtype=int)
    return arr.reshape(-1, DIM)


@dataclass(frozen=True)
class NetCheck:
    ok: bool
    worst_site: tuple[int, int, int] | None
    worst_distance: float


def check_rnet(cube: _Region, big_sites, R: float) -> NetCheck:
    """Is every cube site within Euclidean distance R of ``big_sites``?"""
    if R < 1:
        raise DomainError("R must be at least 1")
    sites = cube.sites_array()
    big = _as_site_array(big_sites)
    if len(big) == 0:
        return NetCheck(False, tuple(int(c) for c in sites[0]), float("inf"))
    dist, _ = cKDTree(big).query(sites)
    i = int(np.argmax(dist))
    worst = float(dist[i])
    ok = worst <= R + 1e-12
    return NetCheck(ok, tuple(int(c) for c in sites[i]), worst)


@dataclass(frozen=True)
class RNetCertificate:
    cube: _Region
    big_sites: frozenset
    R: int
    kappa: float

    @classmethod
    def build(cls, cube: _Region, big_sites, R: int, kappa: float) -> RNetCertificate:
        if kappa <= 0:
            raise DomainError("kappa must be positive")
        chk = check_rnet(cube, big_sites, R)
        if not chk.ok:
            raise DomainError(f"not an R-net: {chk.worst_site} is {chk.worst_distance:.3f} away (R={R})")
        return cls(cube, frozenset(tuple(int(c) for c in s) for s in big_sites), int(R), float(kappa))

    @classmethod
    def from_potential(cls, H: HamiltonianInstance, R: int, kappa: float) -> RNetCertificate:
        sites = H.region.sites_array()[H.potential >= kappa]
        return cls.build(H.region, sites, R, kappa)


def _ball_offsets(radius: float, strict: bool = True) -> np.ndarray:
    k = int(np.ceil(radius))
    ax = np.arange(-k, k + 1)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, DIM)
    r2 = (g * g).sum(axis=1)
    keep = r2 < radius**2 if strict else r2 <= radius**2
    return g[keep]


@dataclass(frozen=True)
class TestFunction:
    """u_0 on the cube plus the quantities the proof needs to hold."""

    u0: np.ndarray
    eps: float
    cap: float
    inner_max: float
    annulus_min: float
    u_min_ball: float
    witness_distance_max: float


def auxiliary_u(offsets: np.ndarray, R: float, kappa: float, d: int = DIM, eps: float | None = None) -> np.ndarray:
    """u(a) = 1/kappa + G(0) - G(a) - eps R^{-d} |a|^2 for rows a of ``offsets``."""
    eps = epsilon_d(d) if eps is None else eps
    r2 = (offsets.astype(float) ** 2).sum(axis=1)
    return 1.0 / kappa + green_zero(d) - green_table(offsets, d, tol=1e-9) - eps * R ** (-d) * r2


def lifshitz_test_function(cube: _Region, big_sites, R: int, kappa: float, d: int = DIM, eps: float | None = None) -> TestFunction:
    """u_0(a) = min{u(a - b) : b big, |b - a| < 3R}, with the proof's inequalities checked.

    Raises RTooSmall when u fails to be positive on |a| < 3R or when the
    separation min_{2R <= |a| < 3R} u > max_{|a| <= R} u fails.
    """
    if d != DIM:
        raise DomainError("the test function is built on Z^3 cubes")
    eps = epsilon_d(d) if eps is None else eps
    cert = RNetCertificate.build(cube, big_sites, R, kappa)
    offs = _ball_offsets(3 * R)
    u = auxiliary_u(offs, R, kappa, d, eps)
    r = np.sqrt((offs * offs).sum(axis=1))
    cap = 1.0 / kappa + green_zero(d)
    inner_max = float(u[r <= R].max())
    annulus_min = float(u[r >= 2 * R].min())
    if u.min() <= 0 or u.max() > cap + 1e-15:
        raise RTooSmall(f"u leaves (0, 1/kappa + G(0)] on |a| < 3R for R={R}")
    if not annulus_min > inner_max:
        raise RTooSmall(f"separation fails at R={R}: {annulus_min:.6g} <= {inner_max:.6g}")

    shape = cube.shape
    pad = 3 * R
    big = np.zeros(tuple(n + 2 * pad for n in shape), dtype=bool)
    lo = np.array(cube.lo)
    for b in cert.big_sites:
        idx = np.array(b) - lo + pad
        if np.all(idx >= 0) and np.all(idx < np.array(big.shape)):
            big[tuple(idx)] = True
    u0 = np.full(shape, np.inf)
    wdist = np.zeros(shape)
    order = np.argsort(u, kind="stable")
    unfilled = np.ones(shape, dtype=bool)
    nx, ny, nz = shape
    for j in order:
        o = offs[j]
        # b = a - o must be big
        sx, sy, sz = pad - o
        hit = big[sx : sx + nx, sy : sy + ny, sz : sz + nz] & unfilled
        if hit.any():
            u0[hit] = u[j]
            wdist[hit] = r[j]
            unfilled &= ~hit
            if not unfilled.any():
                break
    if unfilled.any():
        raise DomainError("u_0 undefined: some site has no big site within 3R")
    return TestFunction(
        u0=u0.ravel(),
        eps=eps,
        cap=cap,
        inner_max=inner_max,
        annulus_min=annulus_min,
        u_min_ball=float(u.min()),
        witness_distance_max=float(wdist.max()),
    )


def rayleigh_data(H: HamiltonianInstance, tf: TestFunction) -> tuple[float, float]:
    """(min H u_0, min H u_0 / u_0) over the cube."""
    Hu = H.matrix @ tf.u0
    return float(Hu.min()), float((Hu / tf.u0).min())


@dataclass(frozen=True)
class LifshitzReport:
    lambda_min: float
    bound: float
    passed: bool


def verify_lifshitz(H: HamiltonianInstance, cert: RNetCertificate, d: int = DIM) -> LifshitzReport:
    """Compare the least eigenvalue with c_{kappa,d} R^{-d}."""
    for b in cert.big_sites:
        if H.potential[H.index(b)] < cert.kappa:
            raise DomainError(f"V < kappa at big site {b}")
    lam = lambda_min(H)
    bound = principal_lower_bound(cert.kappa, d, cert.R)
    return LifshitzReport(lam, bound, lam >= bound)


@dataclass(frozen=True)
class NeumannReport:
    prefactor: float
    rate: float
    norm: float
    certified_columns: int
    solved_columns: int
    checked_entries: int
    violations: list


def neumann_constants(kappa: float, R: float, M: float, d: int = DIM) -> tuple[float, float]:
    """(P, r) with |(H - lam)^{-1}(a, b)| <= P exp(-r |a - b|_1)."""
    C = lifshitz_constant(kappa, d)
    return 2.0 * R**d / C, C * R ** (-d) / (8 * d + 2 * M)


def l1_farthest(region: _Region) -> np.ndarray:
    """For each site b, max over a in the region of |a - b|_1."""
    s = region.sites_array()
    far = np.zeros(len(s), dtype=int)
    for i in range(DIM):
        far += np.maximum(s[:, i] - region.lo[i], region.hi[i] - s[:, i])
    return far


def neumann_decay_check(
    H: HamiltonianInstance, lam: float, R: float, kappa: float, d: int = DIM, M: float | None = None
) -> NeumannReport:
    """Check every entry of (H - lam)^{-1} against the Neumann-series bound.

    T = I - (H - lam)/(4d + M) has spectrum in [0, 1 - C R^{-d}/(8d + 2M)],
    T^i(a, b) = 0 when |a - b|_1 > i, and summing the tail gives
    |(H - lam)^{-1}(a, b)| <= (2 R^d / C) exp(-(C/(8d+2M)) R^{-d} |a - b|_1).
    A column is certified wholesale when the operator norm 1/(lambda_min - lam)
    already sits below the bound at the column's farthest site; other
    columns are solved exactly.
    """
    M = float(H.potential.max()) if M is None else float(M)
    if M < H.potential.max():
        raise DomainError("M must bound the potential")
    c_bound = principal_lower_bound(kappa, d, R)
    if not 0 <= lam <= c_bound / 2 + 1e-15:
        raise DomainError(f"lam must lie in [0, {c_bound / 2:.3g}]")
    P, r = neumann_constants(kappa, R, M, d)
    lmin = lambda_min(H)
    norm = 1.0 / (lmin - lam)
    far = l1_farthest(H.region)
    cert = norm <= P * np.exp(-r * far)
    todo = np.flatnonzero(~cert)
    violations = []
    checked = int(cert.sum()) * H.dim
    if len(todo):
        res = Resolvent(H, lam)
        sites = H.region.sites_array()
        for s0 in range(0, len(todo), 256):
            cols = todo[s0 : s0 + 256]
            block = res.columns(cols)
            for j, b in enumerate(cols):
                dist = np.abs(sites - sites[b]).sum(axis=1)
                bound = P * np.exp(-r * dist)
                bad = np.flatnonzero(np.abs(block[:, j]) > bound * (1 + 1e-12))
                for a in bad:
                    violations.append((tuple(sites[a]), tuple(sites[b]), float(block[a, j]), float(bound[a])))
            checked += len(cols) * H.dim
    return NeumannReport(P, r, norm, int(cert.sum()), int(len(todo)), checked, violations)


def spaced_net(cube: Cube, R: int, offset=(0, 0, 0)) -> np.ndarray:
    """Sites of a cubic sublattice whose spacing keeps every site within R (Euclidean)."""
    s = max(1, int(np.floor(2 * R / np.sqrt(3))))
    axes = []
    for i in range(DIM):
        start = cube.lo[i] + (offset[i] % s)
        ax = list(range(start, cube.hi[i] + 1, s))
        if ax[-1] + s // 2 < cube.hi[i] or ax[0] > cube.lo[i] + s // 2:
            ax = sorted(set(ax) | {cube.hi[i]} | {cube.lo[i]})
        axes.append(ax)
    g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return g.reshape(-1, DIM)
