"""Site distributions, non-stationary potential fields and Bernoulli decompositions.

A ``SiteDistribution`` is a finite mixture of point masses and uniform
pieces, so its CDF is piecewise linear and its quantile function is a
finite list of linear segments. Everything downstream (sampling, the gap
of a Bernoulli decomposition, total-variation checks) is computed exactly
from those segments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import rng
from .errors import CertificationFailure, DomainError, GapFailure
from .lattice import Site, _Region

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SiteDistribution:
    """Law on [0, M] made of atoms ``(value, prob)`` and uniform pieces ``(a, b, weight)``."""

    atoms: tuple[tuple[float, float], ...] = ()
    pieces: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self):
        atoms = tuple((float(v), float(p)) for v, p in self.atoms if p > 0)
        pieces = tuple((float(a), float(b), float(w)) for a, b, w in self.pieces if w > 0)
        for a, b, _ in pieces:
            if not a < b:
                raise DomainError(f"uniform piece needs a < b, got [{a}, {b}]")
        total = sum(p for _, p in atoms) + sum(w for *_, w in pieces)
        if abs(total - 1.0) > _SUM_TOL:
            raise DomainError(f"weights sum to {total!r}, not 1")
        if any(p < 0 for _, p in self.atoms) or any(w < 0 for *_, w in self.pieces):
            raise DomainError("negative weight")
        merged: dict[float, float] = {}
        for v, p in atoms:
            merged[v] = merged.get(v, 0.0) + p
        object.__setattr__(self, "atoms", tuple(sorted(merged.items())))
        object.__setattr__(self, "pieces", tuple(sorted(pieces)))
        object.__setattr__(self, "_segments", _quantile_segments(self.atoms, self.pieces))

    # construction helpers
    @classmethod
    def point(cls, c: float) -> SiteDistribution:
        return cls(atoms=((c, 1.0),))

    @classmethod
    def bernoulli(cls, q: float, high: float = 1.0) -> SiteDistribution:
        """P[V = high] = q, P[V = 0] = 1 - q."""
        return cls(atoms=((0.0, 1.0 - q), (high, q)))

    @classmethod
    def uniform(cls, a: float = 0.0, b: float = 1.0) -> SiteDistribution:
        return cls(pieces=((a, b, 1.0),))

    @classmethod
    def mixture(cls, parts: list[tuple[float, SiteDistribution]]) -> SiteDistribution:
        atoms, pieces = [], []
        for w, d in parts:
            atoms += [(v, w * p) for v, p in d.atoms]
            pieces += [(a, b, w * q) for a, b, q in d.pieces]
        return cls(tuple(atoms), tuple(pieces))

    @property
    def is_atomic(self) -> bool:
        return not self.pieces

    @property
    def support(self) -> tuple[float, float]:
        xs = [v for v, _ in self.atoms] + [a for a, *_ in self.pieces] + [b for _, b, _ in self.pieces]
        return min(xs), max(xs)

    @property
    def segments(self) -> np.ndarray:
        """Quantile segments as rows (u0, u1, x0, x1): q maps (u0, u1] onto (x0, x1] linearly."""
        return self._segments

    def breakpoints(self) -> np.ndarray:
        xs = {v for v, _ in self.atoms}
        for a, b, _ in self.pieces:
            xs.update((a, b))
        return np.array(sorted(xs))

    def mean(self) -> float:
        return sum(v * p for v, p in self.atoms) + sum(w * (a + b) / 2 for a, b, w in self.pieces)

    def second_moment(self) -> float:
        return sum(v * v * p for v, p in self.atoms) + sum(
            w * (a * a + a * b + b * b) / 3 for a, b, w in self.pieces
        )

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for v, p in self.atoms:
            out += p * (x >= v)
        for a, b, w in self.pieces:
            out += w * np.clip((x - a) / (b - a), 0.0, 1.0)
        return out

    def cdf_left(self, x) -> np.ndarray:
        """P[V < x]."""
        x = np.asarray(x, dtype=float)
        out = self.cdf(x)
        for v, p in self.atoms:
            out -= p * (x == v)
        return out

    def quantile(self, u) -> np.ndarray:
        """Left-continuous q(u) = inf{x : F(x) >= u} for u in (0, 1]."""
        return _eval_segments(self._segments, np.asarray(u, dtype=float), side="left")

    def quantile_right(self, u) -> np.ndarray:
        """Right limit q(u+) for u in [0, 1)."""
        return _eval_segments(self._segments, np.asarray(u, dtype=float), side="right")

    def to_dict(self) -> dict:
        return {"atoms": [list(a) for a in self.atoms], "pieces": [list(p) for p in self.pieces]}

    @classmethod
    def from_dict(cls, spec: Mapping) -> SiteDistribution:
        kind = spec.get("kind")
        if kind == "bernoulli":
            return cls.bernoulli(float(spec["q"]), float(spec.get("high", 1.0)))
        if kind == "uniform":
            return cls.uniform(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
        if kind == "point":
            return cls.point(float(spec["value"]))
        if kind is not None:
            raise DomainError(f"unknown distribution kind {kind!r}")
        return cls(
            atoms=tuple(tuple(a) for a in spec.get("atoms", ())),
            pieces=tuple(tuple(p) for p in spec.get("pieces", ())),
        )


def _quantile_segments(atoms, pieces) -> np.ndarray:
    xs = sorted({v for v, _ in atoms} | {a for a, *_ in pieces} | {b for _, b, _ in pieces})
    atom_mass = dict(atoms)
    rows = []
    u = 0.0
    for i, x in enumerate(xs):
        m = atom_mass.get(x, 0.0)
        if m > 0:
            rows.append((u, u + m, x, x))
            u += m
        if i + 1 < len(xs):
            hi = xs[i + 1]
            dens = sum(w / (b - a) for a, b, w in pieces if a <= x and hi <= b)
            m = dens * (hi - x)
            if m > 0:
                rows.append((u, u + m, x, hi))
                u += m
    seg = np.array(rows, dtype=float).reshape(-1, 4)
    seg[-1, 1] = 1.0
    return seg


def _eval_segments(seg: np.ndarray, u: np.ndarray, side: str) -> np.ndarray:
    if side == "left":
        idx = np.searchsorted(seg[:, 1], u, side="left")
    else:
        idx = np.searchsorted(seg[:, 0], u, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    return _segment_value(seg[idx], u)


def _segment_value(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    u0, u1, x0, x1 = rows[..., 0], rows[..., 1], rows[..., 2], rows[..., 3]
    frac = np.clip((u - u0) / (u1 - u0), 0.0, 1.0)
    return x0 + frac * (x1 - x0)


def variance_certificate(dist: SiteDistribution) -> float:
    """Exact variance of a piecewise law."""
    mu = dist.mean()
    # centred second moment avoids cancellation for tiny variances
    var = sum(p * (v - mu) ** 2 for v, p in dist.atoms)
    for a, b, w in dist.pieces:
        ca, cb = a - mu, b - mu
        var += w * (ca * ca + ca * cb + cb * cb) / 3
    return var


def anti_concentration_bound(sigma: float, M: float) -> float:
    """1 - (9/16) sigma^4 / (sigma^4 + M^4)."""
    s4 = sigma**4
    return 1.0 - (9.0 / 16.0) * s4 / (s4 + M**4)


def anti_concentration_sup(dist: SiteDistribution, sigma: float, M: float) -> float:
    """sup over open intervals of radius sigma/2 of P[V in I], computed exactly."""
    if variance_certificate(dist) < sigma**2 * (1 - 1e-12):
        raise DomainError("distribution variance below sigma^2")
    lo, hi = dist.support
    if lo < -1e-15 or hi > M + 1e-12:
        raise DomainError(f"support [{lo}, {hi}] not inside [0, {M}]")
    r = sigma / 2
    xs = dist.breakpoints()
    cand = np.unique(np.concatenate([xs - r, xs + r]))
    cells = np.concatenate([[cand[0] - 1.0], cand, [cand[-1] + 1.0]])

    def cont(c):
        out = np.zeros_like(c)
        for a, b, w in dist.pieces:
            left = np.clip(c - r, a, b)
            right = np.clip(c + r, a, b)
            out += w * (right - left) / (b - a)
        return out

    def atom_mass(c):
        out = np.zeros_like(c)
        for v, p in dist.atoms:
            out += p * (np.abs(v - c) < r)
        return out

    mids = 0.5 * (cells[:-1] + cells[1:])
    best = atom_mass(mids) + np.maximum(cont(cells[:-1]), cont(cells[1:]))
    return float(best.max())


@dataclass(frozen=True)
class BernoulliDecomposition:
    """X = Y(t) + xi Z(t) in law, with t ~ U(0,1) and xi ~ Ber(p) independent.

    ``cells`` has rows (t0, t1, y0, y1, w0, w1): on (t0, t1) both Y and
    W = Y + Z are linear with the given one-sided end values.
    """

    p: float
    iota: float
    cells: np.ndarray = field(repr=False)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.clip(np.searchsorted(self.cells[:, 1], t, side="left"), 0, len(self.cells) - 1)
        return t, self.cells[idx]

    def Y(self, t) -> np.ndarray:
        t, c = self._locate(t)
        frac = (t - c[..., 0]) / (c[..., 1] - c[..., 0])
        return c[..., 2] + frac * (c[..., 3] - c[..., 2])

    def W(self, t) -> np.ndarray:
        t, c = self._locate(t)
        frac = (t - c[..., 0]) / (c[..., 1] - c[..., 0])
        return c[..., 4] + frac * (c[..., 5] - c[..., 4])

    def Z(self, t) -> np.ndarray:
        return self.W(t) - self.Y(t)


def _decomposition_cells(dist: SiteDistribution, p: float) -> np.ndarray:
    seg = dist.segments
    bounds = seg[1:, 0]
    q = 1.0 - p
    tb = np.concatenate([[0.0, 1.0], bounds[bounds < q] / q, (bounds[bounds > q] - q) / p])
    tb = np.unique(np.clip(tb, 0.0, 1.0))
    keep = np.concatenate([[True], np.diff(tb) > 1e-11])
    tb = tb[keep]
    tb[-1] = 1.0
    t0, t1 = tb[:-1], tb[1:]
    tm = 0.5 * (t0 + t1)

    def pieces(u_of_t):
        um = u_of_t(tm)
        idx = np.clip(np.searchsorted(seg[:, 1], um, side="left"), 0, len(seg) - 1)
        rows = seg[idx]
        # extend each segment's linear map to the cell ends: one-sided limits
        u0, u1, x0, x1 = rows.T
        slope = np.where(u1 > u0, (x1 - x0) / np.where(u1 > u0, u1 - u0, 1.0), 0.0)
        return x0 + slope * (u_of_t(t0) - u0), x0 + slope * (u_of_t(t1) - u0)

    y0, y1 = pieces(lambda t: t * q)
    w0, w1 = pieces(lambda t: q + t * p)
    return np.column_stack([t0, t1, y0, y1, w0, w1])


def bernoulli_decompose(dist: SiteDistribution, p: float) -> BernoulliDecomposition:
    """Quantile split: Y(t) = q(t(1-p)) and Y(t) + Z(t) = q(1-p+tp)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    cells = _decomposition_cells(dist, p)
    iota = float(np.min(np.minimum(cells[:, 4] - cells[:, 2], cells[:, 5] - cells[:, 3])))
    # Z is a difference of quantiles at u' > u, so it is never negative;
    # clear rounding residue from the segment extension
    iota = max(iota, 0.0) if abs(iota) < 1e-12 else iota
    if iota <= 0.0:
        raise GapFailure(f"no positive gap at p={p}", p=p, iota=iota)
    return BernoulliDecomposition(p=float(p), iota=iota, cells=cells)


@dataclass(frozen=True)
class DecompositionCheck:
    tv: float
    cdf_sup: float
    atomic: bool


def _mixture_law(decomp: BernoulliDecomposition, p: float):
    """Atoms and uniform pieces of (1-p) law(Y) + p law(W), t uniform."""
    atoms: dict[float, float] = {}
    pieces = []
    for weight, a_col, b_col in ((1.0 - p, 2, 3), (p, 4, 5)):
        for row in decomp.cells:
            mass = weight * (row[1] - row[0])
            if mass <= 0:
                continue
            a, b = row[a_col], row[b_col]
            if abs(b - a) <= 1e-13 * max(1.0, abs(a)):
                atoms[a] = atoms.get(a, 0.0) + mass
            else:
                pieces.append((a, b, mass))
    return atoms, pieces


def _merge_atoms(atoms: dict[float, float], tol: float = 1e-12) -> dict[float, float]:
    out: dict[float, float] = {}
    for v in sorted(atoms):
        key = next((k for k in out if abs(k - v) <= tol * max(1.0, abs(v))), v)
        out[key] = out.get(key, 0.0) + atoms[v]
    return out


def _tv(atoms1, pieces1, atoms2, pieces2) -> float:
    merged = _merge_atoms({**{v: 0.0 for v in atoms2}, **atoms1})
    a1 = merged
    a2: dict[float, float] = {}
    for v, m in atoms2.items():
        key = next((k for k in a1 if abs(k - v) <= 1e-12 * max(1.0, abs(v))), v)
        a2[key] = a2.get(key, 0.0) + m
    keys = set(a1) | set(a2)
    atom_part = sum(abs(a1.get(k, 0.0) - a2.get(k, 0.0)) for k in keys)
    xs = sorted({x for a, b, _ in pieces1 + pieces2 for x in (a, b)})
    cont = 0.0
    for lo, hi in zip(xs[:-1], xs[1:]):
        mid = 0.5 * (lo + hi)
        d1 = sum(w / (b - a) for a, b, w in pieces1 if a <= mid <= b)
        d2 = sum(w / (b - a) for a, b, w in pieces2 if a <= mid <= b)
        cont += abs(d1 - d2) * (hi - lo)
    return 0.5 * (atom_part + cont)


def verify_decomposition(
    decomp: BernoulliDecomposition, dist: SiteDistribution, xi_p: float | None = None, grid: int = 10_000
) -> DecompositionCheck:
    """Distance between the law of Y + xi Z and ``dist``.

    ``xi_p`` overrides the Bernoulli weight used for xi (defaults to the
    decomposition's own p). The total variation is exact; the CDF sup
    distance is taken on a uniform grid over the support.
    """
    p = decomp.p if xi_p is None else float(xi_p)
    atoms, pieces = _mixture_law(decomp, p)
    tv = _tv(atoms, pieces, dict(dist.atoms), list(dist.pieces))
    lo, hi = dist.support
    xs = np.linspace(lo, hi, grid)
    mix_cdf = np.zeros_like(xs)
    for v, m in atoms.items():
        mix_cdf += m * (xs >= v - 1e-13)
    for a, b, w in pieces:
        mix_cdf += w * np.clip((xs - a) / (b - a), 0.0, 1.0)
    cdf_sup = float(np.max(np.abs(mix_cdf - dist.cdf(xs))))
    return DecompositionCheck(tv=float(tv), cdf_sup=cdf_sup, atomic=dist.is_atomic)


def in_paper_regime(M: float, sigma2: float) -> bool:
    return M >= 1.0 and sigma2 <= 1e-8 * M * M


def regime_bounds(M: float, sigma2: float) -> tuple[float, float]:
    """(sigma^5 / (2 M^4), sigma^10 / (4 M^9)): the p-margin and gap guaranteed in regime."""
    s = math.sqrt(sigma2)
    return s**5 / (2 * M**4), s**10 / (4 * M**9)


@dataclass(frozen=True)
class CertifiedDecomposition:
    decomposition: BernoulliDecomposition
    regime: bool
    p_margin_required: float | None
    iota_required: float | None
    failed: tuple[str, ...]

    @property
    def p(self) -> float:
        return self.decomposition.p

    @property
    def iota(self) -> float:
        return self.decomposition.iota

    @property
    def ok(self) -> bool:
        return not self.failed


def candidate_ps(dist: SiteDistribution, M: float, sigma2: float, grid: int = 99) -> list[float]:
    cands = {k / (grid + 1) for k in range(1, grid + 1)}
    if in_paper_regime(M, sigma2):
        pm, _ = regime_bounds(M, sigma2)
        cands.update((pm, 1.0 - pm))
    xs = dist.breakpoints()
    for F in np.concatenate([dist.cdf(xs), dist.cdf_left(xs)]):
        if 0.0 < 1.0 - F < 1.0:
            # the tail mass itself, and half of it for tails that start in a continuous piece
            cands.update((float(1.0 - F), float(1.0 - F) / 2))
    return sorted(c for c in cands if 0.0 < c < 1.0)


def decompose_with_certificate(
    dist: SiteDistribution, M: float, sigma2: float, grid: int = 99
) -> CertifiedDecomposition:
    """Search candidate p values and return the decomposition with the best gap.

    Candidates are a uniform grid, the two regime boundary values, and the
    tail masses 1 - F(x) at CDF breakpoints (where the quantile split lands
    exactly on a jump) together with their halves. The score is min(p, 1-p) * iota.
    """
    if variance_certificate(dist) < sigma2 * (1 - 1e-12):
        raise DomainError("distribution variance below the certified sigma^2")
    lo, hi = dist.support
    if lo < -1e-15 or hi > M + 1e-12:
        raise DomainError(f"support [{lo}, {hi}] not inside [0, {M}]")
    tried = candidate_ps(dist, M, sigma2, grid)
    best, best_key = None, None
    for p in tried:
        try:
            dec = bernoulli_decompose(dist, p)
        except GapFailure:
            continue
        key = (min(p, 1 - p) * dec.iota, -abs(p - 0.5))
        if best_key is None or key > best_key:
            best, best_key = dec, key
    if best is None:
        raise CertificationFailure("no candidate p gives a positive gap", tried=tried)
    regime = in_paper_regime(M, sigma2)
    failed = []
    pm = im = None
    if regime:
        pm, im = regime_bounds(M, sigma2)
        if min(best.p, 1 - best.p) < pm:
            failed.append("p_margin")
        if best.iota < im:
            failed.append("iota")
    return CertifiedDecomposition(best, regime, pm, im, tuple(failed))


# ---------------------------------------------------------------------------
# potential fields

RULES = {"iid": ("all",), "checkerboard": ("even", "odd"), "interface": ("left", "right"), "explicit": ()}


@dataclass(frozen=True)
class PotentialField:
    """Assignment of independent site laws.

    ``rule`` selects the keys of ``distributions``: iid uses "all";
    checkerboard uses "even"/"odd" by the parity of n1+n2+n3; interface uses
    "left" for n1 < 0 and "right" for n1 >= 0; explicit reads ``assignment``
    (site -> key) and falls back to ``default``.
    """

    rule: str
    distributions: Mapping[str, SiteDistribution]
    M: float
    sigma2_min: float
    assignment: Mapping[Site, str] = field(default_factory=dict)
    default: str | None = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise DomainError(f"unknown rule {self.rule!r}")
        need = set(RULES[self.rule])
        if self.rule == "explicit":
            need = set(self.assignment.values()) | ({self.default} if self.default else set())
        missing = need - set(self.distributions)
        if missing:
            raise DomainError(f"rule {self.rule!r} needs distributions {sorted(missing)}")
        if self.sigma2_min <= 0:
            raise DomainError("sigma2_min must be positive")
        for name, d in self.distributions.items():
            var = variance_certificate(d)
            if var < self.sigma2_min * (1 - 1e-12):
                raise DomainError(f"{name}: variance {var:.3g} below sigma2_min {self.sigma2_min:.3g}")
            lo, hi = d.support
            if lo < 0 or hi > self.M:
                raise DomainError(f"{name}: support [{lo}, {hi}] not inside [0, {self.M}]")
        object.__setattr__(self, "assignment", {tuple(int(c) for c in k): v for k, v in self.assignment.items()})

    @classmethod
    def iid(cls, dist: SiteDistribution, M: float | None = None, sigma2_min: float | None = None):
        M = dist.support[1] if M is None else M
        s2 = variance_certificate(dist) if sigma2_min is None else sigma2_min
        return cls("iid", {"all": dist}, M, s2)

    def keys_for(self, sites: np.ndarray) -> np.ndarray:
        sites = np.asarray(sites, dtype=int).reshape(-1, 3)
        if self.rule == "iid":
            return np.full(len(sites), "all", dtype=object)
        if self.rule == "checkerboard":
            return np.where(sites.sum(axis=1) % 2 == 0, "even", "odd").astype(object)
        if self.rule == "interface":
            return np.where(sites[:, 0] < 0, "left", "right").astype(object)
        out = np.empty(len(sites), dtype=object)
        for i, s in enumerate(map(tuple, sites.tolist())):
            key = self.assignment.get(s, self.default)
            if key is None:
                raise DomainError(f"site {s} has no assigned distribution")
            out[i] = key
        return out

    def to_dict(self) -> dict:
        out = {
            "rule": self.rule,
            "distributions": {k: d.to_dict() for k, d in self.distributions.items()},
            "M": self.M,
            "sigma2_min": self.sigma2_min,
        }
        if self.rule == "explicit":
            out["assignment"] = [[*s, k] for s, k in sorted(self.assignment.items())]
            out["default"] = self.default
        return out

    @classmethod
    def from_dict(cls, spec: Mapping) -> PotentialField:
        try:
            dists = {k: SiteDistribution.from_dict(v) for k, v in spec["distributions"].items()}
            assignment = {tuple(row[:3]): row[3] for row in spec.get("assignment", [])}
            return cls(
                rule=spec["rule"],
                distributions=dists,
                M=float(spec["M"]),
                sigma2_min=float(spec["sigma2_min"]),
                assignment=assignment,
                default=spec.get("default"),
            )
        except KeyError as exc:
            raise DomainError(f"field spec missing key {exc}") from None


def sample_potential(field: PotentialField, cube: _Region, seed: int, stream: int = 0) -> np.ndarray:
    """Potential values on ``cube`` in canonical site order.

    Each value is q(U) with U a counter-based uniform keyed by (seed, stream,
    site), so a site gets the same value in every cube containing it.
    """
    sites = cube.sites_array()
    u = rng.site_uniforms(seed, sites, stream)
    keys = field.keys_for(sites)
    out = np.empty(len(sites))
    for name in set(keys.tolist()):
        mask = keys == name
        out[mask] = field.distributions[name].quantile(u[mask])
    return out


def potential_map(cube: _Region, values: np.ndarray) -> dict[Site, float]:
    return {tuple(int(c) for c in s): float(v) for s, v in zip(cube.sites_array(), values)}
