"""Geometry of Z^3: cubes, boxes, neighbours, cone layers and dyadic covers.

Cube radii are l-infinity radii (side length 2L+1); adjacency is l1 distance
one. Site enumeration is lexicographic, with the first coordinate varying
slowest, and that order is the index map used by every operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import DomainError

Site = tuple[int, int, int]

DIM = 3
_UNIT_STEPS = [tuple(int(i == j) * s for j in range(DIM)) for i in range(DIM) for s in (-1, 1)]


def as_site(site) -> Site:
    t = tuple(int(c) for c in site)
    if len(t) != DIM:
        raise DomainError(f"expected a {DIM}-vector, got {site!r}")
    return t


class _Region:
    """Shared behaviour of axis-aligned boxes. Subclasses define ``lo``/``hi``."""

    lo: Site
    hi: Site

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def sites_array(self) -> np.ndarray:
        """Integer array of shape (size, 3) in canonical order."""
        axes = [np.arange(l, h + 1) for l, h in zip(self.lo, self.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return grid.reshape(-1, DIM)

    def contains(self, site) -> bool:
        return all(l <= c <= h for c, l, h in zip(site, self.lo, self.hi))

    def index_of(self, site) -> int:
        site = as_site(site)
        if not self.contains(site):
            raise DomainError(f"site {site} outside {self}")
        nx, ny, nz = self.shape
        x, y, z = (c - l for c, l in zip(site, self.lo))
        return (x * ny + y) * nz + z

    def intersect(self, other: _Region) -> Box | None:
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(l > h for l, h in zip(lo, hi)):
            return None
        return Box(lo, hi)


@dataclass(frozen=True)
class Box(_Region):
    """Inclusive axis-aligned box ``lo <= m <= hi``."""

    lo: Site
    hi: Site

    def __post_init__(self):
        object.__setattr__(self, "lo", as_site(self.lo))
        object.__setattr__(self, "hi", as_site(self.hi))
        if any(l > h for l, h in zip(self.lo, self.hi)):
            raise DomainError(f"empty box {self.lo}..{self.hi}")


@dataclass(frozen=True)
class Cube(_Region):
    """The cube Lambda_L(n) = {m : max_i |m_i - n_i| <= L}."""

    center: Site
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_site(self.center))
        if int(self.radius) != self.radius or self.radius < 0:
            raise DomainError(f"cube radius must be a non-negative integer, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    @property
    def lo(self) -> Site:
        return tuple(c - self.radius for c in self.center)

    @property
    def hi(self) -> Site:
        return tuple(c + self.radius for c in self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    def as_box(self) -> Box:
        return Box(self.lo, self.hi)


@dataclass(frozen=True)
class ConeSpec:
    """Cone Co^tau_apex with axis ``tau`` in {1,2,3} and orientation ``sign``."""

    apex: Site
    tau: int
    sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "apex", as_site(self.apex))
        if self.tau not in (1, 2, 3):
            raise DomainError(f"axis must be 1, 2 or 3, got {self.tau}")
        if self.sign not in (-1, 1):
            raise DomainError(f"sign must be -1 or +1, got {self.sign}")


def cube_sites(cube: _Region) -> list[Site]:
    return [tuple(int(c) for c in row) for row in cube.sites_array()]


def neighbors_in(cube: _Region, site) -> list[Site]:
    site = as_site(site)
    if not cube.contains(site):
        raise DomainError(f"site {site} outside {cube}")
    out = []
    for step in _UNIT_STEPS:
        m = tuple(a + b for a, b in zip(site, step))
        if cube.contains(m):
            out.append(m)
    return out


def in_cone(spec: ConeSpec, m) -> bool:
    d = [a - b for a, b in zip(m, spec.apex)]
    t = spec.tau - 1
    return abs(d[t]) >= sum(abs(d[s]) for s in range(DIM) if s != t)


def layer_offsets(tau: int, signed_k: int) -> np.ndarray:
    """Offsets m - apex of the layer (apex - m) . e_tau = signed_k in free Z^3."""
    k = abs(signed_k)
    t = tau - 1
    others = [s for s in range(DIM) if s != t]
    rows = []
    for a in range(-k, k + 1):
        for b in range(-(k - abs(a)), k - abs(a) + 1):
            off = [0, 0, 0]
            off[t] = -signed_k
            off[others[0]] = a
            off[others[1]] = b
            rows.append(off)
    return np.array(rows, dtype=int).reshape(-1, DIM)


def cone_layer(spec: ConeSpec, k: int, cube: _Region | None = None) -> set[Site]:
    """Sites m with (apex - m) . e_tau = sign * k lying in the cone (and the cube).

    ``k = 0`` is accepted and returns the apex itself.
    """
    if k < 0:
        raise DomainError(f"layer index must be >= 0, got {k}")
    offs = layer_offsets(spec.tau, spec.sign * k)
    sites = {tuple(int(a + o) for a, o in zip(spec.apex, off)) for off in offs}
    if cube is not None:
        sites = {m for m in sites if cube.contains(m)}
    return sites


def free_layer_count(k: int) -> int:
    return 2 * k * k + 2 * k + 1


def is_dyadic(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def is_dyadic_cube(cube: Cube) -> bool:
    if not is_dyadic(cube.radius) or cube.radius < 2:
        return False
    half = cube.radius // 2
    return all(c % half == 0 for c in cube.center)


def _axis_centers(c: int, L: int, h: int, Lk: int, full: bool) -> list[int]:
    if full:
        # every multiple of h whose interval [x - Lk, x + Lk] meets [c - L, c + L]
        lo = math.ceil((c - L - Lk) / h)
        hi = math.floor((c + L + Lk) / h)
        return [j * h for j in range(lo, hi + 1)]
    # a lattice of spacing Lk through the dyadic position nearest to c; each target
    # coordinate is within Lk/2 of some centre
    o = round(c / h) * h
    lo = math.ceil((c - L - o - h) / Lk)
    hi = math.floor((c + L - o + h) / Lk)
    return [o + j * Lk for j in range(lo, hi + 1)]


def dyadic_cover(target: Cube, scale: int, full: bool = False) -> list[Cube]:
    """Dyadic ``scale``-cubes covering ``target``.

    With ``full=True`` this is every dyadic cube meeting the target. The
    default returns the sub-family whose centres form a spacing-``scale``
    lattice through the dyadic point nearest the target centre: it still
    covers, every site sits at least scale/2 inside some member, and the
    count is at most (2L/scale + 2)^3.
    """
    if not is_dyadic(scale) or scale < 2:
        raise DomainError(f"scale must be a power of two >= 2, got {scale}")
    if target.radius < scale:
        raise DomainError(f"target radius {target.radius} below scale {scale}")
    h = scale // 2
    per_axis = [_axis_centers(c, target.radius, h, scale, full) for c in target.center]
    cubes = [Cube(ctr, scale) for ctr in product(*per_axis)]
    return [q for q in cubes if q.intersect(target) is not None]


def distance_to_complement(site, region: _Region, inner: _Region) -> float:
    """Distance from ``site`` (inside ``inner``) to ``region`` minus ``inner``.

    For axis-aligned boxes the nearest outside point is reached along one
    axis, so the value is the same in every l^p norm. Returns inf when
    ``region`` is contained in ``inner``.
    """
    site = as_site(site)
    if not inner.contains(site):
        return 0.0
    best = math.inf
    for i in range(DIM):
        if region.lo[i] < inner.lo[i]:
            best = min(best, site[i] - inner.lo[i] + 1)
        if region.hi[i] > inner.hi[i]:
            best = min(best, inner.hi[i] - site[i] + 1)
    return float(best)


def best_witness(site, target: Cube, cover: list[Cube]) -> tuple[Cube | None, float]:
    """Cover member maximising the distance from ``site`` to the target outside it."""
    best, best_d = None, -1.0
    for q in cover:
        d = distance_to_complement(site, target, q)
        if d > best_d:
            best, best_d = q, d
    return best, best_d
