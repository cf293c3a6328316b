"""Finite-volume Hamiltonians H = -Delta + V with Dirichlet truncation.

The discrete Laplacian is taken with the sign convention that makes it
non-negative: diag(n) = 2d + V_n and off-diagonal -1 between lattice
neighbours of the box. Edges leaving the box are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy import linalg

from .errors import ConvergenceError, DenseCapExceeded, DomainError, SpectralCollision
from .green import lattice_green  # noqa: F401  (re-exported)
from .lattice import DIM, _Region

DENSE_CAP = 23**3
CLUSTER_GAP = 1e-9


def path_laplacian(n: int) -> sp.csr_matrix:
    """1D Dirichlet block 2 I - (shift + shift^T) on n sites."""
    off = -np.ones(max(n - 1, 0))
    return sp.diags([off, 2.0 * np.ones(n), off], [-1, 0, 1], shape=(n, n), format="csr")


def box_laplacian(shape) -> sp.csr_matrix:
    """-Delta on a box in canonical (first coordinate slowest) order."""
    nx, ny, nz = shape
    Ix, Iy, Iz = (sp.identity(k, format="csr") for k in shape)
    return (
        sp.kron(sp.kron(path_laplacian(nx), Iy), Iz)
        + sp.kron(sp.kron(Ix, path_laplacian(ny)), Iz)
        + sp.kron(sp.kron(Ix, Iy), path_laplacian(nz))
    ).tocsr()


def free_box_spectrum(shape) -> np.ndarray:
    """Eigenvalues of -Delta on a box, decreasing: sums of 2 - 2cos(j pi/(n+1))."""
    one_d = [2.0 - 2.0 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1)) for n in shape]
    total = one_d[0][:, None, None] + one_d[1][None, :, None] + one_d[2][None, None, :]
    return np.sort(total.ravel())[::-1]


@dataclass(frozen=True)
class EigenData:
    """Eigenvalues in decreasing order with matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class HamiltonianInstance:
    region: _Region
    potential: np.ndarray
    matrix: sp.csr_matrix = field(repr=False)
    laplacian: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def cube(self) -> _Region:
        return self.region

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm_bound(self) -> float:
        """Upper bound 4d + max V on ||H|| (Gershgorin)."""
        return (4.0 * DIM if self.laplacian else 0.0) + float(np.max(np.abs(self.potential), initial=0.0))

    def index(self, site) -> int:
        return self.region.index_of(site)

    def is_constant_potential(self) -> bool:
        return bool(np.all(self.potential == self.potential[0]))

    def with_potential(self, potential) -> HamiltonianInstance:
        return assemble(self.region, potential, laplacian=self.laplacian)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _potential_array(region: _Region, potential) -> np.ndarray:
    if isinstance(potential, Mapping):
        sites = region.sites_array()
        try:
            vals = np.array([potential[tuple(int(c) for c in s)] for s in sites], dtype=float)
        except KeyError as exc:
            raise DomainError(f"potential missing at site {exc}") from None
        return vals
    if np.isscalar(potential):
        return np.full(region.size, float(potential))
    vals = np.asarray(potential, dtype=float).ravel()
    if vals.size != region.size:
        raise DomainError(f"potential has {vals.size} values for {region.size} sites")
    return vals


def assemble(region: _Region, potential, laplacian: bool = True) -> HamiltonianInstance:
    """H_Lambda for ``potential`` given as a site map, an array in site order, or a constant.

    ``laplacian=False`` drops the hopping part entirely (a test hook that
    leaves H = diag(V)).
    """
    V = _potential_array(region, potential)
    if np.any(V < 0) or not np.all(np.isfinite(V)):
        raise DomainError("potential values must be finite and non-negative")
    if laplacian:
        H = box_laplacian(region.shape) + sp.diags(V, format="csr")
    else:
        H = sp.diags(V, format="csr")
    return HamiltonianInstance(region, V, H.tocsr(), laplacian)


# ---------------------------------------------------------------------------
# eigenproblems


def canonicalize(values: np.ndarray, vectors: np.ndarray, gap: float = CLUSTER_GAP) -> np.ndarray:
    """Deterministic basis choice inside numerically degenerate clusters.

    Within a cluster the new basis is Gram-Schmidt applied to the projections
    of the site basis vectors e_1, e_2, ... (site order). Every vector is
    then signed so its first non-negligible coordinate is positive.
    """
    vectors = vectors.copy()
    n = len(values)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and abs(values[stop - 1] - values[stop]) < gap:
            stop += 1
        if stop - start > 1:
            Q = vectors[:, start:stop]
            m = Q.shape[1]
            basis: list[np.ndarray] = []
            for row in Q:
                r = row.copy()
                norm0 = np.linalg.norm(r)
                if norm0 < 1e-12:
                    continue
                for b in basis:
                    r -= (b @ r) * b
                nr = np.linalg.norm(r)
                if nr > 1e-6 * norm0:
                    basis.append(r / nr)
                    if len(basis) == m:
                        break
            B = np.array(basis).T
            vectors[:, start:stop] = Q @ B
        start = stop
    scale = np.max(np.abs(vectors), axis=0)
    lead = np.argmax(np.abs(vectors) > 1e-8 * scale, axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(H: HamiltonianInstance, cap: int = DENSE_CAP) -> EigenData:
    """Full decomposition, eigenvalues decreasing, deterministic vectors."""
    if "eig" in H._cache:
        return H._cache["eig"]
    if H.dim > cap:
        raise DenseCapExceeded(f"dimension {H.dim} exceeds dense cap {cap}; use extremal_eigs")
    w, U = linalg.eigh(H.dense())
    w, U = w[::-1], U[:, ::-1]
    U = canonicalize(w, U)
    data = EigenData(w, U)
    H._cache["eig"] = data
    return data


def eigenvalues(H: HamiltonianInstance, cap: int = DENSE_CAP) -> np.ndarray:
    """All eigenvalues, decreasing (no vectors)."""
    if "eig" in H._cache:
        return H._cache["eig"].values
    if "eigvals" not in H._cache:
        if H.dim > cap:
            raise DenseCapExceeded(f"dimension {H.dim} exceeds dense cap {cap}")
        H._cache["eigvals"] = linalg.eigvalsh(H.dense())[::-1]
    return H._cache["eigvals"]


def extremal_eigs(H: HamiltonianInstance, count: int, which: str = "low", tol: float = 1e-8) -> EigenData:
    """``count`` lowest or highest eigenpairs (decreasing order) via Lanczos."""
    if which not in ("low", "high"):
        raise DomainError("which must be 'low' or 'high'")
    if count < 0 or count > H.dim:
        raise DomainError(f"count {count} outside 0..{H.dim}")
    if count == 0:
        return EigenData(np.empty(0), np.empty((H.dim, 0)))
    if H.dim <= 400 or count >= H.dim - 1:
        full = eigendecompose(H)
        sl = slice(H.dim - count, None) if which == "low" else slice(0, count)
        return EigenData(full.values[sl], full.vectors[:, sl])
    v0 = np.ones(H.dim) / np.sqrt(H.dim)
    try:
        w, U = sla.eigsh(H.matrix, k=count, which="SA" if which == "low" else "LA", tol=1e-12, v0=v0, maxiter=20 * H.dim)
    except sla.ArpackNoConvergence as exc:
        raise ConvergenceError("Lanczos did not converge", achieved=None) from exc
    order = np.argsort(w)[::-1]
    w, U = w[order], U[:, order]
    res = np.linalg.norm(H.matrix @ U - U * w, axis=0)
    worst = float(res.max())
    if worst > tol * max(1.0, H.norm_bound):
        raise ConvergenceError(f"eigenpair residual {worst:.2e} above tolerance", achieved=worst)
    return EigenData(w, canonicalize(w, U))


def lambda_min(H: HamiltonianInstance) -> float:
    if "lmin" not in H._cache:
        if "eig" in H._cache or "eigvals" in H._cache:
            H._cache["lmin"] = float(eigenvalues(H)[-1])
        elif H.dim <= 400:
            H._cache["lmin"] = float(eigenvalues(H)[-1])
        elif not H.laplacian:
            H._cache["lmin"] = float(H.potential.min())
        elif H.is_constant_potential():
            H._cache["lmin"] = float(free_box_spectrum(H.region.shape)[-1] + H.potential[0])
        else:
            H._cache["lmin"] = float(extremal_eigs(H, 1, "low").values[0])
    return H._cache["lmin"]


def check_spectrum_range(values: np.ndarray, M: float, d: int = DIM, tol: float = 1e-9) -> bool:
    """All eigenvalues in [0, 4d + M]."""
    values = np.asarray(values)
    return bool(values.min() >= -tol and values.max() <= 4 * d + M + tol)


# ---------------------------------------------------------------------------
# resolvents


def distance_to_spectrum(H: HamiltonianInstance, E: float) -> float:
    if "eig" in H._cache or "eigvals" in H._cache or H.dim <= 2000:
        return float(np.min(np.abs(eigenvalues(H) - E)))
    lo = lambda_min(H)
    if E < lo:
        return lo - E
    w = sla.eigsh(H.matrix, k=1, sigma=E, which="LM", return_eigenvectors=False, tol=1e-12)
    return float(np.min(np.abs(w - E)))


def _collision_guard(H: HamiltonianInstance, E: float) -> float:
    dist = distance_to_spectrum(H, E)
    if dist <= 1e-12 * max(1.0, H.norm_bound):
        raise SpectralCollision(f"E={E} within {dist:.2e} of the spectrum", distance=dist)
    return dist


def resolvent_norm(H: HamiltonianInstance, E: float) -> float:
    """||(H - E)^{-1}|| = 1 / dist(E, spectrum)."""
    return 1.0 / _collision_guard(H, E)


def _sine_basis(n: int) -> np.ndarray:
    k = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.outer(k, k) * np.pi / (n + 1))


def _dst_columns(H: HamiltonianInstance, E: float, cols: np.ndarray) -> np.ndarray:
    """Columns of (H - E)^{-1} in the Dirichlet sine eigenbasis (type-I DST as small matmuls)."""
    shape = H.region.shape
    S = [_sine_basis(n) for n in shape]
    one_d = [2.0 - 2.0 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1)) for n in shape]
    lam = one_d[0][:, None, None] + one_d[1][None, :, None] + one_d[2][None, None, :] + H.potential[0]
    inv = 1.0 / (lam - E)
    idx = np.unravel_index(np.asarray(cols, dtype=int), shape)
    out = np.empty((H.dim, len(cols)))
    batch = max(1, int(2**22 // H.dim))
    for s in range(0, len(cols), batch):
        sl = slice(s, s + batch)
        ix, iy, iz = (S[a][:, idx[a][sl]] for a in range(3))
        coef = inv[..., None] * ix[:, None, None, :] * iy[None, :, None, :] * iz[None, None, :, :]
        t = np.tensordot(S[0], coef, axes=(1, 0))
        t = np.einsum("yb,xbcj->xycj", S[1], t, optimize=True)
        t = np.einsum("zc,xycj->xyzj", S[2], t, optimize=True)
        out[:, sl] = t.reshape(H.dim, -1)
    return out


class Resolvent:
    """(H - E)^{-1} for a fixed energy: columns by exact solves.

    Constant potentials on a box use the sine transform, which diagonalises
    the Dirichlet Laplacian; otherwise a sparse LU factorisation is reused.
    """

    def __init__(self, H: HamiltonianInstance, E: float, check: bool = True):
        self.H = H
        self.E = float(E)
        self.distance = _collision_guard(H, E) if check else None
        self._lu = None
        self._dense = None

    def columns(self, cols) -> np.ndarray:
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        H = self.H
        if H.laplacian and H.is_constant_potential() and H.dim > 64:
            return _dst_columns(H, self.E, cols)
        if H.dim <= 3000:
            if self._dense is None:
                self._dense = np.linalg.inv(H.dense() - self.E * np.eye(H.dim))
            return self._dense[:, cols]
        if self._lu is None:
            A = (H.matrix - self.E * sp.identity(H.dim, format="csr")).tocsc()
            self._lu = sla.splu(A)
        rhs = np.zeros((H.dim, len(cols)))
        rhs[cols, np.arange(len(cols))] = 1.0
        return self._lu.solve(rhs)

    def column(self, b) -> np.ndarray:
        idx = b if isinstance(b, (int, np.integer)) else self.H.index(b)
        return self.columns([idx])[:, 0]

    def matrix(self) -> np.ndarray:
        return self.columns(np.arange(self.H.dim))

    def entry(self, x, y) -> float:
        return float(self.column(y)[self.H.index(x)])


def resolvent_entry(H: HamiltonianInstance, E: float, x, y) -> float:
    """(H_Lambda - E)^{-1}(x, y) from a finite-volume solve."""
    return Resolvent(H, E).entry(x, y)


# ---------------------------------------------------------------------------
# dynamics


def evolve(H: HamiltonianInstance, t: float, psi0: np.ndarray, eig: EigenData | None = None) -> np.ndarray:
    """exp(-itH) psi0 through the spectral decomposition."""
    eig = eigendecompose(H) if eig is None else eig
    coeff = eig.vectors.T @ np.asarray(psi0, dtype=complex)
    return eig.vectors @ (np.exp(-1j * t * eig.values) * coeff)


def default_time_grid(seed: int, t_max: float = 1e3, n_uniform: int = 10_000, n_random: int = 1_000) -> np.ndarray:
    from .rng import generator

    extra = generator(seed, 0x71AE).uniform(0.0, t_max, n_random)
    return np.sort(np.concatenate([np.linspace(0.0, t_max, n_uniform), extra]))


def window_eigs(H: HamiltonianInstance, E0: float, E_lo: float = -np.inf) -> EigenData:
    """Eigenpairs with E_lo <= E <= E0."""
    if H.dim <= DENSE_CAP and ("eig" in H._cache or H.dim <= 4000):
        eig = eigendecompose(H)
        keep = (eig.values <= E0) & (eig.values >= E_lo)
        return EigenData(eig.values[keep], eig.vectors[:, keep])
    if lambda_min(H) > E0:
        return EigenData(np.empty(0), np.empty((H.dim, 0)))
    k = 4
    while True:
        part = extremal_eigs(H, min(k, H.dim - 2), "low")
        if part.values[0] > E0 or k >= H.dim - 2:
            keep = (part.values <= E0) & (part.values >= E_lo)
            return EigenData(part.values[keep], part.vectors[:, keep])
        k *= 2


def position_weights(region: _Region, b: float, origin=(0, 0, 0)) -> np.ndarray:
    """|n|^b (Euclidean norm from the lattice origin) over the region's sites."""
    r = np.linalg.norm(region.sites_array() - np.asarray(origin), axis=1)
    return r**b


def dynloc_moment(
    H: HamiltonianInstance,
    E0: float,
    b: float,
    s: float,
    time_grid,
    center=None,
) -> float:
    """max over the grid of || |X|^b exp(-itH) 1_[0,E0](H) delta_center ||^s."""
    if b < 0 or not 0 < s <= 1:
        raise DomainError("need b >= 0 and s in (0, 1]")
    center = (0, 0, 0) if center is None else center
    win = window_eigs(H, E0)
    if len(win) == 0:
        return 0.0
    c = win.vectors[H.index(center), :]
    w = position_weights(H.region, 2 * b)
    G = win.vectors.T @ (w[:, None] * win.vectors)
    t = np.asarray(time_grid, dtype=float)
    best = 0.0
    for s0 in range(0, len(t), 2048):
        tt = t[s0 : s0 + 2048]
        Vt = c[:, None] * np.exp(-1j * np.outer(win.values, tt))
        sq = np.real(np.sum(np.conj(Vt) * (G @ Vt), axis=0))
        best = max(best, float(np.max(sq)))
    return max(best, 0.0) ** (s / 2)
