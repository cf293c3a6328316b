from __future__ import annotations

import itertools

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from anderson_lab.errors import DenseCapExceeded, DomainError, SpectralCollision
from anderson_lab.lattice import Box, Cube
from anderson_lab.operators import (
    Resolvent,
    assemble,
    canonicalize,
    check_spectrum_range,
    default_time_grid,
    distance_to_spectrum,
    dynloc_moment,
    eigendecompose,
    eigenvalues,
    evolve,
    extremal_eigs,
    lambda_min,
    position_weights,
    resolvent_norm,
)


def tensor_oracle(L):
    n = 2 * L + 1
    one = [2 - 2 * np.cos(np.pi * k / (n + 1)) for k in range(1, n + 1)]
    return np.sort([a + b + c for a, b, c in itertools.product(one, one, one)])[::-1]


@pytest.mark.parametrize("L", [0, 1, 2])
def test_free_spectrum_matches_tensor_form(L):
    ev = eigenvalues(assemble(Cube((0, 0, 0), L), 0.0))
    assert np.max(np.abs(ev - tensor_oracle(L))) < 1e-12


def test_single_site():
    assert eigenvalues(assemble(Cube((5, 5, 5), 0), 0.7)).tolist() == pytest.approx([6.7])


def test_matrix_entries():
    H = assemble(Cube((0, 0, 0), 1), 0.0)
    c, nb = H.index((0, 0, 0)), H.index((1, 0, 0))
    assert H.matrix[c, c] == 6 and H.matrix[c, nb] == -1
    assert H.matrix[c, H.index((1, 1, 0))] == 0


def test_hopping_can_be_dropped():
    V = np.arange(27) / 27
    assert np.allclose(np.sort(eigenvalues(assemble(Cube((0, 0, 0), 1), V, laplacian=False))), np.sort(V))


def test_potential_validation():
    q = Cube((0, 0, 0), 1)
    with pytest.raises(DomainError):
        assemble(q, -1.0)
    with pytest.raises(DomainError):
        assemble(q, {(0, 0, 0): 1.0})
    with pytest.raises(DomainError):
        assemble(q, np.zeros(5))


def test_spectrum_in_range_for_random_potential():
    V = np.random.default_rng(0).random(125)
    ev = eigenvalues(assemble(Cube((0, 0, 0), 2), V))
    assert check_spectrum_range(ev, 1.0)
    assert np.all(np.diff(ev) <= 0)


def test_eigendecompose_reconstructs():
    V = np.random.default_rng(1).random(125)
    H = assemble(Cube((0, 0, 0), 2), V)
    eig = eigendecompose(H)
    assert np.allclose(eig.vectors @ np.diag(eig.values) @ eig.vectors.T, H.dense(), atol=1e-10)


def test_degenerate_basis_is_deterministic():
    H = assemble(Cube((0, 0, 0), 1), 0.0)
    a = eigendecompose(H)
    w, U = np.linalg.eigh(H.dense())
    rot = np.linalg.qr(np.random.default_rng(2).normal(size=(27, 27)))[0]
    # scramble within eigenspaces and recanonicalise
    P = np.zeros_like(U)
    i = 0
    while i < 27:
        j = i
        while j < 27 and abs(w[j] - w[i]) < 1e-9:
            j += 1
        Q = np.linalg.qr(rot[: j - i, : j - i])[0]
        P[:, i:j] = U[:, i:j] @ Q
        i = j
    b = canonicalize(w[::-1], P[:, ::-1])
    assert np.allclose(a.vectors, b, atol=1e-9)


def test_dense_cap():
    with pytest.raises(DenseCapExceeded):
        eigendecompose(assemble(Cube((0, 0, 0), 3), 0.0), cap=100)


def test_lanczos_matches_dense():
    V = np.random.default_rng(3).random(9**3)
    H = assemble(Cube((0, 0, 0), 4), V)
    low = extremal_eigs(H, 3, "low")
    H2 = assemble(Cube((0, 0, 0), 4), V)
    dense = eigenvalues(H2)
    assert np.allclose(low.values, dense[-3:], atol=1e-9)
    assert lambda_min(H) == pytest.approx(dense[-1], abs=1e-9)


def test_constant_potential_lambda_min_shortcut():
    H = assemble(Cube((0, 0, 0), 8), 0.5)
    lam = 3 * (2 - 2 * np.cos(np.pi / 18)) + 0.5
    assert lambda_min(H) == pytest.approx(lam, abs=1e-14)


def test_resolvent_is_spectral_sum():
    V = np.random.default_rng(4).random(64)
    H = assemble(Box((0, 0, 0), (3, 3, 3)), V)
    E = 0.3
    eig = eigendecompose(H)
    G = eig.vectors @ np.diag(1 / (eig.values - E)) @ eig.vectors.T
    assert np.allclose(Resolvent(H, E).matrix(), G, atol=1e-12)
    assert resolvent_norm(H, E) == pytest.approx(np.abs(1 / (eig.values - E)).max())


def test_sine_transform_columns_match_sparse_solve():
    H = assemble(Cube((0, 0, 0), 6), 1.0)
    E = 0.1
    cols = [0, 100, H.index((0, 0, 0)), H.dim - 1]
    A = (H.matrix - E * sp.identity(H.dim)).tocsc()
    rhs = np.zeros((H.dim, len(cols)))
    rhs[cols, range(len(cols))] = 1
    assert np.abs(Resolvent(H, E).columns(cols) - sla.spsolve(A, rhs)).max() < 1e-13


def test_sparse_lu_path():
    V = np.random.default_rng(5).random(15**3)
    H = assemble(Cube((0, 0, 0), 7), V)
    E = lambda_min(H) / 2
    col = Resolvent(H, E).column((0, 0, 0))
    e = np.zeros(H.dim)
    e[H.index((0, 0, 0))] = 1
    assert np.allclose(H.matrix @ col - E * col, e, atol=1e-10)


def test_collision_raises():
    H = assemble(Cube((0, 0, 0), 1), 0.0)
    with pytest.raises(SpectralCollision):
        Resolvent(H, float(eigenvalues(H)[3]))
    assert distance_to_spectrum(H, -1.0) == pytest.approx(1 + eigenvalues(H)[-1])


def test_evolution_is_unitary():
    H = assemble(Cube((0, 0, 0), 2), np.random.default_rng(6).random(125))
    psi = np.zeros(125)
    psi[H.index((0, 0, 0))] = 1
    for t in (0.0, 1.5, 100.0):
        assert np.linalg.norm(evolve(H, t, psi)) == pytest.approx(1.0)
    assert np.allclose(evolve(H, 0.0, psi), psi)


def test_dynloc_gram_method_matches_direct():
    H = assemble(Cube((0, 0, 0), 2), np.random.default_rng(7).random(125) * 0.1)
    E0, b, s = 1.5, 1.0, 0.5
    grid = default_time_grid(1, 50.0, 200, 20)
    eig = eigendecompose(H)
    keep = eig.values <= E0
    P = eig.vectors[:, keep] @ eig.vectors[:, keep].T
    psi = P[:, H.index((0, 0, 0))]
    w = position_weights(H.region, b)
    direct = max(np.linalg.norm(w * evolve(H, t, psi)) for t in grid) ** s
    assert dynloc_moment(H, E0, b, s, grid) == pytest.approx(direct, rel=1e-10)


def test_empty_window_gives_zero():
    H = assemble(Cube((0, 0, 0), 2), 1.0)
    assert dynloc_moment(H, 0.1, 1.0, 0.1, [0.0, 1.0]) == 0.0


def test_time_grid_is_seeded():
    a, b = default_time_grid(3), default_time_grid(3)
    assert np.array_equal(a, b) and len(a) == 11_000 and a[0] == 0.0 and a[-1] <= 1e3
