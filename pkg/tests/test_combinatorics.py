from __future__ import annotations

import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_lab.combinatorics import (
    BernoulliEnsemble,
    SpernerFamily,
    almost_orthonormal_count_check,
    family_probability,
    flip,
    is_antichain,
    mask_of,
    maximal_witnesses,
    slice_family,
    sperner_bound,
    sperner_kappa,
    verify_kappa_sperner,
)
from anderson_lab.errors import DomainError


def brute_witnesses(fam):
    out = []
    for A in fam.members:
        U = 0
        for B in fam.members:
            if B != A and B & A == A:
                U |= B
        out.append(fam.full & ~(A | U))
    return out


def test_empty_set_family():
    fam = SpernerFamily.from_sets(5, [[]], witness=[([], range(5))])
    assert verify_kappa_sperner(fam, 1.0)


@pytest.mark.parametrize("N", range(2, 13))
def test_slices_are_one_sperner(N):
    for k in range(N + 1):
        fam = slice_family(N, k)
        assert verify_kappa_sperner(fam, 1.0)


def test_chain_is_only_fractionally_sperner():
    fam = SpernerFamily.from_sets(4, [[], [1]])
    assert not verify_kappa_sperner(fam, 1.0)
    assert verify_kappa_sperner(fam, 0.75)
    assert sperner_kappa(fam) == pytest.approx(0.75)


def test_explicit_witness_accepted():
    fam = SpernerFamily.from_sets(4, [[0], [1]], witness=[([0], [2, 3]), ([1], [2, 3])])
    assert verify_kappa_sperner(fam, 2 / 3)


def test_witness_paths_agree_with_brute_force():
    small = SpernerFamily.from_sets(6, [[0], [0, 1], [0, 1, 2], [3], [3, 4, 5]])
    assert maximal_witnesses(small) == brute_witnesses(small)
    # two full levels: large enough that the transform path is taken
    two = SpernerFamily(12, slice_family(12, 6).members + slice_family(12, 7).members)
    assert len(two.members) ** 2 > 12 << 12
    assert maximal_witnesses(two) == brute_witnesses(two)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8).flatmap(lambda N: st.tuples(st.just(N), st.sets(st.integers(0, (1 << N) - 1), min_size=1, max_size=12))))
def test_one_sperner_iff_antichain(data):
    N, members = data
    fam = SpernerFamily(N, tuple(sorted(members)))
    assert verify_kappa_sperner(fam, 1.0) == is_antichain(fam)


def test_probability_closed_forms():
    assert family_probability(SpernerFamily(4, tuple(range(16))), BernoulliEnsemble([0.3, 0.6, 0.2, 0.7])) == pytest.approx(1.0)
    assert family_probability(slice_family(4, 2), BernoulliEnsemble([0.5] * 4)) == pytest.approx(0.375)
    assert family_probability(SpernerFamily.from_sets(10, [[]]), BernoulliEnsemble([0.5] * 10)) == pytest.approx(2**-10)


def test_probability_inhomogeneous_by_enumeration():
    p = np.array([0.2, 0.45, 0.8, 0.6, 0.3])
    fam = slice_family(5, 2)
    total = 0.0
    for A in combinations(range(5), 2):
        total += np.prod([p[i] if i in A else 1 - p[i] for i in range(5)])
    assert family_probability(fam, BernoulliEnsemble(p)) == pytest.approx(total, rel=1e-14)


def test_bound_value():
    assert sperner_bound(0.5, 1.0, 4, 1.0) == pytest.approx(2**2.5 / 2)
    assert sperner_bound(0.5, 1.0, 16, 1.0) == pytest.approx(sperner_bound(0.5, 1.0, 4, 1.0) / 2)
    with pytest.raises(DomainError):
        sperner_bound(0.6, 1.0, 4, 1.0)


def test_middle_slice_ratio_bounded():
    ratios = []
    for N in range(4, 21):
        fam = slice_family(N, N // 2)
        prob = family_probability(fam, BernoulliEnsemble([0.5] * N))
        ratios.append(prob / sperner_bound(0.5, 1.0, N, 1.0))
    assert max(ratios) < 1


def test_orthonormal_basis_is_tight():
    rep = almost_orthonormal_count_check(np.eye(16), 2)
    assert rep.satisfies_gram and rep.m == rep.bound == 16 and rep.bound_holds


def test_extra_vector_breaks_gram_condition():
    v = np.vstack([np.eye(64), np.eye(64)[7]])
    rep = almost_orthonormal_count_check(v, 2)
    assert not rep.satisfies_gram and rep.worst_pair == (7, 64)
    assert rep.worst_deviation == pytest.approx(1.0)


def test_count_bound_fails_once_gram_condition_is_vacuous():
    # unit vectors always satisfy |<v_i, v_j>| <= 1 <= alpha n^{-1/2} once alpha >= sqrt(n)
    v = np.random.default_rng(0).normal(size=(200, 16))
    v /= np.linalg.norm(v, axis=1)[:, None]
    rep = almost_orthonormal_count_check(v, 5)
    assert rep.satisfies_gram and rep.applicable and not rep.bound_holds


def test_alpha_below_two_rejected():
    with pytest.raises(DomainError):
        almost_orthonormal_count_check(np.eye(3), 1.5)


def test_flip():
    xi = mask_of([0, 2])
    assert flip(flip(xi, 5), 5) == xi
    assert flip(0, 3) == 0b1000
    assert bin(flip(xi, 1)).count("1") == 3
    assert flip({(0, 0, 0)}, (1, 0, 0)) == {(0, 0, 0), (1, 0, 0)}


def test_family_validation():
    with pytest.raises(DomainError):
        SpernerFamily(3, (1, 1))
    with pytest.raises(DomainError):
        SpernerFamily(3, (8,))
    with pytest.raises(DomainError):
        SpernerFamily(30, ())
