from __future__ import annotations

import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate

from anderson_lab.errors import DomainError
from anderson_lab.green import C3, G0_D3, asymptotic_constant, green_table, lattice_green

# Watson's closed form for the simple cubic lattice, evaluated in mpmath.
W3 = (
    mp.sqrt(6)
    / (32 * mp.pi**3)
    * mp.gamma(mp.mpf(1) / 24)
    * mp.gamma(mp.mpf(5) / 24)
    * mp.gamma(mp.mpf(7) / 24)
    * mp.gamma(mp.mpf(11) / 24)
)


def test_frozen_value_matches_watson():
    assert abs(G0_D3 - float(W3 / 6)) < 1e-14


def test_origin_matches_oracle():
    assert abs(lattice_green((0, 0, 0)) - G0_D3) < 1e-10


def test_fourier_cross_check():
    # G(a) = (2 pi)^-3 int cos(k.a) / (2 sum(1 - cos k_j)) d^3k; do k_3 analytically:
    # int_0^pi cos(n k)/(c - cos k) dk / pi = z^n / sqrt(c^2 - 1), z = c - sqrt(c^2 - 1).
    def inner(k1, k2, a):
        c = 3.0 - math.cos(k1) - math.cos(k2)
        s = math.sqrt(c * c - 1.0)
        return math.cos(a[0] * k1) * math.cos(a[1] * k2) * (c - s) ** abs(a[2]) / s

    for a in [(0, 0, 1), (1, 1, 0), (2, 0, 1)]:
        val, _ = integrate.dblquad(lambda y, x: inner(x, y, a), 0, math.pi, 0, math.pi, epsabs=1e-11)
        fourier = val / (2 * math.pi**2)
        assert abs(fourier - lattice_green(a)) < 1e-8


def test_discrete_laplacian_identity():
    rng = np.random.default_rng(4)
    pts = [(0, 0, 0)] + [tuple(rng.integers(-8, 9, size=3)) for _ in range(20)]
    steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    for a in pts:
        lap = 6 * lattice_green(a, tol=1e-9) - sum(lattice_green(np.add(a, s), tol=1e-9) for s in steps)
        assert abs(lap - (1.0 if a == (0, 0, 0) else 0.0)) < 1e-8


def test_symmetry():
    assert lattice_green((1, -2, 3)) == lattice_green((3, 2, -1))


def test_monotone_along_axis():
    vals = [lattice_green((n, 0, 0)) for n in range(6)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


@pytest.mark.parametrize("r", [20, 30, 40])
def test_far_field(r):
    assert abs(lattice_green((r, 0, 0)) * r / C3 - 1) < 0.005


def test_asymptotic_constant_d3():
    assert math.isclose(asymptotic_constant(3), 1 / (4 * math.pi))


def test_low_dimension_rejected():
    with pytest.raises(DomainError):
        lattice_green((0, 0), d=2)


def test_table_matches_pointwise():
    offs = np.array([[0, 0, 0], [1, 0, 0], [0, -1, 0], [2, 1, 1]])
    tab = green_table(offs)
    assert tab[1] == tab[2]
    assert np.allclose(tab, [lattice_green(o) for o in offs])
