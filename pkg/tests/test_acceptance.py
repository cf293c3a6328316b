"""Exit criteria. Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line.

Run with ``pytest -m acceptance -s`` to see the lines.
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from anderson_lab.combinatorics import (
    BernoulliEnsemble,
    SpernerFamily,
    family_probability,
    maximal_witnesses,
    slice_family,
    sperner_bound,
    sperner_kappa,
    verify_kappa_sperner,
)
from anderson_lab.ensembles import (
    SiteDistribution,
    bernoulli_decompose,
    decompose_with_certificate,
    in_paper_regime,
    variance_certificate,
    verify_decomposition,
)
from anderson_lab.errors import CrossingError, GapFailure
from anderson_lab.green import C3, G0_D3, lattice_green
from anderson_lab.harness import ExperimentConfig, run
from anderson_lab.initial_scale import (
    RNetCertificate,
    neumann_constants,
    neumann_decay_check,
    principal_lower_bound,
    spaced_net,
    verify_lifshitz,
)
from anderson_lab.lattice import Cube
from anderson_lab.msa import final_params, plan_schedule
from anderson_lab.operators import Resolvent, assemble, eigenvalues, free_box_spectrum
from anderson_lab.wegner import annulus_predicate, annulus_union, eigen_push_check, fh_path, random_push_instance

pytestmark = pytest.mark.acceptance


def report(n: int, ok: bool, detail: str) -> None:
    print(f"\nACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}: {detail}")


def test_01_free_spectra():
    t0 = time.perf_counter()
    worst = 0.0
    for L in (1, 2, 4, 7):
        q = Cube((0, 0, 0), L)
        ev = np.sort(eigenvalues(assemble(q, 0.0)))
        worst = max(worst, float(np.abs(ev - np.sort(free_box_spectrum(q.shape))).max()))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 30
    report(1, ok, f"max |dev| = {worst:.2e} (tol 1e-10), {dt:.1f} s (< 30 s)")
    assert ok


def test_02_green_function():
    t0 = time.perf_counter()
    g0 = lattice_green((0, 0, 0), tol=1e-9)
    origin_err = abs(g0 - G0_D3)
    gen = np.random.default_rng(2024)
    pts = [(0, 0, 0)] + [tuple(int(x) for x in gen.integers(-10, 11, size=3)) for _ in range(20)]
    steps = np.vstack([np.eye(3, dtype=int), -np.eye(3, dtype=int)])
    lap_err = 0.0
    for a in pts:
        lap = 6 * lattice_green(a, tol=1e-9) - sum(lattice_green(np.add(a, s), tol=1e-9) for s in steps)
        lap_err = max(lap_err, abs(lap - (1.0 if a == (0, 0, 0) else 0.0)))
    far = []
    while len(far) < 12:
        a = gen.integers(-40, 41, size=3)
        if 20 <= np.linalg.norm(a) <= 40:
            far.append(a)
    far += [np.array([20, 0, 0]), np.array([40, 0, 0])]
    rel = max(abs(lattice_green(a) * np.linalg.norm(a) / C3 - 1) for a in far)
    dt = time.perf_counter() - t0
    ok = origin_err <= 1e-4 and lap_err <= 1e-5 and rel <= 0.02 and dt < 120
    report(
        2,
        ok,
        f"G(0) = {g0:.12f} (|err| {origin_err:.1e} <= 1e-4), max |-Lap G - delta| = {lap_err:.1e} (<= 1e-5), "
        f"max |G|a|/C - 1| on |a| in [20,40] = {rel:.4f} (<= 0.02), {dt:.1f} s",
    )
    assert ok


def _net_instances(count=50, seed=31):
    gen = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        L = int(gen.integers(12, 17))
        R = int(gen.choice([2, 3, 4]))
        kappa = float(gen.choice([0.5, 1.0]))
        q = Cube((0, 0, 0), L)
        net = spaced_net(q, R, tuple(int(x) for x in gen.integers(0, 2 * R, size=3)))
        # random potential below kappa off the net, at least kappa on it
        V = gen.uniform(0.0, kappa, q.size) * (gen.random(q.size) < 0.5)
        idx = [q.index_of(s) for s in net]
        V[idx] = kappa + gen.uniform(0.0, 1.0, len(idx))
        out.append((q, net, R, kappa, assemble(q, V)))
    return out


@pytest.fixture(scope="module")
def net_instances():
    return _net_instances()


def test_03_lifshitz_bound(net_instances):
    t0 = time.perf_counter()
    fails, worst = 0, math.inf
    for q, net, R, kappa, H in net_instances:
        rep = verify_lifshitz(H, RNetCertificate.build(q, net, R, kappa))
        fails += not rep.passed
        worst = min(worst, rep.lambda_min / rep.bound)
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 600
    report(3, ok, f"{len(net_instances)} instances, {fails} failures, min lambda_min/bound = {worst:.1f}, {dt:.1f} s")
    assert ok


def test_04_neumann_decay(net_instances):
    gen = np.random.default_rng(4)
    violations, entries, spot = 0, 0, 0
    for q, net, R, kappa, H in net_instances:
        lam = principal_lower_bound(kappa, 3, R) / 2
        rep = neumann_decay_check(H, lam, R, kappa)
        violations += len(rep.violations)
        entries += rep.checked_entries
        # independent route: solve a few columns exactly and compare with the bound
        P, r = neumann_constants(kappa, R, float(H.potential.max()))
        cols = gen.choice(H.dim, size=4, replace=False)
        block = Resolvent(H, lam).columns(cols)
        sites = H.region.sites_array()
        for j, b in enumerate(cols):
            bound = P * np.exp(-r * np.abs(sites - sites[b]).sum(axis=1))
            spot += int(np.sum(np.abs(block[:, j]) > bound))
    ok = violations == 0 and spot == 0
    report(4, ok, f"{entries} entries checked, {violations} violations; {spot} violations in exact spot columns")
    assert ok


def _random_atomic_law(gen):
    k = int(gen.integers(2, 7))
    vals = gen.uniform(0.0, 2.0, k)
    if gen.random() < 0.3:
        vals[0] = 0.0
    w = gen.uniform(0.01, 1.0, k)
    return SiteDistribution(atoms=tuple(zip(vals.tolist(), (w / w.sum()).tolist())))


def _regime_law(gen, i):
    M = float([1.0, 1.5, 2.0, 4.0][i % 4])
    s = float(10 ** gen.uniform(-14, -9))
    if i % 3 == 0:
        return SiteDistribution(atoms=((0.0, 1 - s), (M, s))), M
    if i % 3 == 1:
        c = float(gen.uniform(0.2, 0.8)) * M
        return SiteDistribution(atoms=((c, 1 - 2 * s), (0.0, s), (M, s))), M
    c = float(gen.uniform(0.0, 0.5)) * M
    return SiteDistribution(atoms=((c, 1 - s),), pieces=((c, M, s),)), M


def test_05_bernoulli_decompositions():
    gen = np.random.default_rng(55)
    worst_tv, built, iota_fail, eligible = 0.0, 0, 0, 0
    for _ in range(200):
        law = _random_atomic_law(gen)
        for k in range(1, 100):
            try:
                dec = bernoulli_decompose(law, k / 100)
            except GapFailure:
                continue
            built += 1
            worst_tv = max(worst_tv, verify_decomposition(dec, law, grid=200).tv)
        s2 = variance_certificate(law)
        if s2 >= 1e-4 and law.support[1] <= 2.0:
            eligible += 1
            cert = decompose_with_certificate(law, 2.0, s2)
            iota_fail += not cert.iota > 0
    regime_fail = 0
    for i in range(20):
        law, M = _regime_law(gen, i)
        s2 = variance_certificate(law)
        assert in_paper_regime(M, s2)
        regime_fail += not decompose_with_certificate(law, M, s2).ok
    ok = worst_tv <= 1e-12 and iota_fail == 0 and regime_fail == 0
    report(
        5,
        ok,
        f"{built} decompositions, max TV = {worst_tv:.1e} (<= 1e-12); iota > 0 on {eligible - iota_fail}/{eligible} laws; "
        f"{20 - regime_fail}/20 regime certificates meet both bounds",
    )
    assert ok


def _random_witnessed_family(gen, N):
    sizes = gen.integers(1, N, size=int(gen.integers(2, 40)))
    sets = {int(sum(1 << int(e) for e in gen.choice(N, size=s, replace=False))) for s in sizes}
    fam = SpernerFamily(N, tuple(sorted(sets)))
    kappa = sperner_kappa(fam)
    return SpernerFamily(N, fam.members, dict(zip(fam.members, maximal_witnesses(fam)))), kappa


def test_06_sperner_probability():
    t0 = time.perf_counter()
    gen = np.random.default_rng(66)
    C = 8.0
    cases = [(slice_family(N, k), 1.0) for N in (4, 8, 12, 16, 20) for k in range(0, N + 1, max(1, N // 4))]
    while len(cases) < 200:
        fam, kappa = _random_witnessed_family(gen, int(gen.integers(3, 21)))
        if kappa > 0:
            cases.append((fam, kappa))
    fails, need = 0, 0.0
    for fam, kappa in cases:
        assert verify_kappa_sperner(fam, kappa)
        ens = BernoulliEnsemble(gen.uniform(0.2, 0.8, fam.N))
        prob = family_probability(fam, ens)
        fails += prob > sperner_bound(ens.beta, kappa, fam.N, C)
        need = max(need, prob / sperner_bound(ens.beta, kappa, fam.N, 1.0))
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 300
    report(6, ok, f"{len(cases)} families, {fails} exceed C = 8; minimal sufficient C = {need:.4f}; {dt:.1f} s")
    assert ok


def test_07_cone_descent():
    attempts, failures, pairs = 0, 0, 0
    for L in (6, 8):
        rec = run(ExperimentConfig("cone-check", {"field": "bernoulli", "L": L, "pairs": 50, "k_max": 4}, seed=7), write=False)
        assert rec.scalars["K"] == 13.0
        attempts += rec.scalars["attempts"]
        failures += rec.scalars["failures"]
        pairs += rec.scalars["pairs"]
    ok = failures == 0 and pairs == 100
    report(7, ok, f"{pairs} eigenpairs, {attempts} descents (all apexes, axes, signs, k <= 4, K = 13), {failures} failures")
    assert ok


def test_08_rank_one_push():
    gen = np.random.default_rng(88)
    bad_hyp, not_pushed = 0, 0
    for _ in range(10_000):
        n = int(gen.integers(2, 51))
        A, r, k = random_push_instance(gen, n)
        for eta in (1.0, 2.0, 10.0):
            rep = eigen_push_check(A, r, k, eta=eta)
            bad_hyp += not rep.hypotheses_ok
            not_pushed += rep.hypotheses_ok and not rep.pushed
    ok = bad_hyp == 0 and not_pushed == 0
    report(8, ok, f"10000 instances x 3 eta: {not_pushed} trace-inequality failures, {bad_hyp} hypothesis misses")
    assert ok


def test_09_annulus_classifier():
    gen = np.random.default_rng(99)
    atoms = np.array([-2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0])
    mismatches, positives = 0, 0
    for _ in range(10_000):
        n = int(gen.integers(1, 10))
        vals = np.where(gen.random(n) < 0.5, gen.choice(atoms, n), gen.uniform(-3, 3, n))
        eigs = np.sort(vals)[::-1]
        s = [(0.1, 1.0), (0.5, 1.0), (0.1, 0.5)][int(gen.integers(0, 3))]
        a, b = annulus_predicate(eigs, 0.0, *s), annulus_union(eigs, 0.0, *s)
        mismatches += a != b
        positives += b
    ok = mismatches == 0
    report(9, ok, f"10000 configurations ({positives} in the union), {mismatches} mismatches")
    assert ok


def test_10_feynman_hellmann():
    gen = np.random.default_rng(10)
    q = Cube((0, 0, 0), 4)
    worst, nodes, skipped = 0.0, 0, 0
    for _ in range(100):
        H0, H1 = assemble(q, gen.random(q.size)), assemble(q, gen.random(q.size))
        k = int(gen.integers(1, q.size + 1))
        try:
            rep = fh_path(H0, H1, k, steps=5)
        except CrossingError:
            skipped += 1
            continue
        nodes += len(rep.rel_err)
        worst = max(worst, rep.max_rel_err)
    ok = worst <= 1e-4 and nodes > 0
    report(10, ok, f"{nodes} interior nodes on {100 - skipped} paths ({skipped} with crossings skipped), max rel err {worst:.1e} (<= 1e-4)")
    assert ok


def _non_increasing(rows) -> bool:
    for a, b in zip(rows, rows[1:]):
        # rows: [L, trials, hits, p_hat, ci_lo, ci_hi, ...]
        if b[3] > a[3] and b[4] > a[5]:
            return False
    return True


def test_11_wegner_trend():
    t0 = time.perf_counter()
    fields = ("bernoulli", "checkerboard", "interface")
    ok, parts = True, []
    for f in fields:
        cfg = ExperimentConfig("wegner-mc", {"field": f, "L": [6, 8, 10, 12], "trials": 500, "Ebar": 0.05}, seed=11)
        rows = run(cfg, write=False).tables["wegner_mc"][1]
        trend = _non_increasing(rows)
        ok &= trend and all(r[1] >= 500 for r in rows)
        parts.append(f"{f}: p_hat {[r[3] for r in rows]}, min lambda_min {min(r[6] for r in rows):.3f}")
    dt = time.perf_counter() - t0
    ok &= dt < 3600
    report(11, ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def test_12_dynamical_probe():
    means = {}
    for L in (10, 12):
        rec = run(ExperimentConfig("dynloc", {"field": "bernoulli", "L": L, "E0": 0.1, "b": 1.0, "s": 0.1, "realizations": 50}, seed=12), write=False)
        means[L] = rec.scalars["mean_moment"]
    a, b = means[10], means[12]
    change = 0.0 if a == b == 0 else abs(b - a) / max(abs(a), 1e-300)
    ok = all(math.isfinite(v) for v in means.values()) and change < 0.25
    report(12, ok, f"mean sup-moment L=10: {a:.4g}, L=12: {b:.4g}, relative change {change:.3f} (< 0.25)")
    assert ok


def test_13_msa_schedule():
    ok, parts = True, []
    for eps in (Fraction(1, 60), Fraction(1, 120)):
        e = float(eps)
        sched = plan_schedule(2**10, eps, 0.01, 0.02, count=10, m0=1.0, kappa=1.0)
        fp = final_params(1.0, e, 1.0, 0.02, sched.L)
        kappa_err = abs(fp.kappa_star - (1.0 - 49 * e) / (1 - 10 * e))
        checks = {
            "floor identity": sched.floor_identity_ok and len(sched.L) == 10,
            "m_star > 0": sched.m_star > 0,
            "eps_star": fp.eps_star == 0.75 * e,
            "kappa_star": kappa_err <= 1e-12,
        }
        ok &= all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        parts.append(f"eps={eps}: m_star = {sched.m_star:.3f}, |kappa err| = {kappa_err:.1e}, failed: {failed or 'none'}")
    report(13, ok, "; ".join(parts))
    assert ok


def test_14_combine():
    t0 = time.perf_counter()
    rec = run(ExperimentConfig("combine", {"L": 16, "Lk": 8, "potential": 1.0, "Ebar": 0.1}), write=False)
    s = rec.scalars
    ok = s["hypotheses_met"] and s["subcube_bounds_hold"] and s["violations"] == 0 and s["checked_entries"] == 35937**2
    report(
        14,
        ok,
        f"{s['subcubes']} subcubes, {s['checked_entries']} entries, {s['violations']} violations, "
        f"worst log-margin {s['worst_log_margin']:.2f}, {time.perf_counter() - t0:.0f} s",
    )
    assert ok
