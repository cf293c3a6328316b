"""Experiment configuration, dispatch, persistence and sweeps."""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import AndersonLabError, ConfigError, DomainError, LemmaViolation, NumericalError
from .rng import derive_seed

SCHEMA_VERSION = 1
OUT_ENV = "ANDERSON_LAB_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FINDING = 0, 2, 3, 4

REQUIRED = object()


# ---------------------------------------------------------------------------
# field presets


def field_from_spec(spec):
    """A PotentialField from a preset name or a serialised field."""
    from .ensembles import PotentialField, SiteDistribution

    if isinstance(spec, dict):
        return PotentialField.from_dict(spec)
    ber = SiteDistribution.bernoulli(0.5)
    unif = SiteDistribution.uniform(0.0, 1.0)
    presets = {
        "bernoulli": lambda: PotentialField.iid(ber),
        "uniform": lambda: PotentialField.iid(unif),
        "checkerboard": lambda: PotentialField("checkerboard", {"even": ber, "odd": unif}, 1.0, 1 / 12),
        "interface": lambda: PotentialField("interface", {"left": ber, "right": unif}, 1.0, 1 / 12),
    }
    if spec not in presets:
        raise ConfigError(f"unknown field preset {spec!r}; choose from {sorted(presets)} or give a field dict")
    return presets[spec]()


def _int_at_least(x, lo: int) -> int:
    ok = isinstance(x, (int, float, np.integer)) and not isinstance(x, bool) and float(x).is_integer() and x >= lo
    if not ok:
        raise ConfigError(f"expected an integer >= {lo}, got {x!r}")
    return int(x)


def _pos_int(x) -> int:
    return _int_at_least(x, 1)


def _nonneg_int(x) -> int:
    return _int_at_least(x, 0)


def _real(x) -> float:
    try:
        v = float(x)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {x!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {x!r}")
    return v


def _pos_real(x) -> float:
    v = _real(x)
    if v <= 0:
        raise ConfigError(f"expected a positive number, got {x!r}")
    return v


def _int_list(x) -> list[int]:
    if isinstance(x, (int, float)):
        x = [x]
    return [_pos_int(v) for v in x]


def _any(x):
    return x


SCHEMAS: dict[str, dict[str, tuple[Callable, Any]]] = {
    "spectrum": {"L": (_nonneg_int, REQUIRED), "potential": (_real, 0.0), "field": (_any, None)},
    "lifshitz": {
        "L": (_pos_int, REQUIRED),
        "R": (_pos_int, REQUIRED),
        "kappa": (_pos_real, 1.0),
        "background": (_real, 0.0),
        "neumann": (bool, True),
    },
    "wegner-mc": {
        "field": (_any, "bernoulli"),
        "L": (_int_list, REQUIRED),
        "Ebar": (_real, 0.05),
        "threshold_exponent": (_real, 0.5),
        "trials": (_pos_int, REQUIRED),
    },
    "dynloc": {
        "field": (_any, "bernoulli"),
        "L": (_pos_int, REQUIRED),
        "E0": (_pos_real, 0.1),
        "b": (_real, 1.0),
        "s": (_pos_real, 0.1),
        "realizations": (_pos_int, 10),
        "t_max": (_pos_real, 1e3),
        "n_uniform": (_pos_int, 10_000),
        "n_random": (_nonneg_int, 1_000),
    },
    "decompose": {"distribution": (_any, REQUIRED), "M": (_pos_real, None), "sigma2": (_pos_real, None), "grid": (_pos_int, 99)},
    "sperner": {"N": (_pos_int, REQUIRED), "members": (_any, None), "slice": (_nonneg_int, None), "p": (_any, 0.5), "C": (_pos_real, 8.0)},
    "cone-check": {
        "field": (_any, "bernoulli"),
        "L": (_pos_int, REQUIRED),
        "k_max": (_pos_int, 4),
        "K": (_real, None),
        "pairs": (_pos_int, 10),
        "realizations": (_pos_int, 1),
    },
    "msa-plan": {
        "L0": (_pos_int, 2**10),
        "epsilon": (_pos_real, REQUIRED),
        "delta": (_pos_real, REQUIRED),
        "delta_prime": (_pos_real, REQUIRED),
        "count": (_pos_int, 10),
        "m0": (_pos_real, 1.0),
        "kappa": (_pos_real, None),
    },
    "combine": {
        "L": (_pos_int, 16),
        "Lk": (_pos_int, 8),
        "potential": (_real, 1.0),
        "Ebar": (_real, 0.1),
        "ell": (_int_list, None),
        "m": (_pos_real, 0.75),
        "nu": (_pos_real, 0.5),
        "nu_prime": (_real, 0.0),
    },
}
KINDS = tuple(SCHEMAS)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def validated(self) -> ExperimentConfig:
        """Fill defaults and coerce types; raises ConfigError before any computation."""
        if self.kind not in SCHEMAS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {list(KINDS)}")
        schema = SCHEMAS[self.kind]
        unknown = set(self.params) - set(schema)
        if unknown:
            raise ConfigError(f"{self.kind}: unknown parameters {sorted(unknown)}")
        out = {}
        for name, (conv, default) in schema.items():
            if name in self.params and self.params[name] is not None:
                out[name] = conv(self.params[name])
            elif default is REQUIRED:
                raise ConfigError(f"{self.kind}: missing required parameter {name!r}")
            else:
                out[name] = default
        _nonneg_int(self.seed)
        if "field" in out and out["field"] is not None:
            try:
                field_from_spec(out["field"])
            except DomainError as exc:
                raise ConfigError(str(exc)) from None
        return replace(self, params=out, seed=int(self.seed))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict, seed: int | None = None, out: str | None = None) -> ExperimentConfig:
        if not isinstance(d, dict) or "kind" not in d:
            raise ConfigError("config must be a JSON object with a 'kind' field")
        s = d.get("seed", 0) if seed is None else seed
        return cls(d["kind"], dict(d.get("params", {})), s, out or d.get("out"))

    @classmethod
    def load(cls, path, **kw) -> ExperimentConfig:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, **kw)


@dataclass
class ResultRecord:
    config: dict
    scalars: dict
    tables: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    version: str = __version__
    schema_version: int = SCHEMA_VERSION
    status: str = "ok"
    error: str | None = None
    exit_code: int = EXIT_OK

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "version": self.version,
            "config": self.config,
            "status": self.status,
            "error": self.error,
            "exit_code": self.exit_code,
            "wall_clock": self.wall_clock,
            "scalars": self.scalars,
            "tables": sorted(self.tables),
        }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else str(v)
    return x


# ---------------------------------------------------------------------------
# experiments: each returns (scalars, tables, finding); tables map name -> (header, rows),
# finding is a message when a lemma's conclusion failed (exit code 4)


def _cube(L: int):
    from .lattice import Cube

    return Cube((0, 0, 0), L)


def _exp_spectrum(p, seed):
    from .ensembles import sample_potential
    from .operators import assemble, eigenvalues, free_box_spectrum

    cube = _cube(p["L"])
    if p["field"] is not None:
        V = sample_potential(field_from_spec(p["field"]), cube, seed)
    else:
        V = np.full(cube.size, p["potential"])
    H = assemble(cube, V)
    ev = eigenvalues(H)
    scalars = {"dim": H.dim, "lambda_min": float(ev[-1]), "lambda_max": float(ev[0])}
    if p["field"] is None:
        scalars["max_abs_dev_from_tensor"] = float(np.abs(ev - (free_box_spectrum(cube.shape) + p["potential"])).max())
    return scalars, {"eigenvalues": (["index", "eigenvalue"], [[i + 1, float(e)] for i, e in enumerate(ev)])}, None


def _exp_lifshitz(p, seed):
    from .initial_scale import RNetCertificate, neumann_decay_check, principal_lower_bound, spaced_net, verify_lifshitz
    from .operators import assemble

    cube = _cube(p["L"])
    R, kappa = p["R"], p["kappa"]
    if p["background"] < 0:
        raise ConfigError("background potential must be non-negative")
    gen = np.random.default_rng(derive_seed(seed, 0x11F))
    offset = tuple(int(v) for v in gen.integers(0, 2 * R, size=3))
    net = spaced_net(cube, R, offset)
    V = np.full(cube.size, p["background"])
    for s in net:
        V[cube.index_of(s)] = max(kappa, p["background"])
    H = assemble(cube, V)
    cert = RNetCertificate.build(cube, net, R, kappa)
    rep = verify_lifshitz(H, cert)
    scalars = {"lambda_min": rep.lambda_min, "bound": rep.bound, "passed": rep.passed, "net_size": len(net)}
    if p["neumann"]:
        lam = principal_lower_bound(kappa, 3, R) / 2
        nr = neumann_decay_check(H, lam, R, kappa)
        scalars.update(neumann_violations=len(nr.violations), neumann_checked=nr.checked_entries, neumann_rate=nr.rate)
    finding = None
    if not rep.passed:
        finding = f"lambda_min {rep.lambda_min:.6g} below {rep.bound:.6g}"
    elif scalars.get("neumann_violations"):
        finding = f"{scalars['neumann_violations']} Neumann bound violations"
    return scalars, {}, finding


def _exp_wegner(p, seed):
    from .wegner import wegner_mc

    fld = field_from_spec(p["field"])
    rows = []
    for L in p["L"]:
        thr = L ** p["threshold_exponent"]
        est = wegner_mc(fld, _cube(L), p["Ebar"], thr, p["trials"], derive_seed(seed, L))
        rows.append([L, est.trials, est.hits, est.p_hat, est.ci[0], est.ci[1], *est.lambda_min])
    header = ["L", "trials", "hits", "p_hat", "ci_lo", "ci_hi", "lambda_min_min", "lambda_min_median", "lambda_min_max"]
    scalars = {"p_hat": {str(r[0]): r[3] for r in rows}}
    return scalars, {"wegner_mc": (header, rows)}, None


def _exp_dynloc(p, seed):
    from .ensembles import sample_potential
    from .operators import assemble, default_time_grid, dynloc_moment

    fld = field_from_spec(p["field"])
    cube = _cube(p["L"])
    grid = default_time_grid(seed, p["t_max"], p["n_uniform"], p["n_random"])
    rows = []
    for r in range(p["realizations"]):
        H = assemble(cube, sample_potential(fld, cube, derive_seed(seed, r)))
        rows.append([r, dynloc_moment(H, p["E0"], p["b"], p["s"], grid)])
    vals = np.array([row[1] for row in rows])
    return {"mean_moment": float(vals.mean()), "max_moment": float(vals.max())}, {"dynloc": (["realization", "moment"], rows)}, None


def _exp_decompose(p, seed):
    from .ensembles import SiteDistribution, decompose_with_certificate, variance_certificate, verify_decomposition

    try:
        dist = SiteDistribution.from_dict(p["distribution"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad distribution: {exc}") from None
    M = dist.support[1] if p["M"] is None else p["M"]
    s2 = variance_certificate(dist) if p["sigma2"] is None else p["sigma2"]
    cert = decompose_with_certificate(dist, M, s2, p["grid"])
    chk = verify_decomposition(cert.decomposition, dist)
    scalars = {
        "p": cert.p,
        "iota": cert.iota,
        "tv": chk.tv,
        "in_regime": cert.regime,
        "p_margin_required": cert.p_margin_required,
        "iota_required": cert.iota_required,
        "failed": list(cert.failed),
    }
    return scalars, {}, None


def _exp_sperner(p, seed):
    from .combinatorics import BernoulliEnsemble, SpernerFamily, family_probability, slice_family, sperner_bound, sperner_kappa

    N = p["N"]
    if (p["members"] is None) == (p["slice"] is None):
        raise ConfigError("give exactly one of 'members' or 'slice'")
    fam = slice_family(N, p["slice"]) if p["slice"] is not None else SpernerFamily.from_sets(N, p["members"])
    probs = [p["p"]] * N if isinstance(p["p"], (int, float)) else list(p["p"])
    ens = BernoulliEnsemble(probs)
    kappa = sperner_kappa(fam)
    prob = family_probability(fam, ens)
    scalars = {"kappa": kappa, "probability": prob, "members": len(fam.members), "beta": ens.beta}
    if kappa > 0:
        bound = sperner_bound(ens.beta, kappa, N, p["C"])
        scalars.update(bound=bound, bound_holds=prob <= bound, sufficient_C=prob / sperner_bound(ens.beta, kappa, N, 1.0))
    return scalars, {}, None


def _exp_cone(p, seed):
    from .ensembles import sample_potential
    from .operators import assemble, eigendecompose, extremal_eigs
    from .wegner import cone_descent_all

    fld = field_from_spec(p["field"])
    cube = _cube(p["L"])
    K = fld.M + 12 if p["K"] is None else p["K"]
    rows = []
    for r in range(p["realizations"]):
        H = assemble(cube, sample_potential(fld, cube, derive_seed(seed, r)))
        if H.dim <= 2500:
            eig = eigendecompose(H)
            gen = np.random.default_rng(derive_seed(seed, r, 1))
            picks = gen.choice(H.dim, size=min(p["pairs"], H.dim), replace=False)
            vecs = [(float(eig.values[i]), eig.vectors[:, i]) for i in picks]
        else:
            half = max(1, p["pairs"] // 2)
            lo, hi = extremal_eigs(H, half, "low"), extremal_eigs(H, p["pairs"] - half or 1, "high")
            vecs = [(float(v), lo.vectors[:, i]) for i, v in enumerate(lo.values)]
            vecs += [(float(v), hi.vectors[:, i]) for i, v in enumerate(hi.values)]
        for E, u in vecs:
            # the descent is applied to H - E, whose potential is bounded by M + 12
            att, fail = cone_descent_all(u, K, cube, p["k_max"])
            rows.append([r, E, att, fail])
    failures = sum(row[3] for row in rows)
    scalars = {"pairs": len(rows), "attempts": sum(row[2] for row in rows), "failures": failures, "K": K}
    tables = {"cone": (["realization", "eigenvalue", "attempts", "failures"], rows)}
    return scalars, tables, (f"{failures} cone-descent failures" if failures else None)


def _exp_msa(p, seed):
    from .msa import plan_schedule

    sched = plan_schedule(p["L0"], p["epsilon"], p["delta"], p["delta_prime"], p["count"], p["m0"], p["kappa"])
    return sched.to_dict(), {}, None


def _exp_combine(p, seed):
    from .msa import combine_resolvents, contained_dyadic_subcubes, subcube_report
    from .operators import assemble

    target = _cube(p["L"])
    ell = p["ell"] or [p["L"]] * 5 + [p["Lk"]] * 2
    subs = contained_dyadic_subcubes(target, p["Lk"])
    reps = [subcube_report(assemble(q, p["potential"]), p["Ebar"], ell[6], p["m"]) for q in subs]
    rep = combine_resolvents(assemble(target, p["potential"]), reps, ell, p["m"], p["Ebar"], p["nu"], p["nu_prime"])
    scalars = {
        "subcubes": len(subs),
        "subcube_bounds_hold": all(r.bound_holds for r in reps),
        "hypotheses_met": rep.hypotheses_met,
        "uncovered_sites": rep.uncovered_sites,
        "m_tilde": rep.m_tilde,
        "checked_entries": rep.checked_entries,
        "violations": rep.violations,
        "worst_log_margin": rep.worst_log_margin,
        "asymptotic_hypotheses_hold": rep.asymptotic_hypotheses_hold,
    }
    return scalars, {}, (f"{rep.violations} entries exceed the combined bound" if rep.violations else None)


EXPERIMENTS = {
    "spectrum": _exp_spectrum,
    "lifshitz": _exp_lifshitz,
    "wegner-mc": _exp_wegner,
    "dynloc": _exp_dynloc,
    "decompose": _exp_decompose,
    "sperner": _exp_sperner,
    "cone-check": _exp_cone,
    "msa-plan": _exp_msa,
    "combine": _exp_combine,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, DomainError)):
        return EXIT_CONFIG
    if isinstance(exc, LemmaViolation):
        return EXIT_FINDING
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    return EXIT_NUMERIC


def run(config: ExperimentConfig, threads: int | None = None, write: bool = True) -> ResultRecord:
    """Validate, dispatch and (optionally) persist one experiment.

    Errors from the library are captured in the record with their exit
    code; config errors are raised before anything runs.
    """
    cfg = config.validated()
    t0 = time.perf_counter()
    scalars, tables, status, err, code = {}, {}, "ok", None, EXIT_OK
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                scalars, tables, finding = EXPERIMENTS[cfg.kind](cfg.params, cfg.seed)
        else:
            scalars, tables, finding = EXPERIMENTS[cfg.kind](cfg.params, cfg.seed)
        if finding:
            status, err, code = "LemmaViolation", finding, EXIT_FINDING
    except AndersonLabError as exc:
        status, err, code = type(exc).__name__, str(exc), _exit_code(exc)
    rec = ResultRecord(
        config=_jsonable(cfg.to_dict()),
        scalars=_jsonable(scalars),
        tables={k: (h, _jsonable(r)) for k, (h, r) in tables.items()},
        wall_clock=time.perf_counter() - t0,
        status=status,
        error=err,
        exit_code=code,
    )
    if write:
        write_record(rec, cfg.out)
    return rec


def output_dir(out: str | None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or "anderson_lab_out")


def write_record(rec: ResultRecord, out: str | None = None, stem: str | None = None) -> Path:
    """<out>/<stem>.json plus one <stem>_<table>.csv per table."""
    d = output_dir(out)
    d.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{rec.config['kind']}_seed{rec.config['seed']}"
    path = d / f"{stem}.json"
    path.write_text(json.dumps(rec.to_json(), indent=2, sort_keys=True))
    for name, (header, rows) in rec.tables.items():
        with open(d / f"{stem}_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
            w.writerow(header)
            w.writerows(rows)
    return path


def _run_isolated(args) -> ResultRecord:
    cfg, threads = args
    try:
        return run(cfg, threads=threads, write=False)
    except AndersonLabError as exc:
        return ResultRecord(cfg.to_dict(), {}, status=type(exc).__name__, error=str(exc), exit_code=_exit_code(exc))


def sweep(configs, parallelism: int = 1, master_seed: int | None = None, threads: int | None = 1) -> list[ResultRecord]:
    """Run independent configs, in input order, isolating errors per config.

    With ``master_seed`` config i runs with seed derive_seed(master_seed, i);
    otherwise each config keeps its own seed, so a sweep of one equals run.
    """
    cfgs = list(configs)
    if master_seed is not None:
        cfgs = [replace(c, seed=derive_seed(master_seed, i)) for i, c in enumerate(cfgs)]
    jobs = [(c, threads) for c in cfgs]
    if parallelism <= 1:
        return [_run_isolated(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_isolated, jobs))
