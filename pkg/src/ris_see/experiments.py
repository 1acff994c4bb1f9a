"""Comparison schemes and parameter sweeps.

Every sweep point and seed draws one channel realization that all schemes
share, so scheme comparisons are paired.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .alg_perfect import InfeasibleStart, Options, PerfectFormulation, alternate
from .alg_robust import RobustFormulation
from .channel import EveErrorModel, link_rng, noise_normalized, sample_channels
from .conic import SolverError
from .scenario import (
    ScenarioConfig,
    bs_sweep_geometry,
    dbm_to_mw,
    eve_sweep_geometry,
    fairness_geometry,
    scenario_to_doc,
    without_ris,
)
from .validate import mc_outage

# scheme -> (robust, objective, with_ris, use_bti)
SCHEMES = {
    "perfect": (False, "maxmin_see", True, True),
    "imperfect": (True, "maxmin_see", True, True),
    "perfect_no_ris": (False, "maxmin_see", False, True),
    "imperfect_no_ris": (True, "maxmin_see", False, True),
    "sseem": (False, "sum_see", True, True),
    "sseem_imperfect": (True, "sum_see", True, True),
    "maxmin_sse": (False, "maxmin_sr", True, True),
    "imperfect_no_outage": (True, "maxmin_see", True, False),
}

OK_STATUSES = ("converged", "optimal")

RESULT_COLUMNS = ("scheme", "sweep_value", "seed", "min_see", "sum_see", "iters", "secs", "status",
                  "outage_max")


def _set_pb(cfg, v):
    return cfg.replace(p_max_mw=dbm_to_mw(v))


def _set_n(cfg, v):
    return cfg.replace(num_elements=int(v))


def _set_j(cfg, v):
    return eve_sweep_geometry(cfg.replace(num_eves=int(v)))


def _set_b(cfg, v):
    return bs_sweep_geometry(cfg.replace(num_bs=int(v)))


def _set_sigma(cfg, v):
    return cfg.replace(sigma_bar=float(v))


@dataclass(frozen=True)
class Experiment:
    name: str
    schemes: tuple
    values: tuple = (None,)
    apply: object = None
    prepare: object = None
    sweep_name: str = ""
    options: tuple = ()  # (field, value) pairs forced on every run


EXPERIMENTS = {
    # keep iterating past the stopping rule so every series shows its plateau
    "convergence": Experiment("convergence", ("perfect", "imperfect", "perfect_no_ris", "imperfect_no_ris"),
                              options=(("min_iters", 10),)),
    "power_sweep": Experiment(
        "power_sweep",
        ("perfect", "imperfect", "perfect_no_ris", "imperfect_no_ris", "sseem", "maxmin_sse"),
        (5, 10, 15, 20, 25, 30), _set_pb, sweep_name="pb_dbm"),
    "ris_elements": Experiment(
        "ris_elements",
        ("perfect", "imperfect", "perfect_no_ris", "imperfect_no_ris", "sseem", "maxmin_sse"),
        (2, 4, 6, 8, 10), _set_n, sweep_name="num_elements"),
    "num_eves": Experiment("num_eves", ("perfect", "imperfect"), (1, 2, 3), _set_j, sweep_name="num_eves"),
    "num_bs": Experiment("num_bs", ("perfect", "imperfect"), (1, 2, 3, 4), _set_b, sweep_name="num_bs"),
    "error_level": Experiment(
        "error_level", ("perfect", "imperfect", "imperfect_no_ris", "imperfect_no_outage"),
        (0.0, 0.01, 0.02, 0.05), _set_sigma, sweep_name="sigma_bar"),
    "fairness": Experiment("fairness", ("perfect", "imperfect", "sseem", "sseem_imperfect"),
                           prepare=fairness_geometry),
}


@dataclass
class RunResult:
    scheme: str
    sweep_value: object
    seed: int
    min_see: float
    sum_see: float
    iters: int
    secs: float
    status: str
    outage_max: float = float("nan")
    trace_csv: str = ""
    z: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES


def scheme_config(cfg: ScenarioConfig, scheme: str) -> ScenarioConfig:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}")
    return cfg if SCHEMES[scheme][2] else without_ris(cfg)


def run_scheme(scheme: str, cfg: ScenarioConfig, seed: int, opts: Options | None = None,
               sweep_value=None, outage_samples: int = 0) -> RunResult:
    """Run one scheme on the channel realization of ``seed``.

    Every link has its own random stream, so the no-RIS schemes see the
    same direct links as the full network.
    """
    robust, objective, with_ris, use_bti = SCHEMES.get(scheme, (None,) * 4)
    if robust is None:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}")
    base = dict(vars(opts)) if opts is not None else {}
    base.update(objective=objective, seed=seed)
    opts = Options(**base)
    run_cfg = cfg if with_ris else without_ris(cfg)
    ch = sample_channels(run_cfg, seed)
    chn = noise_normalized(ch, run_cfg)
    err = EveErrorModel.from_sigma_bar(chn, run_cfg.sigma_bar)
    if robust:
        form = RobustFormulation(chn, run_cfg, opts, err, use_bti=use_bti)
    else:
        form = PerfectFormulation(chn, run_cfg, opts)
    t0 = time.perf_counter()
    try:
        state, trace = alternate(form, opts)
    except InfeasibleStart:
        return RunResult(scheme, sweep_value, seed, float("nan"), float("nan"), 0,
                         time.perf_counter() - t0, "infeasible-start")
    except SolverError as exc:
        return RunResult(scheme, sweep_value, seed, float("nan"), float("nan"), 0,
                         time.perf_counter() - t0, f"solver-failure: {exc}")
    secs = time.perf_counter() - t0
    see = form.see(state)
    outage = float("nan")
    if robust and outage_samples:
        est = mc_outage(state, chn, err, run_cfg.rate_redundancy, outage_samples, link_rng(seed, "mc", 1))
        outage = est.max
    extra = ("psi", "bti_margin_min") if robust else ()
    return RunResult(scheme, sweep_value, seed, float(np.min(see)), float(np.sum(see)), trace.iterations,
                     secs, trace.status, outage, trace.to_csv(extra), [trace.z0, *trace.z.tolist()])


def parse_seeds(text: str) -> list:
    """``"3"`` -> [3]; ``"0..9"`` -> [0, ..., 9]; ``"1,4,7"`` -> [1, 4, 7]."""
    text = str(text).strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ValueError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(s) for s in text.split(",") if s.strip()]


def experiment_jobs(name: str, cfg: ScenarioConfig, seeds, schemes=None):
    """(scheme, sweep_value, cfg, seed) tuples in output order."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    exp = EXPERIMENTS[name]
    schemes = tuple(schemes) if schemes else exp.schemes
    for s in schemes:
        if s not in SCHEMES:
            raise ValueError(f"unknown scheme {s!r}; choose from {sorted(SCHEMES)}")
    if exp.prepare is not None:
        cfg = exp.prepare(cfg)
    jobs = []
    for value in exp.values:
        point = cfg if exp.apply is None else exp.apply(cfg, value)
        for seed in seeds:
            for s in schemes:
                jobs.append((s, value, point, seed))
    return jobs


def _run_job(job):
    scheme, value, cfg, seed, opts, samples = job
    return run_scheme(scheme, cfg, seed, opts, sweep_value=value, outage_samples=samples)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.10g}"
    return str(x)


def results_csv(results, timing: bool = True) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(RESULT_COLUMNS)
    for r in results:
        wr.writerow([r.scheme, _fmt(r.sweep_value), r.seed, _fmt(r.min_see), _fmt(r.sum_see), r.iters,
                     _fmt(r.secs) if timing else "", r.status, _fmt(r.outage_max)])
    return buf.getvalue()


def config_hash(cfg: ScenarioConfig) -> str:
    doc = json.dumps(scenario_to_doc(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(doc.encode()).hexdigest()


def run_experiment(name: str, cfg: ScenarioConfig, seeds, out_dir, schemes=None, opts: Options | None = None,
                   workers: int = 1, timing: bool = True, outage_samples: int = 10_000, log=None):
    """Run a sweep and write ``<name>.csv``, per-run traces and ``manifest.json``.

    Returns the list of :class:`RunResult` in output order.
    """
    out = Path(out_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    exp = EXPERIMENTS[name] if name in EXPERIMENTS else None
    if exp is not None and exp.options:
        opts = Options(**{**vars(opts or Options()), **dict(exp.options)})
    jobs = [(*j, opts, outage_samples) for j in experiment_jobs(name, cfg, seeds, schemes)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_job(job))
            if log:
                r = results[-1]
                log(f"{name} {r.scheme} value={_fmt(r.sweep_value)} seed={r.seed} "
                    f"min_see={_fmt(r.min_see)} iters={r.iters} status={r.status}")
    (out / f"{name}.csv").write_text(results_csv(results, timing))
    for r in results:
        if r.trace_csv:
            text = r.trace_csv if timing else _strip_secs(r.trace_csv)
            tag = "" if r.sweep_value is None else f"_{_fmt(r.sweep_value)}"
            (out / "traces" / f"{r.scheme}{tag}_seed{r.seed}.csv").write_text(text)
    manifest = {
        "experiment": name,
        "tool": "ris_see",
        "version": __version__,
        "config_hash": config_hash(cfg),
        "scenario": scenario_to_doc(cfg),
        "seeds": list(seeds),
        "schemes": list(schemes or exp.schemes),
        "sweep": {"name": exp.sweep_name, "values": [v for v in exp.values if v is not None]},
        "options": {k: v for k, v in vars(opts or Options()).items() if k not in ("seed", "objective")},
        "outage_samples": outage_samples,
        "rows": len(results),
        "ok_rows": sum(r.ok for r in results),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return results


def _strip_secs(text: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return text
    i = rows[0].index("secs")
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    for n, row in enumerate(rows):
        if n:
            row[i] = ""
        wr.writerow(row)
    return buf.getvalue()


def summarize(path) -> str:
    """Mean and standard deviation over seeds per (scheme, sweep_value)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    groups: dict = {}
    order = []
    for r in rows:
        key = (r["scheme"], r["sweep_value"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(r)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["scheme", "sweep_value", "n", "n_ok", "min_see_mean", "min_see_std", "sum_see_mean",
                 "sum_see_std"])
    for key in order:
        rs = groups[key]
        ok = [r for r in rs if r["status"] in OK_STATUSES]
        mins = np.array([float(r["min_see"]) for r in ok])
        sums = np.array([float(r["sum_see"]) for r in ok])

        def stat(a, f):
            return _fmt(float(f(a))) if a.size else "nan"

        wr.writerow([*key, len(rs), len(ok), stat(mins, np.mean), stat(mins, np.std), stat(sums, np.mean),
                     stat(sums, np.std)])
    return buf.getvalue()
