"""Two-sample and pointwise metrics and the benchmark experiment protocol."""
from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import gaussian_kde

from . import kernels
from .benchmark import BenchmarkConfig, generate_benchmark, oracle_counterfactual, oracle_interventional
from .errors import DimensionMismatch, EmptySampleSet, LengthMismatch, ValidationError
from .scmodel import FitConfig, counterfactual, fit, sample_interventional, sample_observational

METHODS = ("pfd-bdcm", "pfd-dcm", "bdcm", "dcm")


def _as_samples(A, name):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise DimensionMismatch(f"{name} must be (n, d)")
    if A.shape[0] == 0:
        raise EmptySampleSet(f"{name} is empty")
    return np.ascontiguousarray(A)


def median_heuristic(A, B) -> float:
    """Median pairwise Euclidean distance over the pooled sample (1.0 if degenerate)."""
    Z = np.concatenate([_as_samples(A, "A"), _as_samples(B, "B")])
    if Z.shape[0] < 2:
        return 1.0
    h = float(np.median(pdist(Z)))
    return h if h > 0 else 1.0


def mmd2(A, B, bandwidth="median") -> float:
    """Biased (V-statistic) squared MMD with a Gaussian kernel.

    ``k(x, y) = exp(-|x - y|^2 / (2 h^2))`` where ``h`` is ``bandwidth`` or
    the pooled median pairwise distance when ``bandwidth="median"``.
    """
    A = _as_samples(A, "A")
    B = _as_samples(B, "B")
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"sample dims differ: {A.shape[1]} vs {B.shape[1]}")
    h = median_heuristic(A, B) if bandwidth in ("median", "median-heuristic") else float(bandwidth)
    if not h > 0:
        raise ValidationError("bandwidth must be positive")
    gamma = 0.5 / (h * h)
    n, m = A.shape[0], B.shape[0]
    kxx = kernels.rbf_kernel_sum(A, A, gamma) / (n * n)
    kyy = kernels.rbf_kernel_sum(B, B, gamma) / (m * m)
    kxy = kernels.rbf_kernel_sum(A, B, gamma) / (n * m)
    return max(0.0, float(kxx + kyy - 2.0 * kxy))


def mse(pred, truth) -> float:
    """Mean squared deviation over units and coordinates.

    Accepts arrays or node -> rows mappings (nodes of ``truth`` are used).
    """
    if isinstance(truth, dict):
        missing = [k for k in truth if k not in pred]
        if missing:
            raise LengthMismatch(f"prediction lacks nodes {missing}")
        p = np.concatenate([np.asarray(pred[k], dtype=np.float64).reshape(len(truth[k]), -1) for k in truth], axis=1)
        t = np.concatenate([np.asarray(truth[k], dtype=np.float64).reshape(len(truth[k]), -1) for k in truth], axis=1)
    else:
        p = np.asarray(pred, dtype=np.float64)
        t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch(f"shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise EmptySampleSet("nothing to compare")
    return float(np.mean((p - t) ** 2))


# -- experiment protocol -----------------------------------------------------


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    hyper: FitConfig = field(default_factory=FitConfig)
    methods: tuple = ("pfd-bdcm", "pfd-dcm")
    n_query: int = 1000
    outcomes: tuple | None = None  # default: observed sink nodes
    causes: tuple | None = None  # default: observed non-root parents of the outcomes
    density_points: int = 128

    def validate(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ValidationError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
        if self.n_query < 2:
            raise ValidationError("n_query must be >= 2")
        self.hyper.validate()

    def to_dict(self):
        d = asdict(self)
        d["hyper"] = self.hyper.to_dict()
        d["methods"] = list(self.methods)
        return d


def _targets(graph, cfg):
    obs = set(graph.observed_ids())
    outcomes = cfg.outcomes or tuple(k for k in graph.observed_ids() if not graph.children(k))
    if cfg.causes:
        causes = tuple(cfg.causes)
    else:
        causes = tuple(sorted({p for y in outcomes for p in graph.parents(y)
                               if p in obs and graph.parents(p) and p not in outcomes}))
    return tuple(outcomes), causes


def _method_graph(graph, method):
    if method.startswith("pfd-"):
        return graph
    coef = [s.id for s in graph.nodes if s.kind == "functional-coefficient"]
    return graph.with_hidden(coef) if coef else graph


def _run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    ds, scm = generate_benchmark(cfg.benchmark, seed)
    graph = ds.graph
    outcomes, causes = _targets(graph, cfg)
    units = ds.n * ds.J
    # interventional query: every cause at its data mean + 1 sd
    gamma = {c: ds.node_rows(c).mean(0) + ds.node_rows(c).std(0) for c in causes}
    qseed = int(np.random.SeedSequence([seed, 0x7175]).generate_state(1)[0])
    t0 = time.perf_counter()
    oracle_obs = oracle_interventional(scm, {}, cfg.n_query, qseed)
    oracle_int = oracle_interventional(scm, gamma, cfg.n_query, qseed + 1)
    # counterfactual query: every cause shifted by +1 from its factual value
    cols = ds.columns
    cf_do = {c: ds.values[:, :, cols[c]] + 1.0 for c in causes}
    oracle_cf = oracle_counterfactual(scm, ds, None, cf_do)
    oracle_time = time.perf_counter() - t0

    rows, timings, samples = [], [], {"oracle": oracle_int}
    for method in cfg.methods:
        g = _method_graph(graph, method)
        t = time.perf_counter()
        model = fit(ds, g, method, cfg.hyper, seed=seed)
        timings.append((method, "fit", time.perf_counter() - t))

        t = time.perf_counter()
        obs = sample_observational(model, cfg.n_query, qseed)
        timings.append((method, "obs", time.perf_counter() - t))
        t = time.perf_counter()
        inter = sample_interventional(model, gamma, cfg.n_query, qseed + 1)
        timings.append((method, "int", time.perf_counter() - t))
        samples[method] = inter
        t = time.perf_counter()
        factual = {k: ds.node_rows(k) for k in g.observed_ids()}
        cf = counterfactual(model, factual, {c: v.reshape(units, -1) for c, v in cf_do.items()})
        timings.append((method, "cf", time.perf_counter() - t))

        per = {"obs_mmd2": [], "int_mmd2": [], "cf_mse": []}
        for y in outcomes:
            vals = {
                "obs_mmd2": mmd2(obs[y], oracle_obs[y]),
                "int_mmd2": mmd2(inter[y], oracle_int[y]),
                "cf_mse": mse(cf[y], oracle_cf[y]),
            }
            for metric, v in vals.items():
                per[metric].append(v)
                rows.append({"seed": seed, "method": method, "metric": f"{metric}[X{y}]", "value": v})
        for metric, vs in per.items():
            rows.append({"seed": seed, "method": method, "metric": metric, "value": float(np.mean(vs))})
    timings.append(("oracle", "simulate", oracle_time))
    return {"rows": rows, "timings": [{"seed": seed, "method": m, "phase": p, "seconds": s} for m, p, s in timings],
            "samples": samples, "outcomes": outcomes, "causes": causes}


def _summary(rows):
    out = {}
    keys = sorted({(r["metric"], r["method"]) for r in rows})
    for metric, method in keys:
        vals = np.array([r["value"] for r in rows if r["metric"] == metric and r["method"] == method])
        out.setdefault(metric, {})[method] = {
            "mean": float(vals.mean()),
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "n": int(vals.size),
        }
    return out


def _densities(samples, outcomes, points):
    grids = {}
    for y in outcomes:
        pooled = np.concatenate([np.asarray(s[y])[:, 0] for s in samples.values()])
        lo, hi = pooled.min(), pooled.max()
        pad = 0.1 * (hi - lo + 1e-9)
        x = np.linspace(lo - pad, hi + pad, points)
        cols = {"x": x}
        for name, s in samples.items():
            v = np.asarray(s[y])[:, 0]
            cols[name] = gaussian_kde(v)(x) if np.ptp(v) > 0 else np.zeros_like(x)
        grids[y] = cols
    return grids


@dataclass
class ExperimentReport:
    config: dict
    seeds: list
    methods: list
    outcomes: list
    causes: list
    rows: list  # raw per-seed metric values
    timings: list
    summary: dict
    densities: dict = field(default_factory=dict)  # outcome -> column -> values (first seed)

    def to_dict(self, with_timings=True) -> dict:
        d = {
            "config": self.config,
            "seeds": self.seeds,
            "methods": self.methods,
            "outcomes": self.outcomes,
            "causes": self.causes,
            "summary": self.summary,
            "rows": self.rows,
            "substreams": {"dataset": "[seed, 'data']", "scm": "[seed, 'scm']",
                           "training": "[seed, 2, node]", "init": "[seed, 1, node]",
                           "query": "[seed, 0x7175]"},
        }
        if with_timings:
            d["timings"] = self.timings
        return d

    def write(self, directory) -> dict:
        os.makedirs(directory, exist_ok=True)
        paths = {"json": os.path.join(directory, "report.json"),
                 "metrics": os.path.join(directory, "metrics.csv"),
                 "timings": os.path.join(directory, "timings.csv")}
        with open(paths["json"], "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
        with open(paths["metrics"], "w", newline="") as fh:
            w = csv.DictWriter(fh, ["seed", "method", "metric", "value"], lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({**r, "value": repr(float(r["value"]))})
        with open(paths["timings"], "w", newline="") as fh:
            w = csv.DictWriter(fh, ["seed", "method", "phase", "seconds"], lineterminator="\n")
            w.writeheader()
            w.writerows(self.timings)
        for y, cols in self.densities.items():
            p = os.path.join(directory, f"density_X{y}.csv")
            names = list(cols)
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(names)
                for i in range(len(cols["x"])):
                    w.writerow([repr(float(cols[n][i])) for n in names])
            paths[f"density_X{y}"] = p
        return paths


def run_experiment(config: ExperimentConfig, seeds, workers: int = 1) -> ExperimentReport:
    """Generate, fit and score every method for each seed.

    Seeds are independent and may run on ``workers`` threads; results do
    not depend on the worker count.
    """
    config.validate()
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValidationError("need at least one seed")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda s: _run_seed(config, s), seeds))
    else:
        runs = [_run_seed(config, s) for s in seeds]
    rows = [r for run in runs for r in run["rows"]]
    timings = [t for run in runs for t in run["timings"]]
    first = runs[0]
    return ExperimentReport(
        config=config.to_dict(), seeds=seeds, methods=list(config.methods),
        outcomes=list(first["outcomes"]), causes=list(first["causes"]),
        rows=rows, timings=timings, summary=_summary(rows),
        densities=_densities(first["samples"], first["outcomes"], config.density_points),
    )
