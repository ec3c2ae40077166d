"""Command-line entry point: ``generate``, ``fit``, ``query`` and ``evaluate``.

Every subcommand accepts ``--config file.json`` whose keys mirror the long
flag names (dashes as underscores); flags given on the command line win.
Exit codes: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys

import numpy as np

from .benchmark import BenchmarkConfig, generate_benchmark
from .data import load_dataset
from .errors import CausalDiffusionError, QueryParseError, ValidationError
from .eval import METHODS, ExperimentConfig, run_experiment
from .graph import CausalGraph
from .scmodel import (
    CausalDiffusionModel,
    FitConfig,
    counterfactual,
    fit,
    sample_interventional,
)

log = logging.getLogger("backdoor_diffusion")

OUT_ENV = "BACKDOOR_DIFFUSION_OUT"

FIT_KEYS = {f: f for f in FitConfig.__dataclass_fields__}
BENCH_KEYS = {"benchmark": "name", "n": "n", "J": "J", "noise_scale": "noise_scale",
              "n_grid": "n_grid", "n_basis": "n_basis"}


def default_out() -> str:
    return os.environ.get(OUT_ENV, ".")


# -- parsing helpers ----------------------------------------------------------

_DO_TOKEN = re.compile(r"^\s*[Xx]?(\d+)\s*=\s*(\S.*?)\s*$")


def parse_do(exprs) -> dict[int, np.ndarray]:
    """Parse ``"X1=0.5,X3=[1 2]"`` (possibly several strings) into node -> value."""
    out = {}
    for expr in exprs or []:
        for token in re.split(r",(?![^\[]*\])", expr):
            if not token.strip():
                raise QueryParseError(token, "empty intervention")
            m = _DO_TOKEN.match(token)
            if not m:
                raise QueryParseError(token.strip())
            raw = m.group(2)
            try:
                if raw.startswith("["):
                    if not raw.endswith("]"):
                        raise ValueError
                    val = np.array([float(x) for x in raw[1:-1].replace(",", " ").split()])
                else:
                    val = np.array(float(raw))
            except ValueError:
                raise QueryParseError(token.strip(), "bad intervention value") from None
            if not np.all(np.isfinite(val)):
                raise QueryParseError(token.strip(), "non-finite intervention value")
            out[int(m.group(1))] = val
    return out


def parse_int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    vals = []
    for part in str(text).split(","):
        part = part.strip()
        m = re.fullmatch(r"(-?\d+)-(-?\d+)", part)
        try:
            if m:
                vals.extend(range(int(m.group(1)), int(m.group(2)) + 1))
            elif part:
                vals.append(int(part))
        except ValueError:
            raise ValidationError(f"bad integer list entry {part!r}") from None
    return vals


def _columns(graph: CausalGraph, nodes):
    cols = []
    for k in nodes:
        d = graph.node(k).dim
        cols += [f"X{k}"] if d == 1 else [f"X{k}_{c}" for c in range(d)]
    return cols


def write_wide_csv(path, graph: CausalGraph, records: dict) -> None:
    nodes = sorted(records)
    n = next(iter(records.values())).shape[0] if records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_columns(graph, nodes))
        for i in range(n):
            w.writerow([repr(float(v)) for k in nodes for v in np.atleast_1d(records[k][i])])


def read_wide_csv(path, graph: CausalGraph) -> dict[int, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise ValidationError(f"{path}: empty file")
        rows = [r for r in reader if r]
    pat = re.compile(r"^X(\d+)(?:_(\d+))?$")
    where = {}
    for j, name in enumerate(header):
        m = pat.match(name.strip())
        if not m:
            raise ValidationError(f"{path}: bad column name {name!r}")
        where.setdefault(int(m.group(1)), []).append(j)
    try:
        data = np.array([[float(x) for x in r] for r in rows], dtype=np.float64).reshape(len(rows), len(header))
    except ValueError:
        raise ValidationError(f"{path}: non-numeric or ragged rows") from None
    out = {}
    for k, idx in where.items():
        if k not in graph:
            raise ValidationError(f"{path}: unknown node X{k}")
        if len(idx) != graph.node(k).dim:
            raise ValidationError(f"{path}: node X{k} needs {graph.node(k).dim} columns")
        out[k] = data[:, idx]
    return out


# -- config merging ------------------------------------------------------------


def _merged(args, keys) -> dict:
    """Config-file values overridden by explicitly given flags."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise ValidationError(f"{args.config}: expected a JSON object")
        unknown = sorted(set(cfg) - set(keys) - {"config"})
        if unknown:
            raise ValidationError(f"{args.config}: unknown keys {unknown}")
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _fit_config(cfg) -> FitConfig:
    kw = {k: cfg[k] for k in FIT_KEYS if k in cfg}
    if isinstance(kw.get("hidden"), str):
        kw["hidden"] = tuple(int(h) for h in kw["hidden"].split(",") if h.strip())
    try:
        hyper = FitConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad model hyperparameters: {exc}") from None
    hyper.validate()
    return hyper


def _bench_config(cfg) -> BenchmarkConfig:
    try:
        bc = BenchmarkConfig(**{f: cfg[k] for k, f in BENCH_KEYS.items() if k in cfg})
        bad = bc.n < 1 or bc.J < 1
    except TypeError as exc:
        raise ValidationError(f"bad benchmark settings: {exc}") from None
    if bad:
        raise ValidationError("n and J must be positive")
    return bc


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _merged(args, [*BENCH_KEYS, "seed", "out"])
    bc = _bench_config(cfg)
    seed = int(cfg.get("seed", 0))
    out = cfg.get("out") or default_out()
    ds, scm = generate_benchmark(bc, seed)
    paths = ds.save(out)
    with open(os.path.join(out, "scm.json"), "w") as fh:
        json.dump(scm.to_dict(), fh)
    print(f"generated {bc.name}: {ds.n} regions x {ds.J} times x {ds.K} nodes, seed {seed}")
    for name, p in paths.items():
        print(f"  {name}: {p}")
    return 0


def cmd_fit(args) -> int:
    cfg = _merged(args, [*FIT_KEYS, "data", "graph", "mode", "seed", "workers", "out"])
    if "data" not in cfg:
        raise ValidationError("--data is required")
    hyper = _fit_config(cfg)
    mode = cfg.get("mode", "bdcm")
    graph = CausalGraph.load(cfg["graph"]) if cfg.get("graph") else None
    if not os.path.exists(cfg["data"]):
        raise ValidationError(f"{cfg['data']}: no such file or directory")
    ds = load_dataset(cfg["data"], graph)
    model = fit(ds, ds.graph, mode, hyper, seed=int(cfg.get("seed", 0)), workers=int(cfg.get("workers", 1)))
    out = cfg.get("out") or os.path.join(default_out(), "model.json")
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    model.save(out)
    dims = model.conditioning_dims()
    print(f"mode {model.mode}: {len(dims)} trained nodes, {len(model.roots)} resampled roots, "
          f"total conditioning dim {sum(dims.values())}")
    for k, nm in sorted(model.node_models.items()):
        last = nm.losses[-1] if nm.losses else float("nan")
        print(f"  X{k}: cond dim {nm.cond_dim}, final loss {last:.6f}")
    print(f"checkpoint: {out}")
    return 0


def cmd_query(args) -> int:
    cfg = _merged(args, ["checkpoint", "do", "count", "seed", "counterfactual", "factual", "out"])
    if "checkpoint" not in cfg:
        raise ValidationError("--checkpoint is required")
    do = parse_do(cfg.get("do") if isinstance(cfg.get("do"), list) else [cfg["do"]] if cfg.get("do") else [])
    model = CausalDiffusionModel.load(cfg["checkpoint"])
    out = cfg.get("out") or os.path.join(default_out(), "query.csv")
    if cfg.get("counterfactual"):
        if not cfg.get("factual"):
            raise ValidationError("--counterfactual needs --factual")
        factual = read_wide_csv(cfg["factual"], model.graph)
        rec = counterfactual(model, factual, do)
        write_wide_csv(out, model.graph, rec)
        print(f"counterfactual for {next(iter(rec.values())).shape[0]} unit(s) -> {out}")
    else:
        count = int(cfg.get("count", 1000))
        if count < 1:
            raise ValidationError("--count must be positive")
        samples = sample_interventional(model, do, count, int(cfg.get("seed", 0)))
        write_wide_csv(out, model.graph, samples)
        kind = "interventional" if do else "observational"
        print(f"{count} {kind} samples -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    keys = [*BENCH_KEYS, *FIT_KEYS, "seeds", "methods", "n_query", "workers", "out"]
    cfg = _merged(args, keys)
    methods = cfg.get("methods", "pfd-bdcm,pfd-dcm")
    methods = tuple(m.strip() for m in methods.split(",")) if isinstance(methods, str) else tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    seeds = parse_int_list(cfg.get("seeds", "1-5"))
    ec = ExperimentConfig(_bench_config(cfg), _fit_config(cfg), methods, int(cfg.get("n_query", 1000)))
    ec.validate()
    report = run_experiment(ec, seeds, workers=int(cfg.get("workers", 1)))
    out = cfg.get("out") or os.path.join(default_out(), "report")
    paths = report.write(out)
    for metric in ("obs_mmd2", "int_mmd2", "cf_mse"):
        cells = ", ".join(f"{m} {report.summary[metric][m]['mean']:.5g} +/- {report.summary[metric][m]['sd']:.3g}"
                          for m in methods)
        print(f"{metric}: {cells}")
    print(f"report: {paths['json']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="backdoor-diffusion", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with defaults for any flag")
        sp.add_argument("--out", help=f"output path (default under ${OUT_ENV} or .)")

    def hyper(sp):
        sp.add_argument("--T", type=int)
        sp.add_argument("--beta-min", dest="beta_min", type=float)
        sp.add_argument("--beta-max", dest="beta_max", type=float)
        sp.add_argument("--hidden", help="comma separated widths, e.g. 64,64")
        sp.add_argument("--embed-dim", dest="embed_dim", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--lr-schedule", dest="lr_schedule", choices=("constant", "cosine"))
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--batch", type=int)

    def bench(sp):
        sp.add_argument("--benchmark")
        sp.add_argument("--n", type=int)
        sp.add_argument("--J", type=int)
        sp.add_argument("--noise-scale", dest="noise_scale", type=float)
        sp.add_argument("--n-grid", dest="n_grid", type=int)
        sp.add_argument("--n-basis", dest="n_basis", type=int)

    g = sub.add_parser("generate", help="simulate a registered benchmark")
    common(g)
    bench(g)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="train per-node diffusion models")
    common(f)
    hyper(f)
    f.add_argument("--data", help="dataset directory or values CSV")
    f.add_argument("--graph", help="graph JSON (default: dataset sidecar)")
    f.add_argument("--mode", choices=sorted({"bdcm", "dcm", "backdoor", "parents-only"}))
    f.add_argument("--seed", type=int)
    f.add_argument("--workers", type=int)
    f.set_defaults(func=cmd_fit)

    q = sub.add_parser("query", help="sample or answer counterfactuals from a checkpoint")
    common(q)
    q.add_argument("--checkpoint")
    q.add_argument("--do", action="append", help='intervention, e.g. "X1=0.5,X2=[1 2]"')
    q.add_argument("--count", type=int)
    q.add_argument("--seed", type=int)
    q.add_argument("--counterfactual", action="store_true", default=None)
    q.add_argument("--factual", help="wide CSV with columns X1, X2, ... (one row per unit)")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("evaluate", help="run the benchmark comparison")
    common(e)
    bench(e)
    hyper(e)
    e.add_argument("--seeds", help="e.g. 1-5 or 1,3,7")
    e.add_argument("--methods", help=f"comma separated subset of {','.join(METHODS)}")
    e.add_argument("--n-query", dest="n_query", type=int)
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CausalDiffusionError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
