"""Per-node conditional diffusion models over a causal graph.

Each observed node with a non-empty conditioning set gets its own
denoiser trained on standardized ``(X_k, X_cond)`` rows; observed nodes
with nothing to condition on are resampled from the training rows.
Queries walk the topological order stored at fit time.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .diffusion import NoiseSchedule, ddim_decode, ddim_encode, linear_schedule, train_denoiser
from .errors import (
    CheckpointError,
    EmptySampleSet,
    InvalidHyper,
    MissingFactualValue,
    MissingNodeData,
    NotFitted,
    UnknownNode,
    ValidationError,
)
from .graph import CausalGraph
from .net import DenoiserNet

log = logging.getLogger(__name__)

MODE_ALIASES = {
    "bdcm": "bdcm",
    "backdoor": "bdcm",
    "pfd-bdcm": "bdcm",
    "dcm": "dcm",
    "parents-only": "dcm",
    "pfd-dcm": "dcm",
}


def canonical_mode(mode: str) -> str:
    try:
        return MODE_ALIASES[mode.lower()]
    except (KeyError, AttributeError):
        raise ValidationError(f"unknown mode {mode!r}; use 'bdcm' or 'dcm'") from None


@dataclass(frozen=True)
class FitConfig:
    T: int = 100
    beta_min: float = 1e-4
    beta_max: float = 0.15
    hidden: tuple = (64, 64)
    embed_dim: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    guard: float = 1e-8
    batch: int = 64
    epochs: int = 200
    lr_schedule: str = "cosine"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def validate(self) -> None:
        problems = []
        if self.T < 2:
            problems.append("T must be >= 2")
        if not (0 < self.beta_min <= self.beta_max < 1):
            problems.append("need 0 < beta_min <= beta_max < 1")
        if any(h < 1 for h in self.hidden):
            problems.append("hidden widths must be positive")
        if self.embed_dim < 2 or self.embed_dim % 2:
            problems.append("embed_dim must be even and >= 2")
        if self.lr <= 0 or self.guard <= 0:
            problems.append("lr and guard must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("moment decays must lie in [0, 1)")
        if self.lr_schedule not in ("constant", "cosine"):
            problems.append("lr_schedule must be 'constant' or 'cosine'")
        if self.batch < 1 or self.epochs < 0:
            problems.append("batch must be >= 1 and epochs >= 0")
        if not problems and not linear_schedule(self.T, self.beta_min, self.beta_max).terminal_ok:
            problems.append("schedule leaves alpha_bar_T >= 0.01; raise beta_max or T")
        if problems:
            raise InvalidHyper("; ".join(problems))

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.T, self.beta_min, self.beta_max)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class NodeModel:
    node: int
    cond_nodes: tuple
    net: DenoiserNet
    losses: list = field(default_factory=list)

    @property
    def cond_dim(self) -> int:
        return self.net.cond_dim


def _seed_for(seed, *path):
    """Integer seed derived from ``seed`` and a named path, order independent."""
    ss = np.random.SeedSequence([int(seed), *[int(p) for p in path]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# stream tags
_INIT, _TRAIN, _ROOTS, _LATENT = 1, 2, 3, 4


class CausalDiffusionModel:
    def __init__(self, graph: CausalGraph, mode: str, schedule: NoiseSchedule,
                 node_models: dict, root_table: dict, stats: dict, seed: int = 0,
                 hyper: FitConfig | None = None):
        self.graph = graph
        self.mode = canonical_mode(mode)
        self.schedule = schedule
        self.node_models = dict(node_models)
        self.root_table = {k: np.asarray(v, dtype=np.float64) for k, v in root_table.items()}
        self.stats = {k: (np.asarray(m, dtype=np.float64), np.asarray(s, dtype=np.float64))
                      for k, (m, s) in stats.items()}
        self.seed = int(seed)
        self.hyper = hyper or FitConfig()
        self.order = [k for k in graph.topological_order() if graph.node(k).observed]
        self._check_structure()

    def _check_structure(self):
        roots = set(self.root_table)
        for k in self.order:
            cset = self.graph.conditioning_set(k, self.mode)
            if cset:
                if k not in self.node_models:
                    raise NotFitted(f"node {k} has no trained model")
                nm = self.node_models[k]
                want = sum(self.graph.node(c).dim for c in cset)
                if tuple(nm.cond_nodes) != cset or nm.net.cond_dim != want:
                    raise ValidationError(f"node {k}: conditioning does not match the graph")
            elif k not in roots:
                raise NotFitted(f"root node {k} has no stored training rows")
        sizes = {v.shape[0] for v in self.root_table.values()}
        if len(sizes) > 1:
            raise ValidationError("root training rows are not aligned")

    @property
    def roots(self) -> list[int]:
        return [k for k in self.order if k in self.root_table]

    def conditioning_dims(self) -> dict[int, int]:
        return {k: nm.cond_dim for k, nm in sorted(self.node_models.items())}

    # -- standardization -------------------------------------------------

    def _std(self, k, x):
        m, s = self.stats[k]
        return (np.asarray(x, dtype=np.float64) - m) / s

    def _unstd(self, k, x):
        m, s = self.stats[k]
        return x * s + m

    def _cond(self, nm: NodeModel, vals: dict, n: int) -> np.ndarray:
        parts = []
        for c in nm.cond_nodes:
            if c not in vals:
                raise AssertionError(f"conditioning node {c} of {nm.node} not materialized")
            parts.append(self._std(c, vals[c]))
        return np.concatenate(parts, axis=1) if parts else np.zeros((n, 0))

    def encode(self, k, x, cond_vals: dict):
        nm = self.node_models[k]
        x = np.atleast_2d(x)
        return ddim_encode(nm.net, self._std(k, x), self._cond(nm, cond_vals, x.shape[0]), self.schedule)

    def decode(self, k, z, cond_vals: dict):
        nm = self.node_models[k]
        z = np.atleast_2d(z)
        out = ddim_decode(nm.net, z, self._cond(nm, cond_vals, z.shape[0]), self.schedule)
        return self._unstd(k, out)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "graph": self.graph.to_dict(),
            "mode": self.mode,
            "seed": self.seed,
            "hyper": self.hyper.to_dict(),
            "schedule": self.schedule.to_dict(),
            "stats": {str(k): {"mean": m.tolist(), "std": s.tolist()} for k, (m, s) in sorted(self.stats.items())},
            "roots": {str(k): v.tolist() for k, v in sorted(self.root_table.items())},
            "node_models": {
                str(k): {"cond_nodes": list(nm.cond_nodes), "net": nm.net.to_dict(), "losses": nm.losses}
                for k, nm in sorted(self.node_models.items())
            },
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d) -> "CausalDiffusionModel":
        return _model_from_dict(d)

    @classmethod
    def load(cls, path) -> "CausalDiffusionModel":
        try:
            with open(path) as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError("$", f"invalid JSON ({exc})") from None
        return _model_from_dict(d)


def _need(d, key, path, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise CheckpointError(f"{path}.{key}", "missing field")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise CheckpointError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return v


def _floats(v, path):
    try:
        arr = np.asarray(v, dtype=np.float64)
    except (TypeError, ValueError):
        raise CheckpointError(path, "expected numbers") from None
    if not np.all(np.isfinite(arr)):
        raise CheckpointError(path, "non-finite value")
    return arr


def _model_from_dict(d) -> CausalDiffusionModel:
    if not isinstance(d, dict):
        raise CheckpointError("$", "expected an object")
    try:
        graph = CausalGraph.from_dict(_need(d, "graph", "$", dict))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError("$.graph", str(exc)) from None
    mode = _need(d, "mode", "$", str)
    hyper_d = _need(d, "hyper", "$", dict)
    try:
        hyper = FitConfig(**hyper_d)
    except TypeError as exc:
        raise CheckpointError("$.hyper", str(exc)) from None
    sched_d = _need(d, "schedule", "$", dict)
    try:
        schedule = NoiseSchedule.from_betas(_floats(_need(sched_d, "beta", "$.schedule", list), "$.schedule.beta"))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError("$.schedule.beta", str(exc)) from None
    stats = {}
    for k, v in _need(d, "stats", "$", dict).items():
        p = f"$.stats.{k}"
        stats[int(k)] = (_floats(_need(v, "mean", p, list), p + ".mean"),
                         _floats(_need(v, "std", p, list), p + ".std"))
    roots = {int(k): _floats(v, f"$.roots.{k}") for k, v in _need(d, "roots", "$", dict).items()}
    models = {}
    for k, v in _need(d, "node_models", "$", dict).items():
        p = f"$.node_models.{k}"
        nd = _need(v, "net", p, dict)
        try:
            net = DenoiserNet(
                int(_need(nd, "x_dim", p + ".net")), int(_need(nd, "cond_dim", p + ".net")),
                int(_need(nd, "embed_dim", p + ".net")), tuple(_need(nd, "hidden", p + ".net", list)),
                params=_floats(_need(nd, "params", p + ".net", list), p + ".net.params"),
            )
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointError(p + ".net.params", str(exc)) from None
        models[int(k)] = NodeModel(int(k), tuple(_need(v, "cond_nodes", p, list)), net,
                                   list(v.get("losses", [])))
    try:
        return CausalDiffusionModel(graph, mode, schedule, models, roots, stats,
                                    int(d.get("seed", 0)), hyper)
    except (ValidationError, NotFitted) as exc:
        raise CheckpointError("$.node_models", str(exc)) from None


# -- fitting ---------------------------------------------------------------


def fit(dataset, graph: CausalGraph | None = None, mode: str = "bdcm",
        hyper: FitConfig | None = None, seed: int = 0, workers: int = 1) -> CausalDiffusionModel:
    """Train one conditional denoiser per observed non-root node.

    ``dataset`` is a :class:`PanelDataset` or a mapping node -> rows. All
    (region, time) units are pooled as rows. Node jobs are independent and
    seeded from ``(seed, node)``, so ``workers`` does not affect results.
    """
    graph = graph or dataset.graph
    mode = canonical_mode(mode)
    hyper = hyper or FitConfig()
    hyper.validate()
    schedule = hyper.schedule()
    observed = [k for k in graph.topological_order() if graph.node(k).observed]
    rows = {}
    for k in observed:
        try:
            arr = dataset.node_rows(k) if hasattr(dataset, "node_rows") else np.asarray(dataset[k], dtype=np.float64)
        except (KeyError, MissingNodeData):
            raise MissingNodeData(f"no training data for observed node {k}") from None
        arr = arr.reshape(arr.shape[0], -1)
        if arr.shape[1] != graph.node(k).dim:
            raise MissingNodeData(f"node {k}: data has width {arr.shape[1]}, graph says {graph.node(k).dim}")
        rows[k] = arr
    lengths = {v.shape[0] for v in rows.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise MissingNodeData("node data must share a positive number of rows")
    stats = {}
    for k, x in rows.items():
        m = x.mean(axis=0)
        s = x.std(axis=0)
        s = np.where(s > 1e-12, s, 1.0)
        stats[k] = (m, s)
    std = {k: (rows[k] - stats[k][0]) / stats[k][1] for k in observed}

    jobs = []
    roots = {}
    for k in observed:
        cset = graph.conditioning_set(k, mode)
        if not cset:
            roots[k] = rows[k]
        else:
            jobs.append((k, cset))

    def train(job):
        k, cset = job
        cond = np.concatenate([std[c] for c in cset], axis=1)
        net = DenoiserNet(graph.node(k).dim, cond.shape[1], hyper.embed_dim, hyper.hidden,
                          seed=_seed_for(seed, _INIT, k))
        losses = train_denoiser(
            net, std[k], cond, schedule, epochs=hyper.epochs, batch=hyper.batch, lr=hyper.lr,
            beta1=hyper.beta1, beta2=hyper.beta2, guard=hyper.guard, seed=_seed_for(seed, _TRAIN, k),
            lr_schedule=hyper.lr_schedule,
        )
        log.info("node %d: cond dim %d, final loss %.4f", k, cond.shape[1], losses[-1] if losses else float("nan"))
        return NodeModel(k, cset, net, losses)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            trained = list(pool.map(train, jobs))
    else:
        trained = [train(j) for j in jobs]
    models = {nm.node: nm for nm in trained}
    return CausalDiffusionModel(graph, mode, schedule, models, roots, stats, seed, hyper)


# -- queries ---------------------------------------------------------------


def _intervention_values(model, intervention, n):
    out = {}
    for k, v in (intervention or {}).items():
        k = int(k)
        if k not in model.graph:
            raise UnknownNode(f"intervention on unknown node {k}")
        if not model.graph.node(k).observed:
            raise ValidationError(f"node {k} is unobserved and cannot be intervened on")
        d = model.graph.node(k).dim
        v = np.asarray(v, dtype=np.float64)
        if v.ndim == 1 and v.size == d:
            v = v.reshape(1, d)
        try:
            out[k] = np.array(np.broadcast_to(v if v.ndim != 1 else v.reshape(-1, d), (n, d)))
        except ValueError:
            raise ValidationError(f"intervention value for node {k} has the wrong shape") from None
    return out


def sample_interventional(model: CausalDiffusionModel, intervention, count: int, seed) -> dict:
    """``count`` draws from the model's interventional distribution.

    Returns node -> ``(count, d)`` for every observed node. Root rows are
    drawn jointly (one training row index per unit) so dependence among
    roots is preserved; each other node decodes fresh Gaussian latents
    given its already generated conditioning values.
    """
    if model is None or not isinstance(model, CausalDiffusionModel):
        raise NotFitted("model is not fitted")
    if count < 0:
        raise ValidationError("count must be non-negative")
    vals = _intervention_values(model, intervention, count)
    roots = model.roots
    if roots:
        R = model.root_table[roots[0]].shape[0]
        idx = np.random.default_rng(_seed_for(seed, _ROOTS)).integers(0, R, size=count)
    for k in model.order:
        if k in vals:
            continue
        if k in model.root_table:
            vals[k] = model.root_table[k][idx]
            continue
        d = model.graph.node(k).dim
        z = np.random.default_rng(_seed_for(seed, _LATENT, k)).standard_normal((count, d))
        vals[k] = model.decode(k, z, vals) if count else np.zeros((0, d))
    return {k: vals[k] for k in model.order}


def sample_observational(model: CausalDiffusionModel, count: int, seed) -> dict:
    return sample_interventional(model, {}, count, seed)


def counterfactual(model: CausalDiffusionModel, factual: dict, intervention: dict) -> dict:
    """Abduction-action-prediction for one or many factual units.

    ``factual`` maps node -> vector (one unit) or ``(N, d)`` rows.
    Intervened nodes take their values, non-descendants keep their factual
    values and every other descendant is re-decoded from its factual latent
    under counterfactual conditioning.
    """
    if not isinstance(model, CausalDiffusionModel):
        raise NotFitted("model is not fitted")
    dims = {int(k): model.graph.node(int(k)).dim for k in factual if int(k) in model.graph}
    single = all(np.ndim(v) <= 1 and np.size(v) == dims.get(int(k), -1) for k, v in factual.items())
    F = {}
    for k, v in factual.items():
        k = int(k)
        if k not in model.graph:
            raise UnknownNode(f"factual value for unknown node {k}")
        arr = np.asarray(v, dtype=np.float64)
        d = model.graph.node(k).dim
        F[k] = arr.reshape(-1, d)
    n = {v.shape[0] for v in F.values()}
    if len(n) != 1:
        raise ValidationError("factual rows differ in length")
    n = n.pop()
    act = _intervention_values(model, intervention, n)
    affected = set()
    for k in act:
        affected |= model.graph.descendants(k)
    cf = {}
    for k in model.order:
        if k in act:
            cf[k] = act[k]
        elif k in affected and k in model.node_models:
            nm = model.node_models[k]
            for c in (k, *nm.cond_nodes):
                if c not in F:
                    raise MissingFactualValue(f"factual record lacks node {c} needed for node {k}")
            z = model.encode(k, F[k], F)
            cf[k] = model.decode(k, z, cf)
        elif k in F:
            if k in affected:
                log.warning("node %d is a descendant with no model; keeping its factual value", k)
            cf[k] = F[k].copy()
        elif any(k in model.node_models[j].cond_nodes for j in affected & set(model.node_models)):
            raise MissingFactualValue(f"factual record lacks node {k}")
    if single:
        return {k: v[0] for k, v in cf.items()}
    return cf


def reconstruction_error(model: CausalDiffusionModel, data) -> dict:
    """Per-node decode(encode(x)) deviation over all units.

    Returns node -> ``{"mean", "max", "errors"}`` where ``errors`` is the
    per-unit max absolute deviation in original units.
    """
    if not isinstance(model, CausalDiffusionModel):
        raise NotFitted("model is not fitted")
    rows = data.rows(model.order) if hasattr(data, "rows") else {int(k): np.atleast_2d(v) for k, v in data.items()}
    out = {}
    for k in sorted(model.node_models):
        x = rows[k]
        if x.shape[0] == 0:
            raise EmptySampleSet(f"no rows for node {k}")
        z = model.encode(k, x, rows)
        xr = model.decode(k, z, rows)
        err = np.max(np.abs(xr - x), axis=1)
        out[k] = {"mean": float(err.mean()), "max": float(err.max()), "errors": err}
    return out


def latent_independence(model: CausalDiffusionModel, data) -> dict:
    """Max absolute correlation between each node's latent and its conditioning columns.

    A diagnostic for how far the encoder is from producing latents
    independent of the conditioning values.
    """
    rows = data.rows(model.order) if hasattr(data, "rows") else data
    out = {}
    for k, nm in sorted(model.node_models.items()):
        z = model.encode(k, rows[k], rows)
        c = model._cond(nm, rows, z.shape[0])
        zc = (z - z.mean(0)) / (z.std(0) + 1e-12)
        cc = (c - c.mean(0)) / (c.std(0) + 1e-12)
        out[k] = float(np.max(np.abs(zc.T @ cc / z.shape[0])))
    return out


def build_model(graph: CausalGraph, mode: str, schedule: NoiseSchedule, nets: dict,
                root_rows: dict, stats: dict | None = None, seed: int = 0) -> CausalDiffusionModel:
    """Assemble a model from given nets (no training).

    ``stats`` defaults to identity standardization for every observed node.
    """
    mode = canonical_mode(mode)
    if stats is None:
        stats = {k: (np.zeros(graph.node(k).dim), np.ones(graph.node(k).dim)) for k in graph.observed_ids()}
    models = {k: NodeModel(k, graph.conditioning_set(k, mode), net) for k, net in nets.items()}
    return CausalDiffusionModel(graph, mode, schedule, models,
                                {k: np.atleast_2d(np.asarray(v, dtype=np.float64).reshape(-1, graph.node(k).dim))
                                 for k, v in root_rows.items()},
                                stats, seed)
