"""Ground-truth structural causal models, benchmark registry and oracles.

Every benchmark is an additive-noise SCM: each endogenous node equals an
intercept plus a sum of linear / square / sine terms of its parents plus
its own noise, so it is strictly increasing in that noise. Exogenous
draws are made block by block before any equation is evaluated, which
makes the result independent of the (valid) evaluation order chosen.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fda
from .data import PanelDataset, column_slices
from .errors import InvalidSize, MissingExogenous, UnknownBenchmark, UnknownNode, ValidationError
from .graph import CausalGraph, NodeSpec
from .stdyn import CarSpec, ConfounderLink, car_cov, confounder_link_apply, draw_temporal_noise

# frozen structural coefficients of pfst33 are drawn from this seed
REGISTRY_SEED = 33_2024

TERM_FUNCS = {
    "lin": lambda x: x,
    "sq": lambda x: x * x,
    "sin": np.sin,
}


@dataclass(frozen=True)
class Term:
    parent: int
    kind: str
    coef: float


@dataclass(frozen=True)
class Equation:
    """Structural assignment of one node.

    ``kind``: ``exogenous`` (value is its own draw), ``additive``
    (intercept + terms + noise) or ``link`` (region-specific confounder link
    of ``link_inputs`` plus noise).
    """

    node: int
    kind: str
    terms: tuple = ()
    intercept: float = 0.0
    link_inputs: tuple = ()


@dataclass(frozen=True)
class GaussianBlock:
    nodes: tuple
    mean: tuple
    sd: tuple


@dataclass(frozen=True)
class CarBlock:
    """Nodes drawn jointly per region as N(mean, D_i kron Sigma) over time."""

    nodes: tuple
    rho: tuple  # per region
    sigma: np.ndarray
    scale: float = 1.0


@dataclass(frozen=True)
class CurveBlock:
    """Curves sum_m s_m xi_m phi_m(t) + white noise, expanded on ``basis``."""

    name: str
    nodes: tuple  # coefficient nodes, basis index order
    scales: tuple
    noise_sd: float


@dataclass
class GroundTruthScm:
    graph: CausalGraph
    equations: dict
    blocks: list
    n_regions: int
    J: int
    link: ConfounderLink | None = None
    basis: fda.BasisSystem | None = None
    name: str = "custom"
    config: dict = field(default_factory=dict)

    def car_specs(self):
        return [[CarSpec.path(self.J, r) for r in b.rho] for b in self.blocks if isinstance(b, CarBlock)]

    # -- simulation ----------------------------------------------------

    def draw_exogenous(self, rng, reps: int = 1):
        """Exogenous draws for ``reps`` copies of the panel.

        Returns ``(U, curves)`` with ``U`` shaped ``(reps*n, J, width)``.
        """
        cols = column_slices(self.graph)
        width = sum(s.dim for s in self.graph.nodes)
        N = reps * self.n_regions
        U = np.zeros((N, self.J, width))
        curves = {}
        H = None
        for block in self.blocks:
            if isinstance(block, GaussianBlock):
                for k, mu, sd in zip(block.nodes, block.mean, block.sd):
                    d = self.graph.node(k).dim
                    U[:, :, cols[k]] = mu + sd * rng.standard_normal((N, self.J, d))
            elif isinstance(block, CarBlock):
                sl = [cols[k] for k in block.nodes]
                for r in range(self.n_regions):
                    D = car_cov(CarSpec.path(self.J, block.rho[r]))
                    draw = block.scale * draw_temporal_noise(D, block.sigma, reps, rng)
                    rows = np.arange(reps) * self.n_regions + r
                    off = 0
                    for s in sl:
                        w = s.stop - s.start
                        U[rows, :, s] = draw[:, :, off:off + w]
                        off += w
            elif isinstance(block, CurveBlock):
                basis = self.basis
                raw = _raw_curve_basis(basis.grid, len(block.scales))
                xi = rng.standard_normal((N, self.J, len(block.scales))) * np.asarray(block.scales)
                noise = block.noise_sd * rng.standard_normal((N, self.J, basis.grid.size))
                curve = xi @ raw.T + noise
                curves[block.name] = curve
                coef = fda.expand(curve, basis)
                for m, k in enumerate(block.nodes):
                    U[:, :, cols[k]] = coef[:, :, m:m + 1]
            else:  # pragma: no cover
                raise ValidationError(f"unknown block {block!r}")
        return U, curves

    def evaluate(self, U, interventions=None, order=None):
        """Structural evaluation of every node given exogenous ``U``.

        ``interventions`` maps node id to a value broadcastable to
        ``(N, J, d_k)``; intervened nodes ignore their equation.
        """
        interventions = _check_interventions(self.graph, interventions)
        order = self.graph.topological_order() if order is None else list(order)
        if not self.graph.is_valid_order(order):
            raise ValidationError("evaluation order is not topological")
        cols = column_slices(self.graph)
        N = U.shape[0]
        X = np.zeros_like(U)
        region = np.arange(N) % self.n_regions
        for k in order:
            sl = cols[k]
            d = sl.stop - sl.start
            if k in interventions:
                X[:, :, sl] = np.broadcast_to(interventions[k], (N, self.J, d))
                continue
            eq = self.equations[k]
            u = U[:, :, sl]
            if eq.kind == "exogenous":
                X[:, :, sl] = u
            elif eq.kind == "additive":
                acc = eq.intercept + u
                for term in eq.terms:
                    acc = acc + term.coef * TERM_FUNCS[term.kind](X[:, :, cols[term.parent]])
                X[:, :, sl] = acc
            elif eq.kind == "link":
                xin = np.concatenate([X[:, :, cols[p]] for p in eq.link_inputs], axis=-1)
                reg = np.broadcast_to(region[:, None], (N, self.J))
                X[:, :, sl] = confounder_link_apply(self.link, reg, xin, u)
            else:  # pragma: no cover
                raise ValidationError(f"unknown equation kind {eq.kind}")
        return X

    def structural_value(self, k, parent_values: dict, u, region=0):
        """Evaluate node ``k``'s equation at explicit inputs (for probes)."""
        eq = self.equations[k]
        u = np.asarray(u, dtype=np.float64)
        if eq.kind == "exogenous":
            return u
        if eq.kind == "additive":
            acc = eq.intercept + u
            for term in eq.terms:
                acc = acc + term.coef * TERM_FUNCS[term.kind](np.asarray(parent_values[term.parent]))
            return acc
        xin = np.concatenate([np.atleast_1d(parent_values[p]) for p in eq.link_inputs], axis=-1)
        return confounder_link_apply(self.link, region, xin, u)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config,
            "equations": {
                str(k): {
                    "kind": e.kind,
                    "intercept": e.intercept,
                    "terms": [asdict(t) for t in e.terms],
                    "link_inputs": list(e.link_inputs),
                }
                for k, e in sorted(self.equations.items())
            },
            "link": None if self.link is None else self.link.to_dict(),
        }


def _raw_curve_basis(grid, m):
    s = (grid - grid[0]) / (grid[-1] - grid[0])
    cols = [np.ones_like(s)]
    f = 1
    while len(cols) < m:
        cols.append(np.sqrt(2) * np.sin(2 * np.pi * f * s))
        if len(cols) < m:
            cols.append(np.sqrt(2) * np.cos(2 * np.pi * f * s))
        f += 1
    return np.column_stack(cols)


def _check_interventions(graph, interventions):
    out = {}
    for k, v in (interventions or {}).items():
        k = int(k)
        if k not in graph:
            raise UnknownNode(f"intervention on unknown node {k}")
        v = np.asarray(v, dtype=np.float64)
        d = graph.node(k).dim
        if v.ndim and v.shape[-1] not in (1, d):
            raise ValidationError(f"intervention on node {k} has wrong dimension")
        out[k] = v
    return out


# -- registry ------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkConfig:
    name: str = "pfst33"
    n: int = 30
    J: int = 6
    noise_scale: float = 1.0
    n_grid: int = 64
    n_basis: int = 6
    rho_explanatory: float = 0.4
    rho_explained: float = 0.3

    def to_dict(self):
        return asdict(self)


def _pfst33(cfg: BenchmarkConfig, rng) -> GroundTruthScm:
    """33-node partially functional spatio-temporal benchmark.

    Nodes: causes 1-3; basis coefficients 4-21 (six per curve Y1-Y3);
    observed backdoor nodes 22-27, where 22/24/26 are proxies of the hidden
    confounder 30 and 23/25/27 are exogenous; hidden explanatory
    confounders 28-29 (temporal CAR); hidden explained confounder 30
    (region-specific link of 28-29 plus CAR noise); outcomes 31-33.
    """
    reg = np.random.default_rng(REGISTRY_SEED)
    nb = cfg.n_basis
    coef_nodes = {c: tuple(range(4 + nb * (c - 1), 4 + nb * c)) for c in (1, 2, 3)}
    if nb != 6:
        raise InvalidSize("pfst33 has exactly six coefficient nodes per curve")
    proxy = {1: 22, 2: 24, 3: 26}
    exo = {1: 23, 2: 25, 3: 27}
    outcome = {1: 31, 2: 32, 3: 33}

    nodes = []
    edges = [(28, 30), (29, 30)]
    equations = {}
    for c in (1, 2, 3):
        for m, k in enumerate(coef_nodes[c]):
            nodes.append(NodeSpec(k, kind="functional-coefficient", curve=f"Y{c}", basis_index=m))
            equations[k] = Equation(k, "exogenous")
        nodes.append(NodeSpec(exo[c], kind="root"))
        equations[exo[c]] = Equation(exo[c], "exogenous")

        nodes.append(NodeSpec(proxy[c], kind="endogenous", backdoor=(30,)))
        edges.append((30, proxy[c]))
        equations[proxy[c]] = Equation(
            proxy[c], "additive", (Term(30, "lin", float(reg.uniform(0.25, 0.4))),),
            intercept=float(reg.uniform(-1.0, -0.5)),
        )

        nodes.append(NodeSpec(c, kind="endogenous", backdoor=(proxy[c], exo[c])))
        edges += [(proxy[c], c), (exo[c], c)]
        equations[c] = Equation(c, "additive", (
            Term(proxy[c], "lin", float(reg.uniform(0.6, 1.0))),
            Term(exo[c], "sin", float(reg.uniform(0.3, 0.6))),
            Term(exo[c], "lin", float(reg.uniform(0.3, 0.6))),
        ))

        y = outcome[c]
        bset = (c, proxy[c], exo[c], 30) + coef_nodes[c]
        nodes.append(NodeSpec(y, kind="endogenous", backdoor=bset))
        edges += [(c, y), (exo[c], y), (30, y)] + [(k, y) for k in coef_nodes[c]]
        terms = [
            Term(c, "lin", float(reg.uniform(0.8, 1.2))),
            Term(c, "sin", float(reg.uniform(0.3, 0.6))),
            Term(exo[c], "lin", float(reg.uniform(0.3, 0.6))),
            Term(30, "lin", float(reg.uniform(0.2, 0.35))),
        ]
        terms += [Term(k, "lin", float(reg.uniform(0.2, 0.5) / (m + 1)))
                  for m, k in enumerate(coef_nodes[c])]
        equations[y] = Equation(y, "additive", tuple(terms))

    nodes.append(NodeSpec(28, kind="unobserved-explanatory", observed=False))
    nodes.append(NodeSpec(29, kind="unobserved-explanatory", observed=False))
    nodes.append(NodeSpec(30, kind="unobserved-explained", observed=False, backdoor=(28, 29)))
    equations[28] = Equation(28, "exogenous")
    equations[29] = Equation(29, "exogenous")
    equations[30] = Equation(30, "link", link_inputs=(28, 29))
    graph = CausalGraph(nodes, edges)

    gamma = rng.uniform(0.5, 1.5, size=(cfg.n, 1, 6))
    link = ConfounderLink(gamma, "poly_sin")
    basis = fda.build_basis("fourier", nb, np.linspace(0.0, 1.0, cfg.n_grid))
    s = cfg.noise_scale
    blocks = [
        GaussianBlock((23, 25, 27), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        CarBlock((28, 29), (cfg.rho_explanatory,) * cfg.n, np.eye(2)),
        CarBlock((30,), (cfg.rho_explained,) * cfg.n, np.eye(1), scale=s),
        GaussianBlock((22, 24, 26, 1, 2, 3, 31, 32, 33), (0.0,) * 9, (0.5 * s,) * 9),
    ]
    blocks += [
        CurveBlock(f"Y{c}", coef_nodes[c], tuple(1.0 / math.sqrt(m) for m in range(1, 9)), 0.05)
        for c in (1, 2, 3)
    ]
    return GroundTruthScm(graph, equations, blocks, cfg.n, cfg.J, link, basis)


def _triangle(cfg: BenchmarkConfig, rng) -> GroundTruthScm:
    """Confounder triangle C(1) -> X(2), C -> Y(3), X -> Y with E[C] = 1."""
    nodes = [
        NodeSpec(1, kind="root", name="C"),
        NodeSpec(2, backdoor=(1,), name="X"),
        NodeSpec(3, backdoor=(1, 2), name="Y"),
    ]
    graph = CausalGraph(nodes, [(1, 2), (1, 3), (2, 3)])
    s = cfg.noise_scale
    eqs = {
        1: Equation(1, "exogenous"),
        2: Equation(2, "additive", (Term(1, "lin", 0.5),)),
        3: Equation(3, "additive", (Term(2, "lin", 1.0), Term(1, "lin", 2.0))),
    }
    blocks = [GaussianBlock((1,), (1.0,), (1.0,)), GaussianBlock((2, 3), (0.0, 0.0), (1.0 * s, 0.5 * s))]
    return GroundTruthScm(graph, eqs, blocks, cfg.n, cfg.J)


def _linear_chain(cfg: BenchmarkConfig, rng) -> GroundTruthScm:
    """X1 ~ N(1, 1); X2 = 2 X1 + U2; X3 = 1 + 0.5 X2 + U3 with sd(U) = 0.5."""
    graph = CausalGraph(
        [NodeSpec(1, kind="root"), NodeSpec(2, backdoor=(1,)), NodeSpec(3, backdoor=(2,))],
        [(1, 2), (2, 3)],
    )
    s = cfg.noise_scale
    eqs = {
        1: Equation(1, "exogenous"),
        2: Equation(2, "additive", (Term(1, "lin", 2.0),)),
        3: Equation(3, "additive", (Term(2, "lin", 0.5),), intercept=1.0),
    }
    blocks = [GaussianBlock((1,), (1.0,), (1.0,)), GaussianBlock((2, 3), (0.0, 0.0), (0.5 * s, 0.5 * s))]
    return GroundTruthScm(graph, eqs, blocks, cfg.n, cfg.J)


REGISTRY = {
    "pfst33": _pfst33,
    "triangle": _triangle,
    "linear_chain": _linear_chain,
}


def _stream(seed, name):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(ord, name)]))


def build_scm(config: BenchmarkConfig, seed: int) -> GroundTruthScm:
    if config.name not in REGISTRY:
        raise UnknownBenchmark(
            f"unknown benchmark {config.name!r}; registered: {', '.join(sorted(REGISTRY))}"
        )
    if config.n < 1 or config.J < 1:
        raise InvalidSize(f"need n >= 1 and J >= 1, got n={config.n}, J={config.J}")
    if config.noise_scale < 0:
        raise InvalidSize("noise_scale must be non-negative")
    scm = REGISTRY[config.name](config, _stream(seed, "scm"))
    scm.name = config.name
    scm.config = config.to_dict()
    return scm


def generate_benchmark(config: BenchmarkConfig = BenchmarkConfig(), seed: int = 0, order=None):
    """Simulate a registered benchmark; returns ``(PanelDataset, GroundTruthScm)``."""
    scm = build_scm(config, seed)
    U, curves = scm.draw_exogenous(_stream(seed, "data"), reps=1)
    X = scm.evaluate(U, order=order)
    ds = PanelDataset(
        scm.graph, X, U, curves,
        None if scm.basis is None else scm.basis.grid,
        meta={"benchmark": config.name, "seed": int(seed), "config": config.to_dict()},
    )
    return ds, scm


def _flatten(scm, X, count):
    cols = column_slices(scm.graph)
    flat = X.reshape(-1, X.shape[2])[:count]
    return {k: flat[:, cols[k]].copy() for k in scm.graph.node_ids}


def oracle_interventional(scm: GroundTruthScm, interventions, count: int, seed) -> dict:
    """Fresh-noise samples of every node under ``do(interventions)``.

    Whole panels are simulated (temporal noise is drawn per region series)
    and flattened region-major until ``count`` rows are collected.
    """
    interventions = _check_interventions(scm.graph, interventions)
    per = scm.n_regions * scm.J
    reps = max(1, math.ceil(count / per))
    U, _ = scm.draw_exogenous(np.random.default_rng(seed), reps=reps)
    X = scm.evaluate(U, interventions)
    return _flatten(scm, X, count)


def oracle_counterfactual(scm: GroundTruthScm, dataset: PanelDataset, factual_index=None,
                          interventions=None):
    """Counterfactual values reusing the dataset's stored exogenous draws.

    ``factual_index=(i, j)`` returns one record (node -> vector); ``None``
    returns all units as rows. Intervention values may be per-unit arrays
    shaped like the panel ``(n, J, d)``.
    """
    if dataset.exogenous is None:
        raise MissingExogenous("dataset carries no exogenous draws")
    X = scm.evaluate(dataset.exogenous, interventions)
    cols = column_slices(scm.graph)
    if factual_index is None:
        return _flatten(scm, X, X.shape[0] * X.shape[1])
    i, j = factual_index
    if not (0 <= i < X.shape[0] and 0 <= j < X.shape[1]):
        raise MissingExogenous(f"no exogenous draws for unit {factual_index}")
    return {k: X[i, j, cols[k]].copy() for k in scm.graph.node_ids}
