"""Causal DAG with per-node metadata, topological order and backdoor checks."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass
from typing import Iterable

from .errors import CycleDetected, UnknownNode, ValidationError

NODE_KINDS = (
    "root",
    "endogenous",
    "unobserved-explanatory",
    "unobserved-explained",
    "functional-coefficient",
)

MAX_NODES = 64


@dataclass(frozen=True)
class NodeSpec:
    id: int
    dim: int = 1
    kind: str = "endogenous"
    backdoor: tuple = ()
    observed: bool = True
    name: str | None = None
    # functional-coefficient nodes: source curve and basis index (0-based)
    curve: str | None = None
    basis_index: int | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValidationError(f"node {self.id}: unknown kind {self.kind!r}")
        if int(self.dim) < 1:
            raise ValidationError(f"node {self.id}: dim must be positive")
        object.__setattr__(self, "backdoor", tuple(sorted(int(b) for b in self.backdoor)))

    @property
    def label(self) -> str:
        return self.name or f"X{self.id}"

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "dim": self.dim,
            "kind": self.kind,
            "backdoor": list(self.backdoor),
            "observed": self.observed,
        }
        if self.name is not None:
            d["name"] = self.name
        if self.curve is not None:
            d["curve"] = self.curve
            d["basis_index"] = self.basis_index
        return d


def validate_dag(node_ids: Iterable[int], edges: Iterable[tuple[int, int]]) -> None:
    """Raise if ``edges`` is not a DAG over ``node_ids``.

    Checks for unknown endpoints, duplicate edges, self loops and cycles.
    """
    ids = list(node_ids)
    known = set(ids)
    seen = set()
    children = {k: [] for k in ids}
    for u, v in edges:
        for x in (u, v):
            if x not in known:
                raise UnknownNode(f"edge ({u}, {v}) references unknown node {x}")
        if (u, v) in seen:
            raise ValidationError(f"duplicate edge ({u}, {v})")
        seen.add((u, v))
        children[u].append(v)
    # iterative DFS with colouring; reports the first back edge as a cycle
    state = dict.fromkeys(ids, 0)
    for start in sorted(ids):
        if state[start]:
            continue
        stack = [(start, iter(sorted(children[start])))]
        path = [start]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state[nxt] == 1:
                raise CycleDetected(path[path.index(nxt):] + [nxt])
            elif state[nxt] == 0:
                state[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(sorted(children[nxt]))))


class CausalGraph:
    """Immutable DAG over nodes ``1..K``."""

    def __init__(self, nodes: Iterable[NodeSpec], edges: Iterable[tuple[int, int]]):
        nodes = sorted(nodes, key=lambda s: s.id)
        ids = [s.id for s in nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("node ids must be unique")
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError("node ids must be the contiguous integers 1..K")
        if len(ids) > MAX_NODES:
            raise ValidationError(f"at most {MAX_NODES} nodes are supported")
        edges = [(int(u), int(v)) for u, v in edges]
        validate_dag(ids, edges)
        self._nodes = {s.id: s for s in nodes}
        self._edges = tuple(edges)
        self._parents = {k: [] for k in ids}
        self._children = {k: [] for k in ids}
        for u, v in edges:
            self._parents[v].append(u)
            self._children[u].append(v)
        for k in ids:
            self._parents[k].sort()
            self._children[k].sort()
            for b in self._nodes[k].backdoor:
                if b not in self._nodes:
                    raise UnknownNode(f"node {k}: backdoor member {b} is not a node")
        self._order = self._kahn()
        self._desc = {k: self._closure(k, self._children) for k in ids}
        for k in ids:
            bad = set(self._nodes[k].backdoor) & (self._desc[k] | {k})
            if bad:
                raise ValidationError(
                    f"node {k}: backdoor set contains descendants {sorted(bad)}"
                )

    # -- structure -----------------------------------------------------

    @property
    def nodes(self) -> list[NodeSpec]:
        return [self._nodes[k] for k in sorted(self._nodes)]

    @property
    def edges(self) -> tuple:
        return self._edges

    @property
    def node_ids(self) -> list[int]:
        return sorted(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, k):
        return k in self._nodes

    def node(self, k: int) -> NodeSpec:
        self._check(k)
        return self._nodes[k]

    def _check(self, k):
        if k not in self._nodes:
            raise UnknownNode(f"unknown node {k}")

    def parents(self, k: int) -> list[int]:
        self._check(k)
        return list(self._parents[k])

    def children(self, k: int) -> list[int]:
        self._check(k)
        return list(self._children[k])

    def _kahn(self) -> list[int]:
        indeg = {k: len(p) for k, p in self._parents.items()}
        heap = [k for k, d in indeg.items() if d == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            k = heapq.heappop(heap)
            order.append(k)
            for c in self._children[k]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(heap, c)
        return order

    def topological_order(self) -> list[int]:
        """Kahn's algorithm with ties broken by ascending id."""
        return list(self._order)

    @staticmethod
    def _closure(k, adj) -> set:
        out = set()
        stack = list(adj[k])
        while stack:
            x = stack.pop()
            if x not in out:
                out.add(x)
                stack.extend(adj[x])
        return out

    def descendants(self, k: int) -> set[int]:
        self._check(k)
        return set(self._desc[k])

    def ancestors(self, k: int) -> set[int]:
        self._check(k)
        return self._closure(k, self._parents)

    def is_valid_order(self, order) -> bool:
        pos = {k: i for i, k in enumerate(order)}
        if sorted(pos) != self.node_ids or len(order) != len(self):
            return False
        return all(pos[u] < pos[v] for u, v in self._edges)

    # -- metadata ------------------------------------------------------

    def observed_ids(self) -> list[int]:
        return [k for k in self.node_ids if self._nodes[k].observed]

    def conditioning_set(self, k: int, mode: str) -> tuple[int, ...]:
        """Observed conditioning nodes of ``k``, ascending.

        ``mode`` is ``"bdcm"`` (declared backdoor set) or ``"dcm"`` (parents).
        """
        self._check(k)
        if mode == "bdcm":
            base = set(self._nodes[k].backdoor) | set(self._parents[k])
        elif mode == "dcm":
            base = set(self._parents[k])
        else:
            raise ValidationError(f"unknown conditioning mode {mode!r}")
        return tuple(sorted(b for b in base if self._nodes[b].observed))

    def with_hidden(self, hidden: Iterable[int]) -> "CausalGraph":
        """Copy with the given nodes marked unobserved."""
        hidden = set(hidden)
        for h in hidden:
            self._check(h)
        nodes = [
            NodeSpec(**{**s.to_dict(), "backdoor": s.backdoor, "observed": s.observed and s.id not in hidden})
            for s in self.nodes
        ]
        return CausalGraph(nodes, self._edges)

    # -- d-separation ----------------------------------------------------

    def _reachable(self, source: int, given: set, cut_source_out: bool = False) -> set:
        """Nodes d-connected to ``source`` given ``given`` (Bayes-ball).

        With ``cut_source_out`` the edges leaving ``source`` are deleted, so
        only paths starting with an edge into ``source`` count.
        """
        anc_given = set(given)
        for g in given:
            anc_given |= self._closure(g, self._parents)

        def pa(x):
            if cut_source_out:
                return [p for p in self._parents[x] if p != source]
            return self._parents[x]

        def ch(x):
            return [] if cut_source_out and x == source else self._children[x]

        # "up": entered from a child, "down": entered from a parent
        visited = set()
        reach = set()
        stack = [(source, "up")]
        while stack:
            x, d = stack.pop()
            if (x, d) in visited:
                continue
            visited.add((x, d))
            if x not in given:
                reach.add(x)
            if d == "up" and x not in given:
                stack.extend((p, "up") for p in pa(x))
                stack.extend((c, "down") for c in ch(x))
            elif d == "down":
                if x not in given:
                    stack.extend((c, "down") for c in ch(x))
                if x in anc_given:
                    stack.extend((p, "up") for p in pa(x))
        return reach

    def d_separated(self, x: int, y: int, given: Iterable[int]) -> bool:
        self._check(x)
        self._check(y)
        given = set(given)
        for g in given:
            self._check(g)
        if y in given:
            return True
        return y not in self._reachable(x, given - {x})

    def backdoor_check(self, cause: int, outcome: int, candidate: Iterable[int]) -> bool:
        """True iff ``candidate`` satisfies the backdoor criterion for (cause, outcome)."""
        self._check(cause)
        self._check(outcome)
        candidate = set(candidate)
        for c in candidate:
            self._check(c)
        if cause == outcome:
            raise ValidationError("cause and outcome must differ")
        if candidate & self._desc[cause]:
            return False
        given = candidate - {cause}
        if outcome in given:
            return True
        return outcome not in self._reachable(cause, given, cut_source_out=True)

    def validate_backdoor_sets(self, pairs=None) -> list[tuple[int, int, tuple]]:
        """Check recorded backdoor sets; returns failures without raising.

        Each pair ``(cause, outcome)`` is tested with the observed part of
        ``backdoor(outcome)`` minus the cause. By default the pairs are
        (p, k) for every observed, non-root parent p of each node k.
        """
        if pairs is None:
            pairs = [
                (p, k)
                for k in self.node_ids
                for p in self._parents[k]
                if self._nodes[p].observed and self._parents[p]
            ]
        failures = []
        for cause, outcome in pairs:
            cand = tuple(
                b for b in self._nodes[outcome].backdoor
                if b != cause and self._nodes[b].observed
            )
            if not self.backdoor_check(cause, outcome, cand):
                failures.append((cause, outcome, cand))
        return failures

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "nodes": [s.to_dict() for s in self.nodes],
            "edges": [list(e) for e in self._edges],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CausalGraph":
        if not isinstance(data, dict) or "nodes" not in data or "edges" not in data:
            raise ValidationError("graph JSON needs 'nodes' and 'edges'")
        nodes = []
        for i, nd in enumerate(data["nodes"]):
            try:
                nodes.append(
                    NodeSpec(
                        id=int(nd["id"]),
                        dim=int(nd.get("dim", 1)),
                        kind=nd.get("kind", "endogenous"),
                        backdoor=tuple(nd.get("backdoor", ())),
                        observed=bool(nd.get("observed", True)),
                        name=nd.get("name"),
                        curve=nd.get("curve"),
                        basis_index=nd.get("basis_index"),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ValidationError(f"nodes[{i}]: {exc}") from None
        edges = []
        for i, e in enumerate(data["edges"]):
            if not isinstance(e, (list, tuple)) or len(e) != 2:
                raise ValidationError(f"edges[{i}]: expected [parent, child]")
            edges.append((int(e[0]), int(e[1])))
        return cls(nodes, edges)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def load(cls, path) -> "CausalGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())

    def __eq__(self, other):
        return isinstance(other, CausalGraph) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"CausalGraph(K={len(self)}, edges={len(self._edges)})"


def simple_graph(edges, n_nodes=None, **node_kw) -> CausalGraph:
    """Scalar-node graph whose backdoor sets default to the parent sets."""
    ids = {u for e in edges for u in e}
    K = n_nodes or (max(ids) if ids else 0)
    parents = {k: [] for k in range(1, K + 1)}
    for u, v in edges:
        parents[v].append(u)
    nodes = [
        NodeSpec(id=k, kind="root" if not parents[k] else "endogenous",
                 backdoor=tuple(parents[k]), **node_kw.get(k, {}))
        for k in range(1, K + 1)
    ]
    return CausalGraph(nodes, edges)
