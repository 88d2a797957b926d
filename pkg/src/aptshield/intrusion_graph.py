"""Attribute intrusion graphs, evidence chains and graph-scale reduction.

Alerts sharing (category, source, target) are merged into one *stage* while
consecutive alerts are no more than ``window_seconds`` apart. The attribute
graph then holds

* one host node per referenced host,
* one stage node per merged cluster,
* one vulnerability node per distinct (category, target host), for categories
  that evidence an exploitable service (see ``VULNERABILITY_CATEGORIES``),
* optionally one permission node per host on which a severity-1 stage gained
  privileges.

Edges: ``host -source-> stage``, ``stage -target-> host``,
``stage -exploits-> vulnerability``, ``stage -grants-> permission`` and
``stage -precedes-> stage``. A stage precedes a later one when the later
stage starts after the earlier one ends and is launched either by the same
actor or from the host the earlier stage hit. Informational stages (severity
grade above ``link_max_severity``) never take part in ``precedes`` edges.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError, NotFoundError
from .gae import GraphData
from .ingest import Alert, format_timestamp, parse_timestamp

NODE_KINDS = ("host", "stage", "vulnerability", "permission")
ZONES = ("dmz", "intranet", "external")
VULNERABILITY_CATEGORIES = frozenset({
    "Decode of an RPC Query",
    "Attempted Administrator Privilege Gain",
    "Access to potentially vulnerable app",
})


@dataclass(frozen=True)
class Host:
    name: str
    zone: str
    services: tuple[str, ...] = ()


@dataclass(frozen=True)
class Topology:
    hosts: tuple[Host, ...]
    reachability: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        names = [h.name for h in self.hosts]
        if len(set(names)) != len(names):
            raise DataError("host names in topology must be unique")
        for h in self.hosts:
            if h.zone not in ZONES:
                raise DataError(f"host {h.name!r} has unknown zone {h.zone!r}")
        known = set(names)
        for src, dst in self.reachability:
            if src not in known or dst not in known:
                raise DataError(f"reachability pair ({src}, {dst}) names an unknown host")

    @property
    def host_names(self) -> list[str]:
        return [h.name for h in self.hosts]

    def to_json(self) -> dict:
        return {
            "hosts": [{"name": h.name, "zone": h.zone, "services": list(h.services)} for h in self.hosts],
            "reachability": [list(p) for p in self.reachability],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Topology":
        try:
            hosts = tuple(Host(h["name"], h["zone"], tuple(h.get("services", ()))) for h in d["hosts"])
            reach = tuple((a, b) for a, b in d.get("reachability", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed topology: {exc}") from None
        return cls(hosts, reach)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Topology":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read topology {path}: {exc}") from None


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    label: str
    timestamp: datetime | None = None


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: str
    timestamp: datetime | None = None


@dataclass(frozen=True)
class Stage:
    node_id: str
    category: str
    severity: int  # most severe grade among member alerts
    src_host: str
    dst_host: str
    start: datetime
    end: datetime
    alerts: tuple[Alert, ...]

    @property
    def hint(self) -> str | None:
        hints = sorted({a.stage_hint for a in self.alerts if a.stage_hint})
        return hints[0] if len(hints) == 1 else None

    @property
    def alert_ids(self) -> list[str]:
        return [a.alert_id for a in self.alerts if a.alert_id is not None]


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


def host_id(name: str) -> str:
    return f"host:{name}"


def vuln_id(category: str, host: str) -> str:
    return f"vuln:{host}:{_slug(category)}"


def perm_id(host: str) -> str:
    return f"perm:root@{host}"


@dataclass(frozen=True)
class IntrusionGraph:
    nodes: tuple[Node, ...] = ()
    edges: tuple[Edge, ...] = ()
    stages: tuple[Stage, ...] = ()

    def __post_init__(self):
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise DomainError("duplicate node ids in intrusion graph")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise DomainError(f"edge {e.src} -> {e.dst} references a missing node")

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def edge_pairs(self) -> set[tuple[str, str]]:
        return {(e.src, e.dst) for e in self.edges}

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise NotFoundError(f"no node {node_id!r}")

    def stage(self, node_id: str) -> Stage:
        for s in self.stages:
            if s.node_id == node_id:
                return s
        raise NotFoundError(f"no stage {node_id!r}")

    def successors(self, node_id: str) -> list[str]:
        return [e.dst for e in self.edges if e.src == node_id]

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"id": n.id, "kind": n.kind, "label": n.label,
                 "timestamp": None if n.timestamp is None else format_timestamp(n.timestamp)}
                for n in self.nodes
            ],
            "edges": [
                {"from": e.src, "to": e.dst, "relation": e.relation,
                 "timestamp": None if e.timestamp is None else format_timestamp(e.timestamp)}
                for e in self.edges
            ],
            "stages": [
                {"id": s.node_id, "category": s.category, "severity": s.severity,
                 "src_host": s.src_host, "dst_host": s.dst_host,
                 "start": format_timestamp(s.start), "end": format_timestamp(s.end),
                 "alerts": [a.to_json() for a in s.alerts]}
                for s in self.stages
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "IntrusionGraph":
        def ts(x):
            return None if x is None else parse_timestamp(x)

        nodes = tuple(Node(n["id"], n["kind"], n["label"], ts(n.get("timestamp"))) for n in d["nodes"])
        edges = tuple(Edge(e["from"], e["to"], e["relation"], ts(e.get("timestamp"))) for e in d["edges"])
        stages = []
        for s in d.get("stages", []):
            alerts = tuple(
                Alert(parse_timestamp(a["timestamp"]), a["category"], a["severity"], a["src_host"],
                      a["dst_host"], a.get("stage_hint"), a.get("id"))
                for a in s["alerts"]
            )
            stages.append(Stage(s["id"], s["category"], s["severity"], s["src_host"], s["dst_host"],
                                parse_timestamp(s["start"]), parse_timestamp(s["end"]), alerts))
        return cls(nodes, edges, tuple(stages))

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    def edge_list(self) -> str:
        """One ``from relation to timestamp`` line per edge."""
        lines = []
        for e in self.edges:
            stamp = "-" if e.timestamp is None else format_timestamp(e.timestamp)
            lines.append(f"{e.src} {e.relation} {e.dst} {stamp}")
        return "\n".join(lines) + ("\n" if lines else "")


def _alert_key(a: Alert):
    return (a.timestamp, a.category, a.src_host, a.dst_host, a.severity, a.alert_id or "", a.stage_hint or "")


def cluster_alerts(alerts: Iterable[Alert], window_seconds: float = 60.0) -> list[list[Alert]]:
    """Group alerts by (category, src, dst) while gaps stay within the window."""
    open_clusters: dict[tuple[str, str, str], list[Alert]] = {}
    clusters: list[list[Alert]] = []
    for a in sorted(alerts, key=_alert_key):
        key = (a.category, a.src_host, a.dst_host)
        current = open_clusters.get(key)
        if current is not None and (a.timestamp - current[-1].timestamp).total_seconds() <= window_seconds:
            current.append(a)
        else:
            current = [a]
            open_clusters[key] = current
            clusters.append(current)
    return clusters


def _precedes(earlier: Stage, later: Stage, link_max_severity: int) -> bool:
    if earlier.severity > link_max_severity or later.severity > link_max_severity:
        return False
    return later.start > earlier.end and later.src_host in (earlier.src_host, earlier.dst_host)


def build_attribute_graph(
    alerts: Sequence[Alert],
    topo: Topology,
    window_seconds: float = 60.0,
    vulnerability_categories: Iterable[str] = VULNERABILITY_CATEGORIES,
    with_permissions: bool = False,
    link_max_severity: int = 2,
) -> IntrusionGraph:
    known = set(topo.host_names)
    for a in alerts:
        for h in (a.src_host, a.dst_host):
            if h not in known:
                raise DataError(f"alert references host {h!r}, which is not in the topology")
    vuln_cats = frozenset(vulnerability_categories)

    clusters = cluster_alerts(alerts, window_seconds)
    clusters.sort(key=lambda c: (c[0].timestamp, c[-1].timestamp, c[0].category, c[0].src_host, c[0].dst_host))
    width = max(3, len(str(len(clusters))))
    stages = [
        Stage(f"stage:{k + 1:0{width}d}", c[0].category, min(a.severity for a in c), c[0].src_host,
              c[0].dst_host, c[0].timestamp, c[-1].timestamp, tuple(c))
        for k, c in enumerate(clusters)
    ]

    nodes: dict[str, Node] = {}
    edges: dict[tuple[str, str], Edge] = {}

    def add_node(node: Node):
        if node.id not in nodes:
            nodes[node.id] = node

    def add_edge(src: str, dst: str, rel: str, ts):
        edges.setdefault((src, dst), Edge(src, dst, rel, ts))

    for name in topo.host_names:
        if any(name in (s.src_host, s.dst_host) for s in stages):
            add_node(Node(host_id(name), "host", name))
    for s in stages:
        add_node(Node(s.node_id, "stage", f"{s.category}: {s.src_host} -> {s.dst_host}", s.start))
        add_edge(host_id(s.src_host), s.node_id, "source", s.start)
        add_edge(s.node_id, host_id(s.dst_host), "target", s.start)
        if s.category in vuln_cats:
            vid = vuln_id(s.category, s.dst_host)
            add_node(Node(vid, "vulnerability", f"{s.category} @ {s.dst_host}", s.start))
            add_edge(s.node_id, vid, "exploits", s.start)
        if with_permissions and s.severity == 1:
            pid = perm_id(s.dst_host)
            add_node(Node(pid, "permission", f"root@{s.dst_host}", s.end))
            add_edge(s.node_id, pid, "grants", s.end)
    for j, later in enumerate(stages):
        for earlier in stages[:j]:
            if _precedes(earlier, later, link_max_severity):
                add_edge(earlier.node_id, later.node_id, "precedes", later.start)

    return IntrusionGraph(tuple(nodes.values()), tuple(edges.values()), tuple(stages))


@dataclass(frozen=True)
class EvidenceChain:
    target_host: str
    stages: tuple[Stage, ...]
    edges: tuple[Edge, ...] = field(default=())

    def __post_init__(self):
        if not self.stages:
            raise DomainError("an evidence chain needs at least one stage")
        for a, b in zip(self.stages, self.stages[1:]):
            if not b.start > a.end:
                raise DomainError(f"stages {a.node_id} and {b.node_id} are not strictly time-ordered")

    @property
    def stage_ids(self) -> list[str]:
        return [s.node_id for s in self.stages]

    def to_json(self) -> dict:
        return {
            "target_host": self.target_host,
            "stages": [
                {"id": s.node_id, "category": s.category, "severity": s.severity, "src_host": s.src_host,
                 "dst_host": s.dst_host, "start": format_timestamp(s.start), "end": format_timestamp(s.end),
                 "hint": s.hint, "alert_ids": s.alert_ids}
                for s in self.stages
            ],
            "edges": [{"from": e.src, "to": e.dst, "relation": e.relation} for e in self.edges],
        }


def _path_rank(path: list[Stage]):
    """Sort key where smaller is better: longest, then heaviest, then earliest, then by id."""
    weight = sum((Fraction(1, s.severity) for s in path), Fraction(0))
    return (-len(path), -weight, path[0].start, [s.node_id for s in path])


def extract_evidence_chain(g: IntrusionGraph, target_host: str) -> EvidenceChain:
    """Best time-respecting stage path ending at a stage that hits ``target_host``.

    Paths are ranked by stage count, then summed inverse severity, then the
    earliest start, then lexicographic stage ids. Stage subgraphs are DAGs in
    time order, so a single forward pass of dynamic programming is exact.
    """
    if host_id(target_host) not in set(g.node_ids):
        raise NotFoundError(f"host {target_host!r} does not appear in the intrusion graph")
    stages = sorted(g.stages, key=lambda s: (s.start, s.node_id))
    by_id = {s.node_id: s for s in stages}
    preds: dict[str, list[str]] = {s.node_id: [] for s in stages}
    for e in g.edges:
        if e.src in by_id and e.dst in by_id:
            preds[e.dst].append(e.src)

    best: dict[str, list[Stage]] = {}
    for s in stages:
        candidates = [[s]] + [best[p] + [s] for p in preds[s.node_id] if p in best]
        best[s.node_id] = min(candidates, key=_path_rank)

    ends = [best[s.node_id] for s in stages if s.dst_host == target_host]
    if not ends:
        raise NotFoundError(f"no stage targets host {target_host!r}")
    path = min(ends, key=_path_rank)
    edge_map = {(e.src, e.dst): e for e in g.edges}
    traversed = tuple(edge_map[(a.node_id, b.node_id)] for a, b in zip(path, path[1:]))
    return EvidenceChain(target_host, tuple(path), traversed)


def chain_subgraph(g: IntrusionGraph, chain: EvidenceChain) -> IntrusionGraph:
    """Subgraph induced by the chain's stages and the hosts, vulnerabilities and
    permissions they touch."""
    if not chain.stages:
        raise DomainError("cannot take the subgraph of an empty chain")
    present = set(g.node_ids)
    keep: set[str] = set()
    for s in chain.stages:
        if s.node_id not in present:
            raise DomainError(f"chain stage {s.node_id} is not in the graph")
        keep.add(s.node_id)
        keep.update(t for t in g.successors(s.node_id) if not t.startswith("stage:"))
        keep.add(host_id(s.src_host))
    missing = keep - present
    if missing:
        raise DomainError(f"chain references nodes absent from the graph: {sorted(missing)}")
    chain_ids = set(chain.stage_ids)
    return IntrusionGraph(
        tuple(n for n in g.nodes if n.id in keep),
        tuple(e for e in g.edges if e.src in keep and e.dst in keep),
        tuple(s for s in g.stages if s.node_id in chain_ids),
    )


@dataclass(frozen=True)
class ReductionReport:
    nodes_before: int
    nodes_after: int
    edges_before: int
    edges_after: int

    @staticmethod
    def _pct(before: int, after: int) -> float:
        return 0.0 if before == 0 else (1.0 - after / before) * 100.0

    @property
    def node_reduction_pct(self) -> float:
        return self._pct(self.nodes_before, self.nodes_after)

    @property
    def edge_reduction_pct(self) -> float:
        return self._pct(self.edges_before, self.edges_after)

    def to_json(self) -> dict:
        return {
            "nodes_before": self.nodes_before,
            "nodes_after": self.nodes_after,
            "edges_before": self.edges_before,
            "edges_after": self.edges_after,
            "node_reduction_pct": round(self.node_reduction_pct, 2),
            "edge_reduction_pct": round(self.edge_reduction_pct, 2),
        }


def reduction_report(before: IntrusionGraph, after: IntrusionGraph) -> ReductionReport:
    extra_nodes = set(after.node_ids) - set(before.node_ids)
    extra_edges = after.edge_pairs - before.edge_pairs
    if extra_nodes or extra_edges:
        raise DomainError(
            f"reduced graph is not a subgraph: {len(extra_nodes)} extra nodes, {len(extra_edges)} extra edges"
        )
    return ReductionReport(len(before.nodes), len(after.nodes), len(before.edges), len(after.edges))


def graph_to_gae_input(g: IntrusionGraph) -> GraphData:
    """Symmetrised 0/1 adjacency plus identity and node-kind indicator features."""
    if not g.nodes:
        raise DomainError("cannot convert an empty graph")
    ids = g.node_ids
    index = {nid: i for i, nid in enumerate(ids)}
    n = len(ids)
    A = np.zeros((n, n))
    for e in g.edges:
        i, j = index[e.src], index[e.dst]
        if i != j:
            A[i, j] = A[j, i] = 1.0
    kinds = np.zeros((n, len(NODE_KINDS)))
    for i, node in enumerate(g.nodes):
        kinds[i, NODE_KINDS.index(node.kind)] = 1.0
    return GraphData(A, np.hstack([np.eye(n), kinds]), ids)
