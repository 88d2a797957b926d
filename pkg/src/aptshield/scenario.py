"""Deterministic five-stage APT campaign generator.

The campaign mirrors the classic sadmind/mstream replay: a remote host scans
a victim, probes its RPC service, breaks in for root, pushes a DDoS agent to a
second internal host (the zombie), and the zombie finally floods the victim.
Background flows and noise alerts are interleaved. Every random draw comes
from one PCG64 stream seeded by ``ScenarioConfig.seed``.

With ``calibrated=True`` the victim is ``mill``, the zombie is ``pascal``,
random noise is replaced by one off-chain decoy alert, and the attribute graph has
exactly 12 nodes / 26 edges while the evidence-chain subgraph has 10 / 19.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DomainError
from .ingest import Alert, FlowDataset, FlowSchema, format_timestamp, parse_timestamp, write_alerts, write_flow_csv
from .intrusion_graph import Host, Topology
from .numerics import make_rng

# Alert taxonomy with (severity, count in the reference replay).
ALERT_TAXONOMY: dict[str, tuple[int, int]] = {
    "Misc activity": (3, 672),
    "Potentially Bad Traffic": (2, 5),
    "Misc Intrusion": (2, 55),
    "Not Suspicious Traffic": (3, 15),
    "Attempted Information Leak": (2, 50),
    "Access to potentially vulnerable app": (2, 18),
    "Decode of an RPC Query": (2, 92),
    "Attempted Administrator Privilege Gain": (1, 19),
}

STAGE_KINDS = ("scan", "probe", "exploit", "implant", "ddos")
STAGE_CATEGORY = {
    "scan": "Attempted Information Leak",
    "probe": "Decode of an RPC Query",
    "exploit": "Attempted Administrator Privilege Gain",
    "implant": "Misc Intrusion",
    "ddos": "Potentially Bad Traffic",
}
NOISE_CATEGORIES = tuple(c for c in ALERT_TAXONOMY if c not in STAGE_CATEGORY.values())
NORMAL = "normal"

ATTACKER = "attacker"
BASE_HOSTS = (
    Host(ATTACKER, "external", ()),
    Host("loche", "dmz", ("http", "sunrpc")),
    Host("zero", "intranet", ("nfs", "sunrpc")),
    Host("pascal", "intranet", ("nfs", "sunrpc")),
    Host("mill", "intranet", ("domain", "sunrpc")),
    Host("mail", "intranet", ("smtp", "sunrpc")),
)
CAMPAIGN_CANDIDATES = ("loche", "zero", "pascal", "mill", "mail")

FLOW_SCHEMA = FlowSchema((
    ("flow_id", "meta"),
    ("timestamp", "meta"),
    ("src_host", "meta"),
    ("dst_host", "meta"),
    ("duration", "numeric"),
    ("src_bytes", "numeric"),
    ("dst_bytes", "numeric"),
    ("pkt_rate", "numeric"),
    ("protocol", "categorical"),
    ("service", "categorical"),
    ("flag", "categorical"),
    ("label", "label"),
))

EPOCH = datetime(2000, 3, 7, 14, 0, 0, tzinfo=timezone.utc)
MIN_STAGE_GAP = 200.0
_ALERTS_PER_STAGE = {"scan": (4, 7), "probe": (3, 5), "exploit": (2, 4), "implant": (3, 5), "ddos": (4, 8)}
_FLOWS_PER_STAGE = {"scan": (35, 50), "probe": (12, 18), "exploit": (8, 12), "implant": (10, 15), "ddos": (50, 70)}


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 7
    n_background_flows: int = 2000
    n_hosts: int = 6
    stage_gap_seconds: float = 600.0
    noise_alert_rate: float = 0.2  # expected noise alerts per campaign alert
    calibrated: bool = False

    def __post_init__(self):
        if self.n_hosts < len(BASE_HOSTS):
            raise ConfigError(f"n_hosts must be at least {len(BASE_HOSTS)}, got {self.n_hosts}")
        if self.n_background_flows < 0:
            raise ConfigError("n_background_flows must be non-negative")
        if not self.stage_gap_seconds >= MIN_STAGE_GAP:
            raise ConfigError(f"stage_gap_seconds must be at least {MIN_STAGE_GAP}")
        if not self.noise_alert_rate >= 0:
            raise ConfigError("noise_alert_rate must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass(frozen=True)
class StageTruth:
    kind: str
    category: str
    severity: int
    src: str
    dst: str
    start: datetime
    end: datetime
    alert_ids: tuple[str, ...]
    n_flows: int


@dataclass(frozen=True)
class GroundTruth:
    seed: int
    target_host: str
    stages: tuple[StageTruth, ...]
    flow_labels: tuple[str, ...]
    flow_digest: str
    noise_alert_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if tuple(s.kind for s in self.stages) != STAGE_KINDS:
            raise DomainError("ground truth must list the five stages in campaign order")
        for a, b in zip(self.stages, self.stages[1:]):
            if not a.end < b.start:
                raise DomainError("stage windows must be disjoint and increasing")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "target_host": self.target_host,
            "stages": [
                {"kind": s.kind, "category": s.category, "severity": s.severity, "src": s.src, "dst": s.dst,
                 "start": format_timestamp(s.start), "end": format_timestamp(s.end),
                 "alert_ids": list(s.alert_ids), "n_flows": s.n_flows}
                for s in self.stages
            ],
            "flow_labels": list(self.flow_labels),
            "flow_digest": self.flow_digest,
            "noise_alert_ids": list(self.noise_alert_ids),
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        try:
            stages = tuple(
                StageTruth(s["kind"], s["category"], s["severity"], s["src"], s["dst"],
                           parse_timestamp(s["start"]), parse_timestamp(s["end"]),
                           tuple(s["alert_ids"]), s["n_flows"])
                for s in d["stages"]
            )
            return cls(d["seed"], d["target_host"], stages, tuple(d["flow_labels"]), d["flow_digest"],
                       tuple(d.get("noise_alert_ids", ())))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed ground truth: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read ground truth {path}: {exc}") from None


@dataclass
class Scenario:
    flows: FlowDataset
    alerts: list[Alert]
    topology: Topology
    truth: GroundTruth


def build_topology(n_hosts: int) -> Topology:
    extra = tuple(Host(f"ws{i:02d}", "intranet", ("http",)) for i in range(1, n_hosts - len(BASE_HOSTS) + 1))
    hosts = BASE_HOSTS + extra
    reach = []
    for a in hosts:
        for b in hosts:
            if a.name == b.name:
                continue
            # the perimeter firewall still lets the outside reach every host; egress is open
            reach.append((a.name, b.name))
    return Topology(hosts, tuple(reach))


def _flow_digest(ds: FlowDataset) -> str:
    h = hashlib.sha256()
    for fid, ts in zip(ds.column("flow_id"), ds.column("timestamp")):
        h.update(f"{fid}|{ts}\n".encode())
    return h.hexdigest()


def _ms(rng, lo: float, hi: float) -> int:
    return int(rng.integers(int(lo * 1000), int(hi * 1000) + 1))


def _stage_features(kind: str, rng) -> tuple:
    u = rng.uniform
    if kind == "scan":
        return (u(0, 0.05), u(0, 60), u(0, 40), u(80, 250),
                str(rng.choice(["icmp", "tcp"])), str(rng.choice(["ecr_i", "private"])), str(rng.choice(["REJ", "S0"])))
    if kind == "probe":
        return (u(0, 0.2), u(100, 300), u(60, 200), u(5, 20), "udp", "sunrpc", "SF")
    if kind == "exploit":
        return (u(1, 5), u(1500, 4000), u(200, 800), u(10, 50), "tcp", "sunrpc", "SF")
    if kind == "implant":
        return (u(30, 120), u(5000, 20000), u(1000, 5000), u(5, 30), "tcp",
                str(rng.choice(["telnet", "ftp_data"])), "SF")
    if kind == "ddos":
        return (u(0, 0.02), u(800, 1500), u(0, 20), u(600, 1000),
                str(rng.choice(["udp", "icmp"])), str(rng.choice(["private", "ecr_i"])), "SF")
    raise ValueError(kind)


_NORMAL_SERVICES = (("tcp", "http", 0.55), ("tcp", "smtp", 0.15), ("udp", "domain", 0.15),
                    ("tcp", "ftp", 0.07), ("udp", "nfs", 0.08))


def _normal_features(rng) -> tuple:
    probs = np.array([p for _, _, p in _NORMAL_SERVICES])
    proto, service, _ = _NORMAL_SERVICES[int(rng.choice(len(probs), p=probs / probs.sum()))]
    flag = str(rng.choice(["SF", "S0", "REJ"], p=[0.94, 0.03, 0.03]))
    return (rng.uniform(0.05, 30), rng.uniform(200, 5000), rng.uniform(500, 50000), rng.uniform(1, 100),
            proto, service, flag)


def _round_features(feat: tuple) -> tuple:
    return tuple(round(float(x), 4) for x in feat[:4]) + feat[4:]


def generate(cfg: ScenarioConfig) -> Scenario:
    rng = make_rng(cfg.seed)
    topo = build_topology(cfg.n_hosts)
    if cfg.calibrated:
        victim, zombie = "mill", "pascal"
    else:
        victim = str(rng.choice(CAMPAIGN_CANDIDATES))
        zombie = str(rng.choice([h for h in CAMPAIGN_CANDIDATES if h != victim]))
    roles = {
        "scan": (ATTACKER, victim),
        "probe": (ATTACKER, victim),
        "exploit": (ATTACKER, victim),
        "implant": (victim, zombie),
        "ddos": (zombie, victim),
    }
    gap_ms = int(cfg.stage_gap_seconds * 1000)

    # campaign alerts; offsets in integer milliseconds from EPOCH
    campaign: list[tuple[int, str, str, str, str]] = []  # (t, kind, category, src, dst)
    windows: dict[str, tuple[int, int]] = {}
    for k, kind in enumerate(STAGE_KINDS):
        lo, hi = _ALERTS_PER_STAGE[kind]
        n = int(rng.integers(lo, hi + 1))
        t = k * gap_ms + _ms(rng, 0, 30)
        times = [t]
        for _ in range(n - 1):
            t += _ms(rng, 1, 20)
            times.append(t)
        src, dst = roles[kind]
        windows[kind] = (times[0], times[-1])
        campaign.extend((ti, kind, STAGE_CATEGORY[kind], src, dst) for ti in times)

    span_lo, span_hi = -gap_ms, len(STAGE_KINDS) * gap_ms
    noise: list[tuple[int, str, str, str]] = []  # (t, category, src, dst)
    bystanders = [h for h in topo.host_names if h != ATTACKER]
    if cfg.calibrated:
        end = windows["ddos"][1]
        # a second, off-chain lateral-movement attempt after the flood
        noise.append((end + gap_ms // 2, STAGE_CATEGORY["implant"], victim, "zero"))
    else:
        n_noise = int(round(cfg.noise_alert_rate * len(campaign)))
        weights = np.array([ALERT_TAXONOMY[c][1] for c in NOISE_CATEGORIES], dtype=float)
        for _ in range(n_noise):
            cat = NOISE_CATEGORIES[int(rng.choice(len(weights), p=weights / weights.sum()))]
            src, dst = (str(x) for x in rng.choice(bystanders, size=2, replace=False))
            noise.append((int(rng.integers(span_lo, span_hi)), cat, src, dst))

    alerts: list[Alert] = []
    stage_alert_ids: dict[str, list[str]] = {k: [] for k in STAGE_KINDS}
    noise_ids = []
    for i, (t, kind, cat, src, dst) in enumerate(campaign):
        aid = f"a{i + 1:04d}"
        stage_alert_ids[kind].append(aid)
        alerts.append(Alert(EPOCH + timedelta(milliseconds=t), cat, ALERT_TAXONOMY[cat][0], src, dst, kind, aid))
    for i, (t, cat, src, dst) in enumerate(noise):
        aid = f"n{i + 1:04d}"
        noise_ids.append(aid)
        alerts.append(Alert(EPOCH + timedelta(milliseconds=t), cat, ALERT_TAXONOMY[cat][0], src, dst, None, aid))
    alerts.sort(key=lambda a: (a.timestamp, a.alert_id))

    # flows: stage flows inside their stage windows, background everywhere else
    flows: list[tuple[int, str, str, tuple, str]] = []
    stage_flow_counts = {}
    for kind in STAGE_KINDS:
        lo, hi = _FLOWS_PER_STAGE[kind]
        n = int(rng.integers(lo, hi + 1))
        stage_flow_counts[kind] = n
        w0, w1 = windows[kind]
        src, dst = roles[kind]
        for _ in range(n):
            flows.append((int(rng.integers(w0, w1 + 1)), src, dst, _stage_features(kind, rng), kind))
    campaign_pairs = {(roles[k], windows[k]) for k in STAGE_KINDS}
    for _ in range(cfg.n_background_flows):
        src, dst = (str(x) for x in rng.choice(bystanders, size=2, replace=False))
        while True:
            t = int(rng.integers(span_lo, span_hi))
            if not any((src, dst) == pair and w[0] <= t <= w[1] for pair, w in campaign_pairs):
                break
        flows.append((t, src, dst, _normal_features(rng), NORMAL))
    flows.sort(key=lambda f: f[0])  # stable: equal times keep generation order

    rows = []
    for i, (t, src, dst, feat, label) in enumerate(flows):
        ts = format_timestamp(EPOCH + timedelta(milliseconds=t))
        rows.append((f"f{i + 1:05d}", ts, src, dst) + _round_features(feat) + (label,))
    ds = FlowDataset(FLOW_SCHEMA, tuple(rows))

    stages = tuple(
        StageTruth(kind, STAGE_CATEGORY[kind], ALERT_TAXONOMY[STAGE_CATEGORY[kind]][0], *roles[kind],
                   EPOCH + timedelta(milliseconds=windows[kind][0]), EPOCH + timedelta(milliseconds=windows[kind][1]),
                   tuple(stage_alert_ids[kind]), stage_flow_counts[kind])
        for kind in STAGE_KINDS
    )
    truth = GroundTruth(cfg.seed, victim, stages, tuple(r[-1] for r in rows), _flow_digest(ds), tuple(noise_ids))
    return Scenario(ds, alerts, topo, truth)


def label_flows(gt: GroundTruth, ds: FlowDataset) -> list[str]:
    """Label each flow ``normal`` or with the stage whose window and endpoints it matches."""
    for col in ("flow_id", "timestamp", "src_host", "dst_host"):
        if col not in ds.schema.names:
            raise DomainError(f"dataset lacks the {col!r} column needed to match ground truth")
    if len(ds) != len(gt.flow_labels) or _flow_digest(ds) != gt.flow_digest:
        raise DomainError("flow dataset was not generated together with this ground truth")
    labels = []
    for ts, src, dst in zip(ds.column("timestamp"), ds.column("src_host"), ds.column("dst_host")):
        t = parse_timestamp(ts)
        label = NORMAL
        for s in gt.stages:
            if (src, dst) == (s.src, s.dst) and s.start <= t <= s.end:
                label = s.kind
                break
        labels.append(label)
    return labels


SCENARIO_FILES = {
    "flows": "flows.csv",
    "alerts": "alerts.jsonl",
    "topology": "topology.json",
    "truth": "ground_truth.json",
}


def write_scenario(sc: Scenario, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    paths = {k: out / v for k, v in SCENARIO_FILES.items()}
    write_flow_csv(sc.flows, paths["flows"])
    write_alerts(sc.alerts, paths["alerts"])
    sc.topology.save(paths["topology"])
    sc.truth.save(paths["truth"])
    return paths


def two_community_graph(n: int = 20, p_in: float = 0.8, p_out: float = 0.02, seed: int = 0) -> np.ndarray:
    """Symmetric 0/1 adjacency of two equal blocks, dense inside and sparse across."""
    if n < 4 or n % 2:
        raise DomainError(f"two-community graphs need an even n >= 4, got {n}")
    if not (0.0 <= p_out <= 1.0 and 0.0 <= p_in <= 1.0):
        raise DomainError("edge probabilities must lie in [0, 1]")
    rng = make_rng(seed)
    half = n // 2
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            p = p_in if (i < half) == (j < half) else p_out
            if rng.random() < p:
                A[i, j] = A[j, i] = 1.0
    return A


def plant_rewired_node(A, seed: int = 0) -> tuple[np.ndarray, int]:
    """Rewire one random node of a two-community graph so its edges straddle both blocks.

    The node keeps its degree (at least 4); half of its new neighbours come
    from its own block and half from the other, each drawn at random.
    """
    A = np.array(A, dtype=np.float64)
    n = A.shape[0]
    half = n // 2
    rng = make_rng(seed)
    v = int(rng.integers(n))
    degree = min(max(int(A[v].sum()), 4), 2 * (half - 1))
    A[v, :] = 0.0
    A[:, v] = 0.0
    own = [u for u in range(n) if u != v and (u < half) == (v < half)]
    other = [u for u in range(n) if (u < half) != (v < half)]
    k = degree // 2
    for u in list(rng.choice(own, size=degree - k, replace=False)) + list(rng.choice(other, size=k, replace=False)):
        A[v, u] = A[u, v] = 1.0
    return A, v
