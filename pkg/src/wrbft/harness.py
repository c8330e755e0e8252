"""Experiment orchestration: run a config, derive metrics and a verdict, sweep, emit reports."""
from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .config import ByzantineFault, ConfigError, CrashFault, ExperimentConfig, FaultSpec
from .grouping import WeightParams
from .identity import Signer, make_keyring
from .intra import IntraNode, survivable_crashes
from .ledger import Chain, StoragePool
from .network import Network, build_cohort, build_network, region_groups
from .simnet import CommitRecord, CostModel, DelayModel, Simulator, energy_proxy

SAFE = "safe"
LIVENESS_FAILURE = "liveness_failure"
AGREEMENT_VIOLATION = "agreement_violation"
ERROR = "error"

CSV_COLUMNS = ("protocol", "N", "K", "seed", "mean_latency_us", "throughput_tps", "sys_energy", "mean_energy", "msgs_total", "verdict")


def max_faulty(n: int, k: int) -> int:
    """Largest tolerated fault count: floor(-K/6 + N/2 - 1/3), never below 0."""
    if not isinstance(n, int) or not isinstance(k, int) or k < 1 or n < 1:
        raise ValueError(f"need integers 1 <= K <= N, got N={n!r}, K={k!r}")
    if k > n:
        raise ValueError(f"K={k} exceeds N={n}")
    return max(0, math.floor(Fraction(-k, 6) + Fraction(n, 2) - Fraction(1, 3)))


def expected_round_us(cfg: ExperimentConfig) -> int:
    """Nominal fault-free round: two intra legs out and back plus the five inter legs."""
    intra = cfg.delay.get("intra_base_us", 5_000)
    inter = cfg.delay.get("inter_base_us", 15_000)
    return int(4 * intra + 5 * inter)


@dataclass
class MetricsReport:
    protocol: str
    N: int
    K: int
    seed: int
    verdict: str
    latencies_us: dict[int, int] = field(default_factory=dict)
    mean_latency_us: float = float("nan")
    throughput_tps: float = 0.0
    sys_energy: float = 0.0
    mean_energy: float = 0.0
    msgs_total: int = 0
    msgs_by_kind: dict[str, int] = field(default_factory=dict)
    hashes_total: int = 0
    invalid_dropped: int = 0
    committed_height: int = 0
    end_time_us: int = 0
    detail: str = ""
    config: dict = field(default_factory=dict)

    @property
    def mean_latency_ms(self) -> float:
        return self.mean_latency_us / 1000.0

    def row(self) -> dict:
        return {c: _fmt(getattr(self, c)) for c in CSV_COLUMNS}

    def to_json(self) -> str:
        data = asdict(self)
        data["latencies_us"] = {str(h): v for h, v in sorted(self.latencies_us.items())}
        data["msgs_by_kind"] = dict(sorted(self.msgs_by_kind.items()))
        data["mean_latency_us"] = _fmt(self.mean_latency_us)
        data["throughput_tps"] = _fmt(self.throughput_tps)
        data["sys_energy"] = _fmt(self.sys_energy)
        data["mean_energy"] = _fmt(self.mean_energy)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> MetricsReport:
        data = json.loads(line)
        data["latencies_us"] = {int(h): v for h, v in data["latencies_us"].items()}
        for key in ("mean_latency_us", "throughput_tps", "sys_energy", "mean_energy"):
            data[key] = float(data[key])
        return cls(**data)


def _fmt(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return float(f"{value:.6f}")
    return value


# -- verdicts ----------------------------------------------------------------


def agreement_violations(net: Network) -> list[str]:
    """Heights where two honest nodes hold different blocks."""
    problems = []
    by_height: dict[int, set[bytes]] = {}
    for i in net.honest:
        for block in net.chains[i].blocks:
            by_height.setdefault(block.height, set()).add(block.block_hash)
    for rec in net.sim.commits:
        if rec.node not in net.faulty:
            by_height.setdefault(rec.height, set()).add(rec.block_hash)
    for height, hashes in sorted(by_height.items()):
        if len(hashes) > 1:
            problems.append(f"height {height}: {len(hashes)} distinct honest blocks")
    return problems


def _first_commits(commits: Iterable[CommitRecord], faulty: set[int]) -> dict[int, CommitRecord]:
    first: dict[int, CommitRecord] = {}
    for rec in commits:
        if rec.node in faulty:
            continue
        cur = first.get(rec.height)
        if cur is None or rec.time < cur.time:
            first[rec.height] = rec
    return first


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> MetricsReport:
    """Run one configured experiment to the target height (or the time cap)."""
    net = build_network(cfg)
    sim = net.sim
    target = cfg.blocks_to_commit
    honest = set(net.honest)
    state = {"height": 0, "reached_at": None}

    def on_commit(rec: CommitRecord) -> None:
        if rec.node in honest and rec.height > state["height"]:
            state["height"] = rec.height
            if rec.height >= target and state["reached_at"] is None:
                state["reached_at"] = rec.time

    sim.on_commit(on_commit)
    cap = int(cfg.time_cap_factor * expected_round_us(cfg))
    sim.start()
    snapshot = sim.run_until(lambda s: state["reached_at"] is not None, time_cap=cap)
    if state["reached_at"] is not None:
        snapshot = sim.run_until(None, time_cap=min(cap, sim.clock + cfg.grace_us))

    violations = agreement_violations(net)
    if violations:
        verdict, detail = AGREEMENT_VIOLATION, violations[0]
    elif state["reached_at"] is None:
        verdict, detail = LIVENESS_FAILURE, f"height {state['height']} of {target} after {sim.clock} us"
    else:
        verdict, detail = SAFE, ""

    first = _first_commits(snapshot.commits, net.faulty)
    lat = {}
    for h in range(cfg.warmup_blocks + 1, target + 1):
        rec = min(
            (r for r in snapshot.commits if r.height == h and r.node not in net.faulty and r.proposal_time >= 0),
            key=lambda r: r.time,
            default=None,
        )
        if rec is not None:
            lat[h] = rec.time - rec.proposal_time
    mean_lat = sum(lat.values()) / len(lat) if lat else float("nan")

    tps = 0.0
    start_h = cfg.warmup_blocks
    end_h = min(target, max(first) if first else 0)
    if end_h > start_h and (start_h == 0 or start_h in first):
        t0 = first[start_h].time if start_h in first else 0
        tx = sum(first[h].tx_count for h in range(start_h + 1, end_h + 1) if h in first)
        dt = first[end_h].time - t0
        tps = tx / (dt / 1e6) if dt > 0 else 0.0

    counters = snapshot.counters
    sys_e, mean_e = energy_proxy(counters, cfg.c_msg, cfg.c_hash, cfg.N)
    report = MetricsReport(
        protocol=cfg.protocol,
        N=cfg.N,
        K=cfg.K,
        seed=cfg.seed,
        verdict=verdict,
        latencies_us=lat,
        mean_latency_us=mean_lat,
        throughput_tps=tps,
        sys_energy=sys_e,
        mean_energy=mean_e,
        msgs_total=counters.total_messages,
        msgs_by_kind=dict(counters.by_kind),
        hashes_total=counters.total_hashes,
        invalid_dropped=sum(counters.invalid_dropped.values()),
        committed_height=state["height"],
        end_time_us=sim.clock,
        detail=detail,
        config=cfg.to_dict(),
    )
    out_dir = out_dir or cfg.output
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.protocol}_N{cfg.N}_K{cfg.K}_s{cfg.seed}"
        if cfg.record_trace:
            sim.export_trace(out / f"{stem}.trace.ndjson")
        (out / f"{stem}.report.json").write_text(report.to_json() + "\n")
    run_experiment.last_network = net  # handy for tests and debugging
    return report


run_experiment.last_network = None


# -- sweeps and reports ----------------------------------------------------


def run_sweep(base: ExperimentConfig, axis: str, values: Sequence[int]) -> list[MetricsReport]:
    """One run per value with seed = base.seed + index; the cohort stays fixed."""
    if axis not in ("N", "K"):
        raise ConfigError([f"sweep axis must be N or K, got {axis!r}"])
    reports = []
    cohort_seed = base.cohort_seed if base.cohort_seed is not None else base.seed
    for idx, value in enumerate(values):
        try:
            cfg = base.replace(**{axis: value, "seed": base.seed + idx, "cohort_seed": cohort_seed})
            reports.append(run_experiment(cfg))
        except Exception as exc:  # a failing member is marked, the sweep goes on
            k = value if axis == "K" else base.K
            n = value if axis == "N" else base.N
            reports.append(MetricsReport(base.protocol, n, k, base.seed + idx, ERROR, detail=f"{type(exc).__name__}: {exc}"))
    return reports


def render_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.row())
    return buf.getvalue()


def emit_report(reports: Sequence[MetricsReport], path: str | Path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        text = render_csv(reports)
    elif fmt in ("jsonl", "json-lines"):
        text = "".join(r.to_json() + "\n" for r in reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    path.write_text(text)
    return path


def load_reports(path: str | Path) -> list[MetricsReport]:
    return [MetricsReport.from_json(line) for line in Path(path).read_text().splitlines() if line.strip()]


# -- single-group elections -----------------------------------------------


def election_trial(weights: Sequence[float], seed: int, params: WeightParams | None = None) -> int:
    """Index of the node that wins the first election of a fresh weighted-Raft group.

    All members start together as followers; delays, CPU costs and timeouts
    follow the default models, seeded by ``seed``.
    """
    params = params or WeightParams()
    ids = list(range(len(weights)))
    costs = CostModel()
    sim = Simulator(DelayModel(region={i: 0 for i in ids}), costs, seed=seed, record_trace=False)
    keyring, secrets = make_keyring(ids, "toy", seed)
    winner: list[int] = []
    for i, w in enumerate(weights):
        signer = Signer(i, secrets[i], keyring, costs)
        node = IntraNode(i, 0, ids, signer, Chain(), StoragePool(1), w, params, random.Random(f"election:{seed}:{i}"), 0, 1)
        node.on_leader = lambda i=i: winner.append(i)
        signer.owner = node
        sim.add(i, node)
    sim.start()
    sim.run_until(lambda s: bool(winner), time_cap=60_000_000)
    if not winner:
        raise RuntimeError(f"no leader elected within 60 s (seed {seed})")
    return winner[0]


# -- fault placement -----------------------------------------------------------


def groups_for(cfg: ExperimentConfig) -> tuple[tuple[int, ...], ...]:
    return region_groups(cfg, build_cohort(cfg)).groups


def place_faults(
    cfg: ExperimentConfig,
    byzantine_groups: int = 0,
    behaviors: Sequence[str] = ("silent",),
    crashes_per_group: int | None = None,
    crash_window_us: int = 1_000_000,
    rng: random.Random | None = None,
) -> FaultSpec:
    """Byzantine nodes in ``byzantine_groups`` distinct groups plus crash faults.

    Crashes are drawn per group (at most as many as the group survives, and
    never more than ``crashes_per_group``) at seeded times within ``crash_window_us``.
    """
    rng = rng or random.Random(f"faults:{cfg.seed}")
    groups = groups_for(cfg)
    if byzantine_groups > len(groups):
        raise ConfigError([f"cannot place {byzantine_groups} byzantine leaders in {len(groups)} groups"])
    byz_group_ids = sorted(rng.sample(range(len(groups)), byzantine_groups))
    byz = []
    for n, gid in enumerate(byz_group_ids):
        node = rng.choice(groups[gid])
        byz.append(ByzantineFault(node, behaviors[n % len(behaviors)], 0))
    crashed = []
    if crashes_per_group:
        taken = {b.node for b in byz}
        for members in groups:
            budget = min(survivable_crashes(len(members)), crashes_per_group)
            candidates = [m for m in members if m not in taken]
            count = rng.randint(0, budget)
            for node in sorted(rng.sample(candidates, min(count, len(candidates)))):
                crashed.append(CrashFault(node, rng.randrange(0, crash_window_us)))
    return FaultSpec(tuple(crashed), tuple(byz))
