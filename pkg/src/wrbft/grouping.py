"""Geographic grouping, node weights and weighted election timeouts."""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


class GroupingError(ValueError):
    pass


@dataclass(frozen=True)
class NodeProfile:
    id: int
    position: tuple[float, float]
    dp: float
    storage: float
    snr_row: tuple[float, ...]

    def __post_init__(self):
        if self.dp <= 0 or self.storage <= 0:
            raise GroupingError(f"node {self.id}: dp and storage must be positive")
        if not all(math.isfinite(c) for c in self.position):
            raise GroupingError(f"node {self.id}: coordinates must be finite")

    @property
    def avg_snr(self) -> float:
        return sum(self.snr_row) / len(self.snr_row) if self.snr_row else 0.0


@dataclass(frozen=True)
class GroupAssignment:
    groups: tuple[tuple[int, ...], ...]
    centroids: tuple[tuple[float, float], ...]

    @property
    def k(self) -> int:
        return len(self.groups)

    def group_of(self) -> dict[int, int]:
        return {node: g for g, members in enumerate(self.groups) for node in members}


@dataclass(frozen=True)
class WeightParams:
    alpha: float = 1 / 3
    beta: float = 1 / 3
    gamma: float = 1 / 3
    t1: float = 150.0
    t2: float = 300.0
    beta_t: float = 1.0
    tau: float = 600.0  # wide enough that weight dominates a four-way race
    literal_timeout: bool = False  # printed form: upper bound grows with weight

    def __post_init__(self):
        ws = (self.alpha, self.beta, self.gamma)
        if min(ws) < 0 or not math.isclose(sum(ws), 1.0, abs_tol=1e-9):
            raise GroupingError(f"alpha+beta+gamma must equal 1 with each >= 0, got {ws}")
        if not self.t1 < self.t2:
            raise GroupingError(f"t1 must be < t2, got t1={self.t1}, t2={self.t2}")
        if self.beta_t < 0 or self.tau < 0:
            raise GroupingError("beta_t and tau must be non-negative")


def euclidean_distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def average_snr(node_id: int, snr_matrix, n: int) -> float:
    """Mean SNR of row ``node_id`` over the other n-1 nodes (diagonal ignored)."""
    if n < 2:
        raise GroupingError(f"average SNR needs at least 2 nodes, got {n}")
    row = snr_matrix[node_id]
    return sum(row[j] for j in range(n) if j != node_id) / (n - 1)


def cohort_maxima(profiles: Sequence[NodeProfile]) -> tuple[float, float, float]:
    return (
        max(p.dp for p in profiles),
        max(p.avg_snr for p in profiles),
        max(p.storage for p in profiles),
    )


def node_weight(profile: NodeProfile, maxima: tuple[float, float, float], params: WeightParams) -> float:
    dp_max, snr_max, storage_max = maxima
    if min(maxima) <= 0:
        raise GroupingError(f"weight maxima must be strictly positive, got {maxima}")
    return (
        params.alpha * profile.dp / dp_max
        + params.beta * profile.avg_snr / snr_max
        + params.gamma * profile.storage / storage_max
    )


def group_weights(profiles: Sequence[NodeProfile], assignment: GroupAssignment, params: WeightParams) -> dict[int, float]:
    """Weights with maxima taken over each node's own group."""
    by_id = {p.id: p for p in profiles}
    weights = {}
    for members in assignment.groups:
        cohort = [by_id[i] for i in members]
        maxima = cohort_maxima(cohort)
        if maxima[1] <= 0:
            # a cohort with no positive SNR contributes nothing through that term
            maxima = (maxima[0], 1.0, maxima[2])
        for p in cohort:
            weights[p.id] = min(1.0, max(0.0, node_weight(p, maxima, params)))
    return weights


def timeout_bounds(w: float, params: WeightParams) -> tuple[float, float]:
    if params.literal_timeout:
        return params.t1, params.t2 + params.beta_t * params.tau * w
    return params.t1, params.t2 + params.beta_t * params.tau * (1.0 - w)


def sample_timeout(w: float, params: WeightParams, rng: random.Random) -> float:
    """Draw an election timeout (ms); higher weight means a shorter expected wait."""
    if not 0.0 <= w <= 1.0:
        raise GroupingError(f"weight must lie in [0, 1], got {w}")
    lo, hi = timeout_bounds(w, params)
    return rng.uniform(lo, hi)


def _kmeans(points: np.ndarray, k: int, rng: random.Random, max_iter: int = 100, tol: float = 1e-6):
    n = len(points)
    centroids = points[sorted(rng.sample(range(n), k))].copy()
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
        labels = np.argmin(d, axis=1)
        new = centroids.copy()
        for g in range(k):
            members = points[labels == g]
            if len(members):
                new[g] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(d[np.arange(n), labels]))
                new[g] = points[far]
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        if shift < tol:
            break
    d = np.linalg.norm(points[:, None, :] - centroids[None, :, :], axis=2)
    return np.argmin(d, axis=1), centroids


def _centroid(points: np.ndarray, members: list[int]) -> np.ndarray:
    return points[members].mean(axis=0)


def _rebalance(points: np.ndarray, groups: list[list[int]]) -> list[list[int]]:
    n, k = len(points), len(groups)
    lo, hi = n // k, -(-n // k)
    while max(map(len, groups)) - min(map(len, groups)) > 1:
        sizes = [len(g) for g in groups]
        donors = [g for g in range(k) if sizes[g] > hi] or [g for g in range(k) if sizes[g] > lo]
        receivers = [g for g in range(k) if sizes[g] < lo] or [g for g in range(k) if sizes[g] < hi]
        cents = [_centroid(points, g) if g else None for g in groups]
        best = None
        for g in donors:
            for node in groups[g]:
                dist = float(np.linalg.norm(points[node] - cents[g]))
                key = (-dist, node)
                if best is None or key < best[0]:
                    best = (key, g, node)
        _, src, node = best

        def reach(r):
            target = cents[r] if cents[r] is not None else points[node]
            return (float(np.linalg.norm(points[node] - target)), r)

        dst = min(receivers, key=reach)
        groups[src].remove(node)
        groups[dst].append(node)
    return groups


def group_nodes(profiles: Sequence[NodeProfile], k: int, rng_seed: int = 0) -> GroupAssignment:
    """Seeded K-means on positions followed by a size rebalance (sizes differ by <= 1)."""
    n = len(profiles)
    if k < 1:
        raise GroupingError(f"group count must be >= 1, got {k}")
    if k > n:
        raise GroupingError(f"group count {k} exceeds node count {n}")
    ids = [p.id for p in profiles]
    points = np.array([p.position for p in profiles], dtype=float)
    labels, _ = _kmeans(points, k, random.Random(rng_seed))
    groups = [[i for i in range(n) if labels[i] == g] for g in range(k)]
    groups = _rebalance(points, groups)
    groups = [sorted(g) for g in groups]
    groups.sort(key=lambda g: g[0])
    centroids = tuple(tuple(float(c) for c in _centroid(points, g)) for g in groups)
    return GroupAssignment(tuple(tuple(ids[i] for i in g) for g in groups), centroids)


# -- cohort fixtures -------------------------------------------------------


@dataclass(frozen=True)
class CohortSpec:
    """Distribution used to synthesize a cohort."""

    area: float = 1000.0  # side of the square deployment area, metres
    dp_range: tuple[float, float] = (500.0, 2000.0)  # tx/s
    storage_range: tuple[float, float] = (1e9, 8e9)  # bytes
    snr_ref: float = 50.0  # dB at reference distance
    ref_distance: float = 10.0  # metres
    snr_noise: float = 2.0  # dB std-dev of the per-link shadowing term
    snr_floor: float = 0.0
    snr_ceiling: float = 45.0
    clusters: int = 0  # 0 => uniform placement, else Gaussian hot-spots
    cluster_spread: float = 80.0


def snr_from_distance(d: float, spec: CohortSpec) -> float:
    return spec.snr_ref - 20.0 * math.log10(max(d, spec.ref_distance) / spec.ref_distance)


def synthesize_cohort(n: int, seed: int = 0, spec: CohortSpec | None = None) -> list[NodeProfile]:
    spec = spec or CohortSpec()
    rng = random.Random(f"cohort:{seed}")
    if spec.clusters > 0:
        hubs = [(rng.uniform(0, spec.area), rng.uniform(0, spec.area)) for _ in range(spec.clusters)]
        positions = []
        for i in range(n):
            hx, hy = hubs[i % spec.clusters]
            positions.append((hx + rng.gauss(0, spec.cluster_spread), hy + rng.gauss(0, spec.cluster_spread)))
    else:
        positions = [(rng.uniform(0, spec.area), rng.uniform(0, spec.area)) for _ in range(n)]
    snr = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            value = snr_from_distance(euclidean_distance(positions[i], positions[j]), spec)
            value += rng.gauss(0.0, spec.snr_noise)
            value = min(spec.snr_ceiling, max(spec.snr_floor, value))
            snr[i][j] = snr[j][i] = round(value, 3)
    profiles = []
    for i in range(n):
        profiles.append(
            NodeProfile(
                id=i,
                position=(round(positions[i][0], 3), round(positions[i][1], 3)),
                dp=round(rng.uniform(*spec.dp_range), 3),
                storage=round(rng.uniform(*spec.storage_range)),
                snr_row=tuple(snr[i][j] for j in range(n) if j != i),
            )
        )
    return profiles


def snr_matrix(profiles: Sequence[NodeProfile]) -> list[list[float]]:
    """Rebuild the full N x N matrix (zero diagonal) from the per-node rows."""
    n = len(profiles)
    index = {p.id: i for i, p in enumerate(profiles)}
    out = [[0.0] * n for _ in range(n)]
    for p in profiles:
        i = index[p.id]
        row = iter(p.snr_row)
        for j in range(n):
            if j != i:
                out[i][j] = next(row)
    return out


def load_cohort(path: str | Path) -> list[NodeProfile]:
    """Load a cohort fixture.

    Schema (JSON or YAML)::

        nodes:
          - {id: 0, x: 12.5, y: 40.0, dp: 1200, storage: 4.0e9, snr: [18.2, 9.7, ...]}

    ``snr`` lists the SNR (dB) to every other node in ascending id order.
    """
    import yaml

    data = yaml.safe_load(Path(path).read_text())
    rows = data["nodes"] if isinstance(data, dict) else data
    n = len(rows)
    profiles = []
    for row in rows:
        snr = tuple(float(v) for v in row["snr"])
        if len(snr) != n - 1:
            raise GroupingError(f"node {row['id']}: snr row has {len(snr)} entries, expected {n - 1}")
        profiles.append(
            NodeProfile(
                id=int(row["id"]),
                position=(float(row["x"]), float(row["y"])),
                dp=float(row["dp"]),
                storage=float(row["storage"]),
                snr_row=snr,
            )
        )
    if len({p.id for p in profiles}) != n:
        raise GroupingError("duplicate node id in cohort fixture")
    return profiles


def dump_cohort(profiles: Sequence[NodeProfile], path: str | Path) -> None:
    rows = [
        {"id": p.id, "x": p.position[0], "y": p.position[1], "dp": p.dp, "storage": p.storage, "snr": list(p.snr_row)}
        for p in profiles
    ]
    Path(path).write_text(json.dumps({"nodes": rows}, indent=1) + "\n")
