"""Experiment configuration: schema, defaults, validation and fault specs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

from .simnet import BYZANTINE_BEHAVIORS

PROTOCOLS = ("wrbft", "raft", "pbft")
BACKENDS = ("toy", "bls12_381")


class ConfigError(ValueError):
    """One or more configuration problems; ``problems`` lists all of them."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class CrashFault:
    node: int
    at_us: int = 0


@dataclass(frozen=True)
class ByzantineFault:
    node: int
    behavior: str
    at_us: int = 0


@dataclass(frozen=True)
class FaultSpec:
    crashed: tuple[CrashFault, ...] = ()
    byzantine: tuple[ByzantineFault, ...] = ()

    def is_empty(self) -> bool:
        return not self.crashed and not self.byzantine


def parse_fault_spec(text: str) -> FaultSpec:
    """Parse ``crash:3@200000,byz:7:equivocate`` style specs (times in µs).

    An empty string or ``none`` means fault-free.
    """
    crashed, byz = [], []
    text = text.strip()
    if text in ("", "none"):
        return FaultSpec()
    for item in text.split(","):
        item = item.strip()
        body, _, at = item.partition("@")
        parts = body.split(":")
        try:
            at_us = int(at) if at else 0
            if parts[0] == "crash" and len(parts) == 2:
                crashed.append(CrashFault(int(parts[1]), at_us))
            elif parts[0] == "byz" and len(parts) == 3:
                byz.append(ByzantineFault(int(parts[1]), parts[2], at_us))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError([f"faults: cannot parse {item!r} (expected crash:<node>[@us] or byz:<node>:<behavior>[@us])"]) from None
    return FaultSpec(tuple(crashed), tuple(byz))


def format_fault_spec(spec: FaultSpec) -> str:
    items = [f"crash:{c.node}@{c.at_us}" for c in spec.crashed]
    items += [f"byz:{b.node}:{b.behavior}@{b.at_us}" for b in spec.byzantine]
    return ",".join(items) or "none"


def _fault_spec_from(value) -> FaultSpec:
    if value is None:
        return FaultSpec()
    if isinstance(value, FaultSpec):
        return value
    if isinstance(value, str):
        return parse_fault_spec(value)
    if isinstance(value, Mapping):
        unknown = set(value) - {"crashed", "byzantine"}
        if unknown:
            raise ConfigError([f"faults: unknown key(s) {sorted(unknown)}"])
        crashed = tuple(CrashFault(int(c["node"]), int(c.get("at_us", 0))) for c in value.get("crashed", ()))
        byz = tuple(ByzantineFault(int(b["node"]), str(b["behavior"]), int(b.get("at_us", 0))) for b in value.get("byzantine", ()))
        return FaultSpec(crashed, byz)
    raise ConfigError([f"faults: unsupported value {value!r}"])


@dataclass(frozen=True)
class ExperimentConfig:
    protocol: str = "wrbft"
    N: int = 40
    K: int = 4
    tx_per_block: int = 2000
    blocks_to_commit: int = 10
    epsilon: float = 0.8
    seed: int = 0
    cohort_seed: int | None = None  # cohort and grouping seed; defaults to ``seed``
    crypto_backend: str = "toy"
    payload_bytes: int = 64
    block_capacity: int = 2000
    weight_params: dict = field(default_factory=dict)  # WeightParams overrides
    delay: dict = field(default_factory=dict)  # DelayModel overrides
    costs: dict = field(default_factory=dict)  # CostModel overrides
    inter_timing: dict = field(default_factory=dict)  # InterTiming overrides
    cohort: str | None = None  # fixture path; synthesized when absent
    cohort_clusters: int = 0
    faults: FaultSpec = field(default_factory=FaultSpec)
    c_msg: float = 1.0
    c_hash: float = 0.1
    time_cap_factor: float = 1000.0
    grace_us: int = 500_000
    warmup_blocks: int = 1
    record_trace: bool = True
    output: str | None = None

    @property
    def topology_seed(self) -> int:
        return self.seed if self.cohort_seed is None else self.cohort_seed

    def to_dict(self) -> dict:
        out = asdict(self)
        out["faults"] = format_fault_spec(self.faults)
        return out

    def echo(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def replace(self, **changes) -> ExperimentConfig:
        data = self.to_dict()
        data.update(changes)
        return load_config(data)


_FIELD_NAMES = tuple(f.name for f in fields(ExperimentConfig))
_SUB_KEYS = {
    "weight_params": {"alpha", "beta", "gamma", "t1", "t2", "beta_t", "tau", "literal_timeout"},
    "delay": {"intra_base_us", "inter_base_us", "jitter", "snr_penalty_max_us", "snr_full_db", "bandwidth_bytes_per_us", "control_bytes"},
    "costs": {"handle", "sign", "verify", "aggregate_per_signer", "verify_aggregate", "vrf_prove", "vrf_verify", "hash_per_kb"},
    "inter_timing": {"view_timeout_us", "claim_window_us", "batch_wait_us"},
}


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every domain violation in ``cfg`` (empty when valid)."""
    p: list[str] = []
    if cfg.protocol not in PROTOCOLS:
        p.append(f"protocol: must be one of {PROTOCOLS}, got {cfg.protocol!r}")
    if not isinstance(cfg.N, int) or cfg.N < 1:
        p.append(f"N: must be a positive integer, got {cfg.N!r}")
    if not isinstance(cfg.K, int) or cfg.K < 1:
        p.append(f"K: must be a positive integer, got {cfg.K!r}")
    elif isinstance(cfg.N, int) and cfg.K > cfg.N:
        p.append(f"K: must not exceed N ({cfg.N}), got {cfg.K}")
    if not 0 <= cfg.tx_per_block <= cfg.block_capacity:
        p.append(f"tx_per_block: must lie in [0, block_capacity={cfg.block_capacity}], got {cfg.tx_per_block}")
    if cfg.block_capacity < 1:
        p.append(f"block_capacity: must be >= 1, got {cfg.block_capacity}")
    if cfg.blocks_to_commit < 1:
        p.append(f"blocks_to_commit: must be >= 1, got {cfg.blocks_to_commit}")
    if not 0 < cfg.epsilon <= 1:
        p.append(f"epsilon: must lie in (0, 1], got {cfg.epsilon}")
    if cfg.crypto_backend not in BACKENDS:
        p.append(f"crypto_backend: must be one of {BACKENDS}, got {cfg.crypto_backend!r}")
    if not 0 <= cfg.payload_bytes <= 4096:
        p.append(f"payload_bytes: must lie in [0, 4096], got {cfg.payload_bytes}")
    if cfg.c_msg < 0 or cfg.c_hash < 0:
        p.append("c_msg/c_hash: energy costs must be non-negative")
    if cfg.time_cap_factor <= 0:
        p.append(f"time_cap_factor: must be positive, got {cfg.time_cap_factor}")
    if cfg.grace_us < 0:
        p.append(f"grace_us: must be non-negative, got {cfg.grace_us}")
    if cfg.warmup_blocks < 0:
        p.append(f"warmup_blocks: must be non-negative, got {cfg.warmup_blocks}")
    for name, allowed in _SUB_KEYS.items():
        value = getattr(cfg, name)
        if not isinstance(value, Mapping):
            p.append(f"{name}: must be a mapping")
            continue
        for key in sorted(set(value) - allowed):
            p.append(f"{name}.{key}: unknown key")
    n = cfg.N if isinstance(cfg.N, int) else 0
    seen: set[int] = set()
    for c in cfg.faults.crashed:
        if not 0 <= c.node < n:
            p.append(f"faults: crashed node {c.node} out of range [0, {n})")
        if c.at_us < 0:
            p.append(f"faults: crash time for node {c.node} is negative")
        seen.add(c.node)
    for b in cfg.faults.byzantine:
        if not 0 <= b.node < n:
            p.append(f"faults: byzantine node {b.node} out of range [0, {n})")
        if b.behavior not in BYZANTINE_BEHAVIORS:
            p.append(f"faults: node {b.node} behavior {b.behavior!r} not in {BYZANTINE_BEHAVIORS}")
        if b.node in seen:
            p.append(f"faults: node {b.node} is both crashed and byzantine")
    if cfg.protocol == "wrbft" and cfg.faults.byzantine and isinstance(cfg.K, int) and cfg.K < 4:
        p.append(f"K: byzantine tolerance at the inter-group layer needs K >= 4, got {cfg.K}")
    return p


def load_config(source: str | Path | Mapping[str, Any] | None = None, **overrides) -> ExperimentConfig:
    """Resolve a config from a YAML/JSON file or a mapping, plus keyword overrides.

    Unknown keys and every domain violation are reported together in one
    :class:`ConfigError`.
    """
    if source is None:
        data: dict = {}
    elif isinstance(source, Mapping):
        data = dict(source)
    else:
        import yaml

        try:
            loaded = yaml.safe_load(Path(source).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError([f"config file {source}: {exc}"]) from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, Mapping):
            raise ConfigError([f"config file {source}: top level must be a mapping"])
        data = dict(loaded)
    data.update({k: v for k, v in overrides.items() if v is not None})
    problems = [f"{k}: unknown key" for k in sorted(set(data) - set(_FIELD_NAMES))]
    for k in list(data):
        if k not in _FIELD_NAMES:
            del data[k]
    try:
        data["faults"] = _fault_spec_from(data.get("faults"))
    except ConfigError as exc:
        problems += exc.problems
        data["faults"] = FaultSpec()
    except (KeyError, TypeError, ValueError) as exc:
        problems.append(f"faults: malformed entry ({exc})")
        data["faults"] = FaultSpec()
    for key in ("weight_params", "delay", "costs", "inter_timing"):
        if key in data and data[key] is None:
            data[key] = {}
    if data.get("cohort_seed") is not None and not isinstance(data["cohort_seed"], int):
        problems.append(f"cohort_seed: must be an integer, got {data['cohort_seed']!r}")
        data.pop("cohort_seed")
    for key in ("N", "K", "tx_per_block", "blocks_to_commit", "seed", "payload_bytes", "block_capacity", "grace_us", "warmup_blocks", "cohort_clusters"):
        if key in data and isinstance(data[key], float) and data[key].is_integer():
            data[key] = int(data[key])
        if key in data and not isinstance(data[key], int) or isinstance(data.get(key), bool):
            problems.append(f"{key}: must be an integer, got {data[key]!r}")
            data.pop(key)
    for key in ("epsilon", "c_msg", "c_hash", "time_cap_factor"):
        if key in data:
            try:
                data[key] = float(Fraction(str(data[key]))) if isinstance(data[key], str) else float(data[key])
            except (TypeError, ValueError):
                problems.append(f"{key}: must be a number, got {data[key]!r}")
                data.pop(key)
    cfg = ExperimentConfig(**data)
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    import yaml

    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
