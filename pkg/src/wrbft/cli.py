"""Command-line entry point: ``wrbft --protocol wrbft --nodes 40 --groups 4``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import PROTOCOLS, ConfigError, load_config, parse_fault_spec
from .harness import AGREEMENT_VIOLATION, ERROR, LIVENESS_FAILURE, emit_report, render_csv, run_experiment, run_sweep

EXIT_OK = 0
EXIT_CRASH = 1
EXIT_INVALID = 2
EXIT_LIVENESS = 3
EXIT_AGREEMENT = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wrbft", description="Run WRBFT, flat Raft or flat PBFT in the deterministic simulator.")
    p.add_argument("--config", help="YAML or JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--nodes", type=int, dest="N", help="total consortium nodes N")
    p.add_argument("--groups", type=int, dest="K", help="number of groups K")
    p.add_argument("--blocks", type=int, dest="blocks_to_commit", help="target chain height")
    p.add_argument("--tx-per-block", type=int, dest="tx_per_block")
    p.add_argument("--epsilon", type=float, help="leader eligibility fraction in (0, 1]")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=("toy", "bls12_381"), dest="crypto_backend", help="signature backend")
    p.add_argument("--faults", help="e.g. crash:3@200000,byz:7:equivocate (times in us) or 'none'")
    p.add_argument("--sweep", help="axis=v1,v2,... with axis N or K")
    p.add_argument("--output", help="directory for report, trace and results files")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    return p


def _parse_sweep(text: str) -> tuple[str, list[int]]:
    axis, sep, values = text.partition("=")
    axis = axis.strip()
    if not sep or axis not in ("N", "K"):
        raise ConfigError([f"sweep: expected N=v1,v2,... or K=v1,v2,..., got {text!r}"])
    try:
        return axis, [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"sweep: values must be integers, got {values!r}"]) from None


def exit_code(verdicts: Sequence[str]) -> int:
    if AGREEMENT_VIOLATION in verdicts:
        return EXIT_AGREEMENT
    if LIVENESS_FAILURE in verdicts:
        return EXIT_LIVENESS
    if ERROR in verdicts:
        return EXIT_CRASH
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        key: getattr(args, key)
        for key in ("protocol", "N", "K", "blocks_to_commit", "tx_per_block", "epsilon", "seed", "crypto_backend", "output")
    }
    try:
        if args.faults is not None:
            overrides["faults"] = parse_fault_spec(args.faults)
        sweep = _parse_sweep(args.sweep) if args.sweep else None
        cfg = load_config(args.config, **overrides)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    if sweep is None:
        reports = [run_experiment(cfg)]
    else:
        axis, values = sweep
        try:
            for v in values:  # validate every member before spending time on any
                cfg.replace(**{axis: v})
        except ConfigError as exc:
            for problem in exc.problems:
                print(f"error: {problem}", file=sys.stderr)
            return EXIT_INVALID
        reports = run_sweep(cfg, axis, values)

    if cfg.output:
        out = Path(cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        target = emit_report(reports, out / f"results.{args.format}", args.format)
        print(f"wrote {target}", file=sys.stderr)
    if args.format == "csv":
        sys.stdout.write(render_csv(reports))
    else:
        sys.stdout.write("".join(r.to_json() + "\n" for r in reports))
    for r in reports:
        if r.detail:
            print(f"{r.protocol} N={r.N} K={r.K} seed={r.seed}: {r.verdict} ({r.detail})", file=sys.stderr)
    return exit_code([r.verdict for r in reports])


if __name__ == "__main__":
    sys.exit(main())
