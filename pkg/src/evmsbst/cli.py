"""Command-line entry points: ``run`` and ``bench``."""
from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .abi import MalformedAbi
from .artifact import ContractArtifact, load_artifact
from .asm import TruncatedPush
from .cdg import Cdg, build_cdg
from .cfg import build_cfg
from .chain import ChainError, parse_accounts
from .fitness import EvaluationError, TraceMismatch
from .provider import REMOTE_ENV, EmbeddedProvider, RemoteProvider
from .report import (
    effect_size_label, emit_meta_csv, emit_suite, vargha_delaney_a12, wilcoxon_rank_sum,
)
from .search import DYNAMOSA, ENGINES, FUZZER, RunReport, RunResult
from .testgen import GenConfig, load_config

EXIT_FULL = 0
EXIT_PARTIAL = 2
EXIT_INPUT = 3
EXIT_CHAIN = 4
EXIT_INTERNAL = 5

log = logging.getLogger("evmsbst")


class InputError(Exception):
    pass


def _read_inputs(runtime: Path, abi: Path, deploy: Optional[Path], name: Optional[str]):
    for p in (runtime, abi) + ((deploy,) if deploy else ()):
        if not p.is_file():
            raise InputError(f"missing input file: {p}")
    try:
        art = load_artifact(runtime, abi, deploy, name)
    except (MalformedAbi, TruncatedPush, ValueError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from None
    if art.deploy_bytecode is None:
        raise InputError("deploy bytecode is required to instantiate the contract")
    return art


def analyse(art: ContractArtifact) -> Cdg:
    return build_cdg(build_cfg(art.instructions()), art.abi)


def feasible_covered(result: RunResult, config: GenConfig) -> bool:
    excluded = set(config.excluded_branches)
    need = set(range(result.report.branches_found)) - excluded
    return need <= result.archive.covered()


def _build_config(args, config_path: Optional[Path]) -> GenConfig:
    try:
        cfg = load_config(config_path) if config_path else GenConfig()
        overrides = dict(population_size=args.population, max_generations=args.max_generations,
                         rng_seed=args.seed)
        if getattr(args, "accounts", None):
            path = Path(args.accounts)
            if not path.is_file():
                raise InputError(f"missing accounts file: {path}")
            balances = parse_accounts(path.read_text())
            if not balances:
                raise InputError("accounts file lists no accounts")
            overrides["accounts"] = tuple(balances)
            overrides["account_balances"] = tuple(balances.values())
        return cfg.with_overrides(**overrides)
    except InputError:
        raise
    except (ValueError, TypeError, OSError) as exc:
        raise InputError(f"bad configuration: {exc}") from None


def _zero_timing(report: RunReport) -> RunReport:
    return replace(report, total_time_s=0.0, chain_time_s=0.0)


def _provider(args, config: GenConfig):
    if getattr(args, "remote", False):
        return RemoteProvider(config=config)
    return EmbeddedProvider(config, seed=config.rng_seed)


def write_fitness_log(result: RunResult) -> str:
    lines = ["generation,branch,best_f"]
    for rec in result.history:
        for b in sorted(rec.best):
            lines.append(f"{rec.generation},{b},{float(rec.best[b])!r}")
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    try:
        if args.fixture:
            d = Path(args.fixture)
            runtime, abi = d / "runtime.hex", d / "abi.json"
            deploy = d / "deploy.hex"
            config_path = Path(args.config) if args.config else (
                d / "config.txt" if (d / "config.txt").is_file() else None)
            name = args.name or d.name
        else:
            if not args.bytecode or not args.abi:
                raise InputError("--bytecode and --abi are required (or --fixture)")
            runtime, abi = Path(args.bytecode), Path(args.abi)
            deploy = Path(args.deploy_bytecode) if args.deploy_bytecode else None
            config_path = Path(args.config) if args.config else None
            name = args.name
        if config_path is not None and not config_path.is_file():
            raise InputError(f"missing config file: {config_path}")
        art = _read_inputs(runtime, abi, deploy, name)
        config = _build_config(args, config_path)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    out = Path(args.out)
    try:
        cfg_graph = build_cfg(art.instructions())
        cdg = build_cdg(cfg_graph, art.abi)
        provider = _provider(args, config)
        result = ENGINES[args.algorithm](art, cdg, config, provider, progress=args.progress)
    except ChainError as exc:
        print(f"chain error: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    except (TraceMismatch, EvaluationError, AssertionError) as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL

    report = _zero_timing(result.report) if args.no_timing else result.report
    out.mkdir(parents=True, exist_ok=True)
    stem = art.name
    header = (f"algorithm {report.algorithm} seed {report.seed}\n"
              f"branches covered {report.branches_covered}/{report.branches_found}")
    _write(out / f"{stem}.suite.txt",
           emit_suite(result.archive, cdg, art.name, art.constructor, header))
    _write(out / f"{stem}.meta.csv", emit_meta_csv([report]))
    if args.fitness_log:
        _write(out / f"{stem}.fitness.csv", write_fitness_log(result))
    if args.dump_cfg:
        _write(out / f"{stem}.cfg.dot", cfg_graph.to_dot())
        _write(out / f"{stem}.cfg.json", json.dumps(cfg_graph.to_json(), indent=2) + "\n")
    if args.dump_cdg:
        _write(out / f"{stem}.cdg.dot", cdg.to_dot())
        _write(out / f"{stem}.cdg.json", json.dumps(cdg.to_json(), indent=2) + "\n")
    if result.out_of_gas:
        print(f"note: {result.out_of_gas} transaction(s) ran out of gas", file=sys.stderr)
    print(f"{art.name}: covered {report.branches_covered}/{report.branches_found} branches "
          f"in {report.iterations} iteration(s)", file=sys.stderr)
    return EXIT_FULL if feasible_covered(result, config) else EXIT_PARTIAL


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -- bench -------------------------------------------------------------------------

COMPARISON_COLUMNS = [
    "contract", "fuzzer_coverage", "dynamosa_coverage", "fuzzer_time_s", "dynamosa_time_s",
    "fuzzer_length", "dynamosa_length", "p_value", "a12", "effect", "status",
]


def _coverage(result: RunResult, config: GenConfig) -> float:
    feasible = set(range(result.report.branches_found)) - set(config.excluded_branches)
    if not feasible:
        return 1.0
    return len(feasible & result.archive.covered()) / len(feasible)


def _suite_length(result: RunResult) -> int:
    return sum(t.length for t in set(result.archive.covering.values()))


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def cmd_bench(args) -> int:
    root = Path(args.fixtures)
    if not root.is_dir():
        print(f"input error: no fixture directory {root}", file=sys.stderr)
        return EXIT_INPUT
    if args.runs < 2:
        print("input error: --runs must be at least 2", file=sys.stderr)
        return EXIT_INPUT
    names = sorted(p.name for p in root.iterdir() if (p / "abi.json").is_file())
    if args.contracts:
        wanted = set(args.contracts.split(","))
        names = [n for n in names if n in wanted]
    if not names:
        print("input error: no fixtures selected", file=sys.stderr)
        return EXIT_INPUT
    reports: list[RunReport] = []
    rows = []
    for name in names:
        d = root / name
        try:
            art = _read_inputs(d / "runtime.hex", d / "abi.json", d / "deploy.hex", name)
            base = load_config(d / "config.txt") if (d / "config.txt").is_file() else GenConfig()
            cdg = analyse(art)
        except (InputError, ValueError) as exc:
            print(f"{name}: input error: {exc}", file=sys.stderr)
            rows.append([name] + [""] * 9 + ["failed"])
            continue
        samples = {FUZZER: [], DYNAMOSA: []}
        times = {FUZZER: [], DYNAMOSA: []}
        lengths = {FUZZER: [], DYNAMOSA: []}
        failed = False
        for alg in (FUZZER, DYNAMOSA):
            for seed in range(args.runs):
                cfg = base.with_overrides(rng_seed=seed, population_size=args.population,
                                          max_generations=args.max_generations)
                if alg == FUZZER and args.fuzzer_seeding_probability is not None:
                    cfg = replace(cfg, seeding_probability=args.fuzzer_seeding_probability)
                try:
                    res = ENGINES[alg](art, cdg, cfg, EmbeddedProvider(cfg, seed=seed),
                                       progress=False)
                except Exception as exc:  # one failing cell must not stop the bench
                    print(f"{name}/{alg}/{seed}: failed: {exc}", file=sys.stderr)
                    failed = True
                    continue
                rep = _zero_timing(res.report) if args.no_timing else res.report
                reports.append(rep)
                samples[alg].append(_coverage(res, cfg))
                times[alg].append(rep.total_time_s)
                lengths[alg].append(_suite_length(res))
                print(f"{name} {alg} seed {seed}: {res.report.branches_covered}/"
                      f"{res.report.branches_found}", file=sys.stderr)
        if failed or not samples[FUZZER] or not samples[DYNAMOSA]:
            rows.append([name] + [""] * 9 + ["failed"])
            continue
        p = wilcoxon_rank_sum(samples[DYNAMOSA], samples[FUZZER])
        a12 = vargha_delaney_a12(samples[DYNAMOSA], samples[FUZZER])
        rows.append([
            name,
            _fmt(statistics.fmean(samples[FUZZER])), _fmt(statistics.fmean(samples[DYNAMOSA])),
            _fmt(statistics.fmean(times[FUZZER])), _fmt(statistics.fmean(times[DYNAMOSA])),
            _fmt(statistics.fmean(lengths[FUZZER])), _fmt(statistics.fmean(lengths[DYNAMOSA])),
            _fmt(p), _fmt(a12), effect_size_label(a12), "ok",
        ])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if reports:
        _write(out / "meta.csv", emit_meta_csv(reports))
    table = [",".join(COMPARISON_COLUMNS)] + [",".join(map(str, r)) for r in rows]
    _write(out / "comparison.csv", "\n".join(table) + "\n")
    print("\n".join(table))
    return 0


# -- argument parsing -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evmsbst",
                                 description="Search-based test generation for EVM bytecode.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="generate a test suite for one contract")
    run.add_argument("--bytecode", help="runtime bytecode hex file")
    run.add_argument("--abi", help="ABI JSON file")
    run.add_argument("--deploy-bytecode", help="deploy (init) bytecode hex file")
    run.add_argument("--fixture", help="directory with runtime.hex, deploy.hex, abi.json "
                                       "and optional config.txt")
    run.add_argument("--name", help="contract name for reports")
    run.add_argument("--algorithm", choices=sorted(ENGINES), default=DYNAMOSA)
    run.add_argument("--population", type=int)
    run.add_argument("--max-generations", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--config", help="key = value configuration file")
    run.add_argument("--accounts", help="accounts file (address [balance] per line)")
    run.add_argument("--out", default="out")
    run.add_argument("--dump-cfg", action="store_true")
    run.add_argument("--dump-cdg", action="store_true")
    run.add_argument("--fitness-log", action="store_true",
                     help="write per-generation best fitness per branch")
    run.add_argument("--no-timing", action="store_true",
                     help="report zero timings so outputs are byte-comparable")
    run.add_argument("--progress", action="store_true", help="per-generation line on stderr")
    run.add_argument("--remote", action="store_true",
                     help=f"use the JSON-RPC node named by ${REMOTE_ENV}")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="compare both engines over a fixture corpus")
    bench.add_argument("--fixtures", required=True)
    bench.add_argument("--runs", type=int, default=10)
    bench.add_argument("--out", default="bench-out")
    bench.add_argument("--contracts", help="comma-separated fixture names")
    bench.add_argument("--population", type=int)
    bench.add_argument("--max-generations", type=int)
    bench.add_argument("--fuzzer-seeding-probability", type=float)
    bench.add_argument("--no-timing", action="store_true")
    bench.set_defaults(func=cmd_bench)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
