#!/usr/bin/env python3
"""Compare DynaMOSA against the unseeded random fuzzer on the nested-guard vault.

Prints, per engine, how many seeds reached the innermost guard, then the
bench comparison row (mean coverage, A12, rank-sum p-value).
"""
import argparse
import sys
from pathlib import Path

from evmsbst import cli

ROOT = Path(__file__).resolve().parent.parent
DEEPEST = 4


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--fixtures", default=str(ROOT / "fixtures"))
    ap.add_argument("--contract", default="vault")
    ap.add_argument("--out", default="differential-out")
    args = ap.parse_args()

    hits = {alg: [] for alg in cli.ENGINES}
    real = dict(cli.ENGINES)

    def recording(alg):
        def run(art, cdg, cfg, *a, **kw):
            res = real[alg](art, cdg, cfg, *a, **kw)
            hits[alg].append(DEEPEST in res.archive.covered())
            return res
        return run

    cli.ENGINES.update({alg: recording(alg) for alg in real})
    code = cli.main(["bench", "--fixtures", args.fixtures, "--contracts", args.contract,
                     "--runs", str(args.runs), "--fuzzer-seeding-probability", "0",
                     "--out", args.out])
    for alg, seen in hits.items():
        print(f"{alg}: innermost guard reached in {sum(seen)}/{len(seen)} seeds")
    return code


if __name__ == "__main__":
    sys.exit(main())
