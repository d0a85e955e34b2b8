import subprocess
import sys

import pytest

from evmsbst import cli
from evmsbst.report import parse_meta_csv, parse_suite

from conftest import FIXTURES, fixture

AUCTION = FIXTURES / "auction"


def _run(tmp_path, *extra):
    out = tmp_path / "out"
    code = cli.main(["run", "--bytecode", str(AUCTION / "runtime.hex"),
                     "--abi", str(AUCTION / "abi.json"),
                     "--deploy-bytecode", str(AUCTION / "deploy.hex"),
                     "--config", str(AUCTION / "config.txt"),
                     "--name", "Auction", "--out", str(out), *extra])
    return code, out


def test_run_writes_suite_and_meta(tmp_path):
    code, out = _run(tmp_path, "--dump-cfg", "--dump-cdg", "--fitness-log")
    assert code == cli.EXIT_FULL
    names = sorted(p.name for p in out.iterdir())
    assert names == ["Auction.cdg.dot", "Auction.cdg.json", "Auction.cfg.dot", "Auction.cfg.json",
                     "Auction.fitness.csv", "Auction.meta.csv", "Auction.suite.txt"]
    [rep] = parse_meta_csv((out / "Auction.meta.csv").read_text())
    assert (rep.contract, rep.branches_found, rep.branches_covered) == ("Auction", 6, 5)
    suite = parse_suite((out / "Auction.suite.txt").read_text(), fixture("auction")[0].abi)
    assert {b for _, covers in suite for b in covers} == {0, 1, 2, 3, 4}
    assert (out / "Auction.fitness.csv").read_text().startswith("generation,branch,best_f\n")


def test_missing_abi_is_an_input_error(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["run", "--bytecode", str(AUCTION / "runtime.hex"),
                     "--abi", str(tmp_path / "missing.json"), "--out", str(out)])
    assert code == cli.EXIT_INPUT
    assert not out.exists()


def test_bad_config_is_an_input_error(tmp_path):
    bad = tmp_path / "c.txt"
    bad.write_text("population_size = 1\n")
    code, out = _run(tmp_path, "--config", str(bad))
    assert code == cli.EXIT_INPUT
    assert not out.exists()


def test_zero_budget_is_partial(tmp_path):
    code, out = _run(tmp_path, "--max-generations", "0")
    assert code == cli.EXIT_PARTIAL
    [rep] = parse_meta_csv((out / "Auction.meta.csv").read_text())
    assert rep.iterations == 0 and rep.branches_covered == 0


def test_run_from_fixture_directory(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", "--fixture", str(FIXTURES / "ownable"), "--algorithm", "fuzzer",
                     "--out", str(out), "--no-timing"]) == cli.EXIT_FULL
    [rep] = parse_meta_csv((out / "ownable.meta.csv").read_text())
    assert rep.total_time_s == rep.chain_time_s == 0.0


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "evmsbst", "run", "--fixture",
                           str(FIXTURES / "piggybank"), "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "covered 4/4" in proc.stderr


def _bench(tmp_path, tag, *extra):
    out = tmp_path / tag
    code = cli.main(["bench", "--fixtures", str(FIXTURES), "--contracts", "auction,ownable",
                     "--runs", "3", "--out", str(out), "--no-timing", *extra])
    return code, out


def test_bench_tables(tmp_path):
    code, out = _bench(tmp_path, "a")
    assert code == 0
    meta = parse_meta_csv((out / "meta.csv").read_text())
    assert len(meta) == 12
    rows = (out / "comparison.csv").read_text().splitlines()
    assert rows[0].split(",") == cli.COMPARISON_COLUMNS
    assert [r.split(",")[0] for r in rows[1:]] == ["auction", "ownable"]
    assert all(r.endswith(",ok") for r in rows[1:])
    _, again = _bench(tmp_path, "b")
    assert (again / "comparison.csv").read_bytes() == (out / "comparison.csv").read_bytes()
    assert (again / "meta.csv").read_bytes() == (out / "meta.csv").read_bytes()


def test_bench_marks_failed_cell(tmp_path, monkeypatch):
    real = dict(cli.ENGINES)

    def broken(art, *a, **kw):
        if art.name == "ownable":
            raise RuntimeError("boom")
        return real["fuzzer"](art, *a, **kw)

    monkeypatch.setitem(cli.ENGINES, "fuzzer", broken)
    code, out = _bench(tmp_path, "c")
    assert code == 0
    rows = dict(r.split(",", 1) for r in (out / "comparison.csv").read_text().splitlines()[1:])
    assert rows["ownable"].endswith(",failed")
    assert rows["auction"].endswith(",ok")


def test_bench_rejects_single_run(tmp_path):
    assert cli.main(["bench", "--fixtures", str(FIXTURES), "--runs", "1",
                     "--out", str(tmp_path)]) == cli.EXIT_INPUT
