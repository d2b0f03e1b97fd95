import filecmp

import pytest

from evflex import cli, dispatch
from evflex.fleet import CSV_COLUMNS

SMALL = ["--n", "3", "--seed", "4", "--node-limit", "2"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_generate_header_only_and_deterministic(tmp_path):
    assert run("generate", "--n", "0", "-o", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text().splitlines() == [",".join(CSV_COLUMNS)]
    assert run("generate", "--seed", 3, "-o", tmp_path / "a.csv", "--inputs", tmp_path / "in") == 0
    assert run("generate", "--seed", 3, "-o", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 101
    assert {p.name for p in (tmp_path / "in").iterdir()} == {"prices.csv", "trace.csv", "history.csv"}


def test_bid_regions_dispatch_chain(tmp_path, capsys):
    assert run("generate", *SMALL, "-o", tmp_path / "f.csv", "--inputs", tmp_path) == 0
    common = ["--fleet", tmp_path / "f.csv", "--prices", tmp_path / "prices.csv", "--history",
              tmp_path / "history.csv", "--node-limit", 2]
    assert run("bid", *common, "--hour", 8, "-o", tmp_path / "bid.csv") == 0
    assert run("regions", *common, "--bid", tmp_path / "bid.csv", "-o", tmp_path / "pol.csv") == 0
    capsys.readouterr()
    assert run("dispatch", "--policy", tmp_path / "pol.csv", "--signal", 0.5) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "id,pc_kw,pd_kw,dup_kw,ddn_kw" and out[-1].startswith("value,")


def test_validation_errors_exit_1(tmp_path):
    assert run("bid", "--fleet", tmp_path / "nope.csv") == 1
    assert run("simulate", "--bin-width", 0, "--out", tmp_path / "r") == 1
    assert run("report", tmp_path / "missing") == 1
    (tmp_path / "empty").mkdir()
    assert run("report", tmp_path / "empty") == 1
    (tmp_path / "c.yaml").write_text("colour: blue\n")
    assert run("generate", "--config", tmp_path / "c.yaml", "-o", tmp_path / "x.csv") == 1
    assert run("dispatch") == 1


def test_solver_failure_exit_2(tmp_path, monkeypatch):
    assert run("generate", *SMALL, "-o", tmp_path / "f.csv", "--inputs", tmp_path) == 0
    common = ["--fleet", tmp_path / "f.csv", "--prices", tmp_path / "prices.csv", "--history",
              tmp_path / "history.csv", "--node-limit", 2]
    assert run("bid", *common, "--hour", 8, "-o", tmp_path / "bid.csv") == 0

    def boom(plp):
        raise dispatch.DispatchInfeasible("forced")
    monkeypatch.setattr(dispatch, "compute_regions", boom)
    assert run("regions", *common, "--bid", tmp_path / "bid.csv", "-o", tmp_path / "pol.csv") == 2


def test_config_file_and_flag_override(tmp_path):
    (tmp_path / "c.yaml").write_text("n: 5\nseed: 9\n")
    assert run("generate", "--config", tmp_path / "c.yaml", "-o", tmp_path / "a.csv") == 0
    assert len((tmp_path / "a.csv").read_text().splitlines()) == 6
    assert run("generate", "--config", tmp_path / "c.yaml", "--n", 2, "-o", tmp_path / "b.csv") == 0
    assert len((tmp_path / "b.csv").read_text().splitlines()) == 3


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    for name in ("a", "b"):
        assert run("simulate", *SMALL, "--out", d / name) == 0
    return d


def test_simulate_artifacts_and_determinism(two_runs):
    a, b = two_runs / "a", two_runs / "b"
    names = sorted(p.name for p in a.iterdir() if p.is_file())
    for f in list(cli.RUN_FILES) + ["summary.txt", "plot_hourly_bids.csv", "plot_fairness.csv"]:
        assert f in names
    same = [n for n in names if n != "timing.log"]
    _, mismatch, errors = filecmp.cmpfiles(a, b, same, shallow=False)
    assert mismatch == [] and errors == []
    pa = sorted(p.name for p in (a / "policies").iterdir())
    assert pa and filecmp.cmpfiles(a / "policies", b / "policies", pa, shallow=False)[1] == []


def test_report_idempotent(two_runs, capsys):
    a = two_runs / "a"
    before = (a / "summary.txt").read_bytes()
    assert run("report", a) == 0
    assert run("report", a) == 0
    assert (a / "summary.txt").read_bytes() == before
    assert "dispatch comparison" in capsys.readouterr().out
