import json

import pytest

from mudmarket.cli import main
from mudmarket.mudfile import fixture_text
from mudmarket.offstore import digest_of


@pytest.fixture
def run(tmp_path, capsys):
    base = ["--journal", str(tmp_path / "chain.jsonl"), "--store", str(tmp_path / "store")]

    def invoke(*argv, fmt="json"):
        code = main([*base, "--format", fmt, *map(str, argv)])
        out, err = capsys.readouterr()
        return code, out, err

    return invoke


def data(out):
    return json.loads(out)


@pytest.fixture
def chain(run):
    assert run("init")[0] == 0
    run("advance", 1000)
    return run


def test_full_cycle(chain, tmp_path):
    run = chain
    code, out, _ = run("request", "--as", "U1", "--manufacturer", "Amazon", "--device-name", "Echo",
                       "--budget-eth", "2", "--deadline", "+3600")
    assert code == 0
    req = data(out)
    assert req["gas_used"] == 736_408
    uid = req["uid"]
    mud = tmp_path / "echo.json"
    mud.write_text(fixture_text("amazon_echo"))
    code, out, _ = run("offer", "--as", "U7", "--uid", uid, "--from-mud", mud, "--price-eth", "0.5",
                       "--deadline", "+1800")
    assert code == 0 and data(out)["gas_used"] == 199_358
    assert run("select", "--as", "U1", "--uid", uid, "--supplier", "U7")[0] == 0
    code, out, _ = run("submit", "--as", "U7", "--uid", uid, "--file", mud, "--deadline", "+86400")
    assert code == 0
    index = data(out)["store_index"]
    assert index == digest_of(mud.read_bytes())
    assert run("rate", "--as", "U1", "--uid", uid, "--supplier", "U7", "--score", 100)[0] == 0
    code, out, _ = run("view", "reputation", "U7")
    assert data(out) == 100
    code, out, _ = run("store", "get", index, "-o", tmp_path / "back.json")
    assert code == 0 and (tmp_path / "back.json").read_bytes() == mud.read_bytes()
    code, out, _ = run("view", "history", uid)
    assert [c["function"] for c in data(out)["calls"]] == ["request", "offer", "select", "submit", "rate"]


def test_rate_without_submission(chain):
    run = chain
    uid = data(run("request", "--as", "U1", "--model", "X", "--budget-eth", "1", "--deadline", "+600")[1])["uid"]
    code, _, err = run("rate", "--as", "U1", "--uid", uid, "--supplier", "U7", "--score", 50)
    assert code == 1
    assert err.startswith("error: no-submission:") and len(err.strip().splitlines()) == 1


def test_bad_arguments_exit_2(chain):
    with pytest.raises(SystemExit) as exc:
        chain("rate", "--as", "U1")
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        chain("offer", "--as", "U7", "--uid", "x", "--price-eth", "1", "--deadline", "+10")
    assert exc.value.code == 2


def test_contract_rejection_exit_1(chain):
    code, _, err = chain("request", "--as", "U1", "--model", "X", "--budget-eth", "1", "--deadline", "+0")
    assert code == 1 and err.startswith("error: past-deadline:")


def test_read_commands_leave_journal_untouched(chain, tmp_path):
    run = chain
    uid = data(run("request", "--as", "U2", "--model", "X", "--budget-eth", "1", "--deadline", "+600")[1])["uid"]
    journal = tmp_path / "chain.jsonl"
    before = journal.read_bytes()
    for argv in (("view", "open"), ("view", "offers", uid), ("view", "history", uid),
                 ("view", "supplier", "U7"), ("view", "reputation", "U7"), ("view", "balances")):
        assert run(*argv)[0] == 0
        assert run(*argv, fmt="text")[0] == 0
    assert journal.read_bytes() == before


def test_failed_mutation_appends_nothing(chain, tmp_path):
    journal = tmp_path / "chain.jsonl"
    before = journal.read_bytes()
    chain("select", "--as", "U1", "--uid", "0" * 64)
    assert journal.read_bytes() == before


def test_expire_refunds(chain):
    run = chain
    uid = data(run("request", "--as", "U5", "--model", "X", "--budget-eth", "2", "--deadline", "+600")[1])["uid"]
    run("offer", "--as", "U8", "--uid", uid, "--ace-count", 5, "--file-size-kb", 3.2, "--flow-scope", "remote",
        "--price-eth", "0.7", "--deadline", "+100")
    run("select", "--as", "U5", "--uid", uid, "--supplier", "U8")
    run("advance", 101)
    code, out, _ = run("expire")
    kinds = sorted(t["kind"] for t in data(out)["transitions"])
    assert kinds == ["offer", "refund", "request"]
    balances = data(run("view", "balances")[1])
    assert balances["escrow"] == 0


def test_init_refuses_overwrite(chain):
    assert chain("init")[0] == 1
    assert chain("init", "--force")[0] == 0


def test_scenario_run(run):
    code, out, _ = run("scenario", "run", "BS01", "--seed", 7)
    assert code == 0
    (rep,) = data(out)
    assert (rep["selected"], rep["submitted"], rep["rated"]) == (1, 1, 1)


def test_scenario_all_is_deterministic(run, tmp_path):
    for name in ("a", "b"):
        assert run("scenario", "all", "--seed", 11, "--out", tmp_path / name)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert len(files) == 22
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gas_report_after_scenarios(run, tmp_path):
    run("scenario", "all", "--seed", 3, "--out", tmp_path / "r")
    code, out, _ = run("gas-report", "--reports", tmp_path / "r", "--out", tmp_path / "gas.json")
    assert code == 0
    gas = {r["function"]: int(r["gas"]) for r in data(out)["rows"]}
    assert gas == {"request": 736408, "offer": 199358, "select": 173681, "submit": 218216, "rate": 140474}
    assert json.loads((tmp_path / "gas.json").read_text()) == data(out)
    code, text, _ = run("gas-report", "--reports", tmp_path / "r", fmt="text")
    assert "full cycle" in text and "736,408" in text


def test_store_and_mud_tools(run, tmp_path):
    src = tmp_path / "lifx.json"
    src.write_text(fixture_text("lifx_bulb"))
    index = data(run("store", "put", src)[1])["index"]
    assert data(run("store", "verify", index, src)[1]) == {"valid": True}
    bad = tmp_path / "bad.json"
    bad.write_bytes(src.read_bytes()[:-1])
    assert run("store", "verify", index, bad)[0] == 1
    assert data(run("mud", "stats", src)[1])["ace_count"] == 9
    out = tmp_path / "lq.json"
    assert run("mud", "variant", src, "--tier", "LQ", "--seed", 4, "-o", out)[0] == 0
    assert data(run("mud", "stats", out)[1])["ace_count"] == 8
    assert data(run("mud", "parse", src)[1])["ace_count"] == 9
    code, _, err = run("store", "get", "f" * 64)
    assert code == 1 and "not-found" in err


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"journal": str(tmp_path / "j.jsonl"), "preset": "linear"}))
    assert main(["--config", str(cfg), "init"]) == 0
    capsys.readouterr()
    assert main(["--config", str(cfg), "--format", "json", "request", "--as", "U1", "--model", "X",
                 "--budget-eth", "1", "--deadline", "600"]) == 0
    assert json.loads(capsys.readouterr().out)["gas_used"] != 736_408
