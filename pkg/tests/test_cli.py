import json

from click.testing import CliRunner

from logres.cli import main
from logres.runtime.config import load_deployment


def test_keygen_writes_matching_keys(tmp_path):
    res = CliRunner().invoke(main, ["keygen", "-n", "3", "-f", "1", "--out", str(tmp_path),
                                    "--period", "1000", "--round-length", "50", "--http-base-port", "8100"])
    assert res.exit_code == 0, res.output
    for i in range(3):
        dep = load_deployment(tmp_path / f"node-{i}.conf")
        assert dep.keypair().public == dep.me.public
        assert dep.http.port == 8100 + i
        assert (tmp_path / f"node-{i}.key").stat().st_mode & 0o077 == 0


def test_keygen_rejects_bad_shape(tmp_path):
    res = CliRunner().invoke(main, ["keygen", "-n", "4", "-f", "2", "--out", str(tmp_path)])
    assert res.exit_code != 0 and "n > 2f" in res.output and not list(tmp_path.iterdir())


def test_bench_bound():
    res = CliRunner().invoke(main, ["bench", "bound"])
    assert res.exit_code == 0
    assert "testbed 40.34" in res.output and "testbed 80.68" in res.output


def test_simulate_run_dump_replay(tmp_path):
    conf = tmp_path / "c.conf"
    conf.write_text("n = 5\nf = 2\nadversary = cross-thread-replay\nvariant = paired\nruns = 2\n")
    trace = tmp_path / "t.trace"
    runner = CliRunner()
    res = runner.invoke(main, ["simulate", "run", "--config", str(conf), "--dump", str(trace)])
    assert res.exit_code == 1 and "0/2" in res.output
    res = runner.invoke(main, ["simulate", "replay", str(trace)])
    assert res.exit_code == 0 and "reproduced exactly" in res.output
    conf.write_text(conf.read_text().replace("paired", "fixed"))
    assert runner.invoke(main, ["simulate", "run", "--config", str(conf)]).exit_code == 0


def test_simulate_search():
    res = CliRunner().invoke(main, ["simulate", "search", "--budget", "0"])
    assert res.exit_code == 0 and "no violations" in res.output and "variant=fixed" in res.output
    res = CliRunner().invoke(main, ["simulate", "search", "--rounds", "1", "--stop-after", "1"])
    assert res.exit_code == 1


def test_client_get_unreachable():
    from logres.runtime.cluster import free_ports

    (port,) = free_ports(1)
    res = CliRunner().invoke(main, ["client", "get", "--from", f"127.0.0.1:{port}", "--timeout", "0.5"])
    assert res.exit_code != 0


def test_client_submit_needs_one_source():
    res = CliRunner().invoke(main, ["client", "submit", "--to", "127.0.0.1:1"])
    assert res.exit_code != 0 and "exactly one" in res.output


def test_bench_throughput_small(tmp_path):
    conf = tmp_path / "tp.conf"
    conf.write_text("n = 3\nf = 1\nentries_per_period = 20\nentry_size = 100\nperiod = 800\n"
                    "round_length = 100\nperiods = 1\n")
    res = CliRunner().invoke(main, ["bench", "throughput", "--config", str(conf)])
    assert res.exit_code == 0, res.output
    report = json.loads(res.output)
    assert report["entries_logged"] == 20 and report["agreement_problems"] == []
