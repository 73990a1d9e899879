"""Command line: key generation, node, client, benchmarks and simulation."""

from __future__ import annotations

import asyncio
import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from .crypto import generate_keys
from .log import mk_digest, validate_certificate
from .runtime.config import Address, ConfigError, Deployment, Member, load_deployment, render_deployment


def _fail(msg: str) -> None:
    raise click.ClickException(msg)


@click.group()
@click.option("--log-level", default="WARNING", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def main(log_level: str) -> None:
    """Byzantine fault tolerant replication of a signed, append-only log."""
    logging.basicConfig(level=log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")


# keygen


@main.command()
@click.option("-n", "--nodes", "n", type=int, required=True, help="number of nodes")
@click.option("-f", "--faults", "f", type=int, required=True, help="tolerated Byzantine nodes")
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--base-port", type=int, default=7000, show_default=True)
@click.option("--http-base-port", type=int, default=None, help="also serve the JSON API from this port on")
@click.option("--period", type=int, default=60_000, show_default=True, help="ms")
@click.option("--round-length", type=float, default=100.0, show_default=True, help="ms")
@click.option("--origin", type=int, default=0, show_default=True, help="slot 0 start, ms since the Unix epoch")
def keygen(n, f, out, host, base_port, http_base_port, period, round_length, origin):
    """Create key files and one deployment config per node."""
    if not n > 2 * f >= 0:
        _fail(f"need n > 2f and f >= 0 (n={n}, f={f})")
    out.mkdir(parents=True, exist_ok=True)
    pairs, _ = generate_keys(os.urandom(32), n, f)
    members = tuple(Member(i, Address(host, base_port + i), pairs[i].public) for i in range(n))
    for i, kp in enumerate(pairs):
        key_file = out / f"node-{i}.key"
        key_file.write_text(kp.secret.hex() + "\n")
        key_file.chmod(0o600)
        try:
            dep = Deployment(
                members, i, f, period=period, round_length=round_length, origin=origin,
                data_dir=Path(f"data/node-{i}"), key_file=Path(key_file.name),
                http=Address(host, http_base_port + i) if http_base_port else None,
            )
        except ConfigError as exc:
            _fail(str(exc))
        (out / f"node-{i}.conf").write_text(render_deployment(dep))
    click.echo(f"wrote {n} key files and configs to {out}")


# node


@main.group()
def node() -> None:
    """Run a replica."""


@node.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
def node_run(config_path):
    """Run epochs forever (Ctrl-C to stop)."""
    from .runtime.node import NodeRuntime

    try:
        dep = load_deployment(config_path)
        runtime = NodeRuntime(dep)
    except ConfigError as exc:
        _fail(str(exc))
    try:
        asyncio.run(runtime.run())
    except KeyboardInterrupt:
        pass


# client


@main.group()
def client() -> None:
    """Submit entries and fetch certificates."""


@client.command("submit")
@click.option("--to", "to", required=True, help="comma separated host:port list (use f+1 nodes)")
@click.option("--entry-file", type=click.File("rb"), default=None, help="entry bytes; '-' for stdin")
@click.option("--text", default=None, help="submit this UTF-8 text instead of a file")
@click.option("--timeout", type=float, default=5.0, show_default=True)
def client_submit(to, entry_file, text, timeout):
    """Send one entry to every listed node."""
    from .runtime.client import submit

    if (entry_file is None) == (text is None):
        _fail("give exactly one of --entry-file or --text")
    entry = entry_file.read() if entry_file is not None else text.encode()
    try:
        addresses = [Address.parse(a) for a in to.split(",") if a.strip()]
    except ConfigError as exc:
        _fail(str(exc))
    results = asyncio.run(submit(entry, addresses, timeout))
    for r in results:
        click.echo(f"{r.address}\t{r.status}" + (f"\t{r.reason}" if r.reason else ""))
    if not any(r.ok for r in results):
        sys.exit(1)


@client.command("get")
@click.option("--from", "source", required=True, help="host:port of a node")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="deployment config whose public keys are used to validate the certificate")
@click.option("--entries/--no-entries", default=False, help="print the logged entries (hex)")
@click.option("--timeout", type=float, default=5.0, show_default=True)
def client_get(source, config_path, entries, timeout):
    """Fetch and optionally validate the latest certificate."""
    from .runtime.client import get_certificate

    try:
        cert = asyncio.run(get_certificate(source, timeout))
    except (OSError, asyncio.TimeoutError) as exc:
        _fail(f"{source}: {exc or type(exc).__name__}")
    if cert is None:
        _fail(f"{source} has not published a certificate yet")
    out = {
        "epoch": cert.log.epoch,
        "digest": mk_digest(cert.log).hex(),
        "prev_digest": cert.log.prev_digest.hex(),
        "expiration": cert.log.expiration,
        "entries": len(cert.log.entries),
        "signers": cert.signers,
    }
    if config_path:
        check = validate_certificate(cert, load_deployment(config_path).registry(), int(time.time() * 1000))
        out["valid"] = check.ok
        if not check.ok:
            out["reason"] = check.reason.value
    if entries:
        out["log"] = [e.hex() for e in cert.log.entries]
    click.echo(json.dumps(out, indent=2))
    if config_path and not out["valid"]:
        sys.exit(1)


# bench


def _read_kv(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            _fail(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


@main.group()
def bench() -> None:
    """Benchmarks on an in-process loopback cluster (JSON report on stdout)."""


@bench.command("latency")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
def bench_latency_cmd(config_path):
    """Sweep the round length down to the smallest one that still publishes every request.

    Config keys: n, f, link_latency (ms), bandwidth (bit/s), entry_size (B),
    start_round (ms), step (ms), periods, collection (ms).
    """
    from .runtime.bench import bench_latency
    from .runtime.config import NetParams

    kv = _read_kv(config_path)
    try:
        net = NetParams(float(kv.get("link_latency", 20)), float(kv.get("bandwidth", 100e6)),
                        int(kv.get("entry_size", 1570)))
        report = asyncio.run(bench_latency(
            int(kv.get("n", 5)), int(kv.get("f", 2)), net,
            start_round=float(kv.get("start_round", 40)), step=float(kv.get("step", 2)),
            periods=int(kv.get("periods", 3)), collection_ms=int(kv.get("collection", 120)),
        ))
    except (ValueError, ConfigError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(report.to_dict(), indent=2))


@bench.command("throughput")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
def bench_throughput_cmd(config_path):
    """Push a fixed workload through a few periods and count what gets certified.

    Config keys: n, f, entries_per_period, entry_size, period (ms),
    round_length (ms), periods, padding (comma separated node ids),
    link_latency (ms), bandwidth (bit/s).
    """
    from .runtime.bench import bench_throughput

    kv = _read_kv(config_path)
    padding = tuple(int(x) for x in kv.get("padding", "").split(",") if x.strip())
    try:
        report = asyncio.run(bench_throughput(
            int(kv.get("n", 5)), int(kv.get("f", 2)),
            entries_per_period=int(kv.get("entries_per_period", 1000)),
            entry_size=int(kv.get("entry_size", 1570)),
            period=int(kv.get("period", 60_000)), round_length=float(kv.get("round_length", 2_000)),
            periods=int(kv.get("periods", 1)), padding=padding,
            link_latency=float(kv.get("link_latency", 0)), bandwidth=float(kv.get("bandwidth", 0)),
        ))
    except (ValueError, ConfigError) as exc:
        _fail(str(exc))
    click.echo(json.dumps(report.to_dict(), indent=2))


@bench.command("bound")
@click.option("-f", "--faults", "fs", type=int, multiple=True, default=(0, 1, 2), show_default=True)
@click.option("--latency", type=float, default=20.0, show_default=True, help="ms")
@click.option("--bandwidth", type=float, default=100e6, show_default=True, help="bit/s")
@click.option("--entry-size", type=int, default=1570, show_default=True, help="bytes")
def bench_bound(fs, latency, bandwidth, entry_size):
    """Print the analytic request-latency lower bound."""
    from .runtime.config import NetParams
    from .runtime.latency import latency_table

    for row in latency_table(fs, NetParams(latency, bandwidth, entry_size)):
        click.echo(f"f={row.f}\tanalytic {row.analytic_ms:.2f} ms ({row.analytic_round_ms:.4f} ms/round)"
                   f"\ttestbed {row.testbed_ms:.2f} ms ({row.testbed_round_ms} ms/round)")


# simulate


@main.group()
def simulate() -> None:
    """Lock-step Heard-Of simulation of one epoch."""


@simulate.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--dump", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="write the trace of the first run here")
def simulate_run(config_path, dump):
    """Run a seeded campaign and check every trace."""
    from .sim.campaign import dump_trace, load_config, run_campaign, run_one

    try:
        cfg = load_config(config_path)
    except ValueError as exc:
        _fail(str(exc))
    report = run_campaign(cfg)
    click.echo(report.summary())
    if dump is not None:
        dump.write_text(dump_trace(run_one(cfg, cfg.seed), cfg))
    if not report.ok:
        sys.exit(1)


@simulate.command("search")
@click.option("-n", type=int, default=3, show_default=True)
@click.option("-f", type=int, default=1, show_default=True)
@click.option("--domain", default="a", show_default=True, help="entry symbols, comma separated")
@click.option("--budget", type=int, default=1, show_default=True, help="forged values per message")
@click.option("--rounds", type=int, default=None, help="replication rounds (default f+1)")
@click.option("--variant", type=click.Choice(["fixed", "unbound", "early-return"]), default="fixed",
              show_default=True)
@click.option("--exclusive", is_flag=True, help="round-r signatures not usable before round r+1")
@click.option("--stop-after", type=int, default=None, help="stop after this many violations")
def simulate_search(n, f, domain, budget, rounds, variant, exclusive, stop_after):
    """Exhaustively enumerate adversary choices and report property violations."""
    from .sim.campaign import VARIANTS
    from .sim.search import exhaustive_search

    symbols = tuple(s.strip().encode() for s in domain.split(",") if s.strip())
    try:
        report = exhaustive_search(n, f, symbols, budget, rounds=rounds, variant=VARIANTS[variant],
                                   inclusive=not exclusive, stop_after=stop_after)
    except ValueError as exc:
        _fail(str(exc))
    click.echo(report.summary())
    for v in report.violations[:10]:
        click.echo("  " + v.describe())
    if not report.ok:
        sys.exit(1)


@simulate.command("replay")
@click.argument("trace", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def simulate_replay(trace):
    """Re-run the run recorded in TRACE and compare the result byte for byte."""
    from .sim.campaign import replay
    from .sim.properties import check_all

    try:
        result = replay(trace.read_text())
    except ValueError as exc:
        _fail(str(exc))
    if result.matches:
        click.echo("trace reproduced exactly")
    else:
        click.echo(f"trace differs: {result.first_difference}")
    if result.trace.valid and result.trace.complete:
        for v in check_all(result.trace):
            click.echo(str(v))
    sys.exit(0 if result.matches else 1)


if __name__ == "__main__":
    main()
