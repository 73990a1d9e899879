"""Transport, client and loopback-cluster tests (real sockets, short periods)."""

import asyncio
import struct
import time

import pytest

from logres.log import validate_certificate
from logres.runtime.client import get_certificate, submit, submit_batch
from logres.runtime.cluster import LocalCluster, free_ports, local_deployments
from logres.runtime.node import NodeRuntime, Slot
from logres.runtime.transport import FrameTooLarge, PeerLink, read_frame
from logres.wire import ACK_ACCEPTED, ACK_DUPLICATE, ACK_REJECTED, FRAME_LOG_SIG, frame

PERIOD, ROUND = 600, 50


def run(coro):
    return asyncio.run(coro)


def reader_with(data: bytes, eof: bool = True) -> asyncio.StreamReader:
    r = asyncio.StreamReader()
    r.feed_data(data)
    if eof:
        r.feed_eof()
    return r


def test_read_frame():
    async def go():
        unknown = struct.pack(">IB", 3, 0x7F) + b"zz"
        r = reader_with(unknown + frame(FRAME_LOG_SIG, b"ok"))
        assert await read_frame(r) == (-1, b"")
        assert await read_frame(r) == (FRAME_LOG_SIG, b"ok")
        assert await read_frame(r) is None
        with pytest.raises(FrameTooLarge):
            await read_frame(reader_with(struct.pack(">I", 0)))
        with pytest.raises(asyncio.IncompleteReadError):
            await read_frame(reader_with(frame(FRAME_LOG_SIG, b"abc")[:-1]))

    run(go())


def test_peer_link_latency_and_drops():
    async def go():
        got = asyncio.get_running_loop().create_future()

        async def handle(reader, writer):
            kind, body = await read_frame(reader)
            got.set_result((time.monotonic(), body))
            writer.close()

        server = await asyncio.start_server(handle, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        link = PeerLink("127.0.0.1", port, latency_ms=40, bandwidth=1e6)
        link.start()
        sent = time.monotonic()
        link.send(frame(FRAME_LOG_SIG, b"x" * 995))  # 1000 bytes at 1 Mb/s = 8 ms
        at, body = await asyncio.wait_for(got, 2)
        assert at - sent >= 0.048 and body == b"x" * 995
        await link.close()
        server.close()

        (dead,) = free_ports(1)
        lost = PeerLink("127.0.0.1", dead)
        lost.start()
        lost.send(frame(FRAME_LOG_SIG, b"x"))
        await asyncio.sleep(0.2)
        assert lost.stats.frames_dropped == 1
        await lost.close()

    run(go())


def test_slot_schedule():
    s = Slot(3, 100.0, 1.0, 0.1, 3)
    assert s.collect_end == pytest.approx(100.6)
    assert s.round_end(3) == pytest.approx(100.9)
    assert s.end == pytest.approx(101.0)


def test_submit_entry_rules_without_network():
    dep = local_deployments(3, 1, period=PERIOD, round_length=ROUND, max_entry_size=8)[0]
    node = NodeRuntime(dep)
    assert node.submit_entry(b"a") == (ACK_ACCEPTED, "")
    assert node.submit_entry(b"a")[0] == ACK_DUPLICATE
    assert node.submit_entry(b"")[0] == ACK_REJECTED
    assert node.submit_entry(b"x" * 9)[0] == ACK_REJECTED
    assert node.status()["pending_entries"] == 1
    assert (node.metrics.duplicates, node.metrics.rejected) == (1, 2)


def test_late_and_future_messages():
    deps = local_deployments(3, 1, period=PERIOD, round_length=ROUND)
    node = NodeRuntime(deps[0])
    from logres.replicate import ReplicateMsg

    node._on_replicate((ReplicateMsg(1, 0, 1, 1, ()),))  # epoch 0 is already over
    assert node.metrics.late_messages == 1
    node._needs_catch_up = False
    node._on_replicate((ReplicateMsg(1, 5, 1, 1, ()),))
    assert node._needs_catch_up
    node._on_replicate((ReplicateMsg(1, 1, 1, 1, ()), ReplicateMsg(2, 1, 1, 2, ())))
    assert node.metrics.bad_frames == 1


def test_crashed_node_and_client_flow():
    async def go():
        deps = local_deployments(5, 2, period=PERIOD, round_length=ROUND)
        async with LocalCluster(deps, down=[4]) as cluster:
            n0 = cluster.nodes[0]
            assert await get_certificate(cluster.addresses[0], 1.0) is None
            acks = await submit(b"hello", cluster.addresses[:3], timeout=1.0)
            assert [a.status for a in acks] == ["accepted"] * 3
            again = await submit(b"hello", cluster.addresses[:1], timeout=1.0)
            assert again[0].ok
            dead = await submit(b"x", [cluster.addresses[4]], timeout=0.5)
            assert dead[0].status == "unreachable"
            assert await cluster.wait_for_entries([b"hello"], timeout=3 * PERIOD / 1000)
            assert cluster.check_agreement() == []
            certs = cluster.certificates()
            assert len({c.log for c in certs.values()}) == 1
            cert = await get_certificate(cluster.addresses[1], 1.0)
            assert validate_certificate(cert, cluster.registry, int(time.time() * 1000))
            assert cert.log.entries.count(b"hello") == 1
            # after publication the same entry is a duplicate
            assert (await submit(b"hello", cluster.addresses[:1], 1.0))[0].status == "duplicate"
            # during the next epoch's replication, clients still see the last certificate
            slot = n0.next_slot()
            await asyncio.sleep(max(0.0, slot.collect_end - time.time()) + ROUND / 2000)
            during = await get_certificate(cluster.addresses[0], 1.0)
            assert during.log.epoch == n0.publications[-1].epoch
            assert n0.state.phase.value in ("replication", "signing")

    run(go())


def test_empty_workload_publishes_and_persists(tmp_path):
    async def go():
        deps = local_deployments(3, 1, period=400, round_length=40, data_root=tmp_path)
        async with LocalCluster(deps) as cluster:
            ok = await cluster.wait_for(
                lambda: all(len(n.publications) >= 2 for n in cluster.nodes.values()), 3.0)
            assert ok
            assert all(n.certificate.log.entries == () for n in cluster.nodes.values())
            assert cluster.check_agreement() == []
            await submit(b"kept", cluster.addresses[:2], 1.0)
            assert await cluster.wait_for_entries([b"kept"], 2.0)
            latest = cluster.nodes[0].certificate
        assert (tmp_path / "node-0" / "latest.cert").exists()
        restarted = NodeRuntime(deps[0])
        assert restarted.certificate.log.epoch >= latest.log.epoch
        assert b"kept" in restarted.state.log

    run(go())


def test_restarted_node_catches_up():
    async def go():
        deps = local_deployments(3, 1, period=400, round_length=40)
        async with LocalCluster(deps, down=[2]) as cluster:
            assert await cluster.wait_for(lambda: len(cluster.nodes[0].publications) >= 2, 3.0)
            late = NodeRuntime(deps[2])
            await late.start()
            task = asyncio.get_running_loop().create_task(late.run())
            ok = await cluster.wait_for(lambda: late.certificate is not None, 3.0)
            late.stop()
            await task
            assert ok and late.metrics.catch_ups >= 1

    run(go())


def test_submit_batch_pipelines():
    async def go():
        deps = local_deployments(3, 1, period=PERIOD, round_length=ROUND)
        async with LocalCluster(deps) as cluster:
            res = await submit_batch([b"a", b"b", b"a"], cluster.addresses[0], 1.0)
            assert [r.status for r in res] == ["accepted", "accepted", "duplicate"]

    run(go())
