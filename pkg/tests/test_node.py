import pytest

from logres.crypto import sign, log_sig_payload
from logres.log import validate_certificate
from logres.node import (
    EntryRejected,
    NodeConfig,
    Phase,
    PhaseError,
    begin_replication,
    collect,
    finish_epoch,
    initial_state,
    replication_next,
    replication_send,
    signing_next,
    signing_send,
)
from logres.replicate import Role
from logres.wire import LogSigMsg

NOW, PERIOD = 1_700_000_000_000, 60_000


def cluster(n, f, inputs):
    return [begin_replication(initial_state(NodeConfig(i, n, f), inputs.get(i, ()))) for i in range(n)]


def step(states, pairs, reg, down=()):
    outboxes = {i: replication_send(s, pairs[i]) for i, s in enumerate(states) if i not in down}
    sent = sum(len(o) for o in outboxes.values())
    nxt = []
    for i, s in enumerate(states):
        inbox = {j: o[i] for j, o in outboxes.items() if i in o}
        nxt.append(replication_next(s, inbox, reg))
    return nxt, sent


def run_epoch(states, pairs, reg, down=()):
    for _ in range(states[0].cfg.replication_rounds):
        states, _ = step(states, pairs, reg, down)
    signed = [signing_send(s, pairs[i], NOW, PERIOD) for i, s in enumerate(states)]
    msgs = [m for i, (_, m) in enumerate(signed) if i not in down]
    return [signing_next(s, msgs, reg) for s, _ in signed]


def test_collect():
    s = initial_state(NodeConfig(0, 5, 2, max_entry_size=4))
    s = collect(s, b"a")
    assert s.entries == (b"a",)
    assert collect(s, b"a") is s
    with pytest.raises(EntryRejected):
        collect(s, b"too long")
    with pytest.raises(EntryRejected):
        collect(s, b"")


def test_collect_skips_logged_entries(hkeys5):
    pairs, reg = hkeys5
    states = cluster(5, 2, {0: (b"a",)})
    after = [finish_epoch(s) for s, _ in run_epoch(states, pairs, reg)]
    assert collect(after[1], b"a").entries == ()


def test_begin_replication():
    s = begin_replication(initial_state(NodeConfig(2, 5, 2), (b"a",)))
    assert len(s.threads) == 5 and s.phase is Phase.REPLICATION and s.round == 1
    roles = {p: t.role for p, t in s.threads.items()}
    assert [p for p, r in roles.items() if r is Role.PRIMARY] == [2]
    with pytest.raises(PhaseError):
        collect(s, b"b")


def test_normal_case_rounds(hkeys5):
    pairs, reg = hkeys5
    inputs = {i: (bytes([97 + i]),) for i in range(5)}
    states = cluster(5, 2, inputs)
    states, sent1 = step(states, pairs, reg)
    states, sent2 = step(states, pairs, reg)
    for s in states:
        for p, t in s.threads.items():
            if t.role is Role.RESPONDER:
                assert t.decision == inputs[p]
    assert sent1 == 5 * 4 and sent2 == 5 * 4
    states, sent3 = step(states, pairs, reg)
    assert sent3 == 0
    assert all(s.phase is Phase.SIGNING for s in states)
    assert {s.decided for s in states} == {tuple(bytes([97 + i]) for i in range(5))}


def test_silent_primary_contributes_nothing(hkeys5):
    pairs, reg = hkeys5
    inputs = {i: (bytes([97 + i]),) for i in range(5)}
    out = run_epoch(cluster(5, 2, inputs), pairs, reg, down=(4,))
    correct = [s for i, (s, _) in enumerate(out) if i != 4]
    assert {s.log.entries for s in correct} == {(b"a", b"b", b"c", b"d")}
    assert all(s.decisions[4] == () for s in correct)


def test_signing_produces_valid_certificates(hkeys5):
    pairs, reg = hkeys5
    out = run_epoch(cluster(5, 2, {}), pairs, reg)
    certs = [c for _, c in out]
    assert all(c is not None and len(c.sigs) == 5 for c in certs)
    assert len({c.log for c in certs}) == 1
    assert certs[0].log.entries == ()
    assert all(validate_certificate(c, reg, NOW) for c in certs)


def test_signing_threshold_and_foreign_digest(hkeys5):
    pairs, reg = hkeys5
    states = cluster(5, 2, {})
    for _ in range(3):
        states, _ = step(states, pairs, reg)
    s, own = signing_send(states[0], pairs[0], NOW, PERIOD)
    assert own.signature.signer == 0 and own.digest == s.digest
    other = bytes(32)
    junk = LogSigMsg(1, s.log.epoch, other, sign(pairs[1], log_sig_payload(other)))
    s1, cert = signing_next(s, [junk], reg)
    assert cert is None and len(s1.sigs) == 1
    mates = [signing_send(states[i], pairs[i], NOW, PERIOD)[1] for i in (1,)]
    s2, cert = signing_next(s1, mates, reg)
    assert cert is None and len(s2.sigs) == 2
    s3, cert = signing_next(s2, [signing_send(states[2], pairs[2], NOW, PERIOD)[1]], reg)
    assert cert is not None and len(cert.sigs) == 3 and s3.phase is Phase.PUBLISHED
    with pytest.raises(PhaseError):
        signing_send(s3, pairs[0], NOW, PERIOD)


def test_failed_epoch_carries_entries(hkeys5):
    pairs, reg = hkeys5
    s = begin_replication(initial_state(NodeConfig(0, 5, 2), (b"a",)))
    for _ in range(3):
        s = replication_next(s, {}, reg)
    s, _ = signing_send(s, pairs[0], NOW, PERIOD)
    s, cert = signing_next(s, [], reg)
    assert cert is None
    back = finish_epoch(s)
    assert back.log.epoch == 0 and back.entries == (b"a",) and back.phase is Phase.COLLECTION


def test_messages_for_wrong_epoch_or_round_dropped(hkeys5):
    pairs, reg = hkeys5
    states = cluster(5, 2, {0: (b"a",)})
    bundle = replication_send(states[0], pairs[0])[1]
    stale = tuple(type(m)(m.sender, m.epoch + 1, m.round, m.primary, m.values) for m in bundle)
    s = replication_next(states[1], {0: stale}, reg)
    assert s.threads[0].witnessed == frozenset()
    s = replication_next(states[1], {2: bundle}, reg)  # sender mismatch
    assert s.threads[0].witnessed == frozenset()
    s = replication_next(states[1], {0: bundle}, reg)
    assert s.threads[0].witnessed == {(b"a",)}
