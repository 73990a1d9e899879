import pytest

from logres.crypto import sign, vote_payload
from logres.replicate import (
    CORRECT,
    PrematureDecision,
    ReplicateMsg,
    Role,
    Variant,
    WitnessedValue,
    thread_decide,
    thread_init,
    thread_next,
    thread_send,
)

X = (b"x",)
Y = (b"y",)
ALL5 = range(5)


def vote(pairs, value, primary, witnesses):
    return WitnessedValue(value, primary, tuple(sign(pairs[w], vote_payload(value, primary)) for w in witnesses))


def msg(sender, r, primary, *values):
    return ReplicateMsg(sender, 0, r, primary, tuple(values))


def test_init_roles():
    t = thread_init(0, 0, X, rounds=3)
    assert t.role is Role.PRIMARY and t.input == X
    r = thread_init(1, 0, X, rounds=3)
    assert r.role is Role.RESPONDER and r.decision == () and r.witnessed == frozenset()
    assert r.input == ()  # responders take no input in a foreign thread


def test_primary_broadcasts_once(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(0, 0, X, rounds=3)
    out = thread_send(t, 1, pairs[0], ALL5)
    assert sorted(out) == [1, 2, 3, 4]
    assert len(set(out.values())) == 1
    wv = out[1].values[0]
    assert wv.value == X and wv.witnesses == {0}
    assert thread_send(t, 2, pairs[0], ALL5) == {}


def test_responder_accepts_and_forwards(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    assert thread_send(t, 2, pairs[1], ALL5) == {}
    t = thread_next(t, 1, [msg(0, 1, 0, vote(pairs, X, 0, [0]))], reg)
    assert t.witnessed == {X} and t.decision == X
    out = thread_send(t, 2, pairs[1], ALL5)
    assert sorted(out) == [2, 3, 4]  # other responders only
    assert out[2].values[0].witnesses == {0, 1}


def test_under_witnessed_value_dropped(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    t = thread_next(t, 1, [], reg)
    t = thread_next(t, 2, [], reg)
    after = thread_next(t, 3, [msg(2, 3, 0, vote(pairs, X, 0, [0, 2]))], reg)
    assert after.witnessed == frozenset() and after.decision == ()


def test_value_without_primary_signature_dropped(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    t = thread_next(t, 1, [msg(2, 1, 0, vote(pairs, X, 0, [2, 3]))], reg)
    assert t.witnessed == frozenset()


def test_second_value_clears_decision_but_is_forwarded(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    t = thread_next(t, 1, [msg(0, 1, 0, vote(pairs, X, 0, [0]))], reg)
    t = thread_next(t, 2, [msg(2, 2, 0, vote(pairs, Y, 0, [0, 2]))], reg)
    assert t.witnessed == {X, Y} and t.decision == ()
    out = thread_send(t, 3, pairs[1], ALL5)
    assert [wv.value for wv in out[3].values] == [Y]
    assert out[3].values[0].witnesses == {0, 1, 2}
    # monotone: a repeat of X later does not restore the decision
    t = thread_next(t, 3, [msg(3, 3, 0, vote(pairs, X, 0, [0, 2, 3]))], reg)
    assert t.decision == ()


def test_witness_sets_merge(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    t = thread_next(t, 1, [], reg)
    inbox = [msg(2, 2, 0, vote(pairs, X, 0, [0])), msg(3, 2, 0, vote(pairs, X, 0, [3]))]
    t = thread_next(t, 2, inbox, reg)
    assert t.witnessed == {X}


def test_invalid_signature_and_duplicate_sender(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    good = vote(pairs, X, 0, [0])
    forged = WitnessedValue(Y, 0, (sign(pairs[2], vote_payload(Y, 0)),))
    relabelled = WitnessedValue(Y, 0, tuple(type(s)(0, s.data) for s in forged.sigs))
    t2 = thread_next(t, 1, [msg(0, 1, 0, relabelled)], reg)
    assert t2.witnessed == frozenset()
    t3 = thread_next(t, 1, [msg(0, 1, 0, good), msg(0, 1, 0, vote(pairs, Y, 0, [0]))], reg)
    assert t3.witnessed == {X}


def test_cross_thread_signature_rejected(hkeys5):
    pairs, reg = hkeys5
    t = thread_init(1, 2, (), rounds=3)
    replayed = WitnessedValue(X, 2, (sign(pairs[2], vote_payload(X, 0)),))
    assert thread_next(t, 1, [msg(2, 1, 2, replayed)], reg).witnessed == frozenset()
    unbound = Variant(bind_primary=False)
    replayed = WitnessedValue(X, 2, (sign(pairs[2], unbound.payload(X, 0)),))
    assert thread_next(t, 1, [msg(2, 1, 2, replayed)], reg, unbound).witnessed == {X}


def test_decide():
    assert thread_decide(thread_init(0, 0, X, rounds=2)) == X
    t = thread_init(1, 0, (), rounds=2)
    with pytest.raises(PrematureDecision):
        thread_decide(t)


def test_empty_inbox_keeps_state(hkeys5):
    _, reg = hkeys5
    t = thread_init(1, 0, (), rounds=3)
    t1 = thread_next(t, 1, [], reg)
    assert (t1.decision, t1.witnessed, t1.pending) == ((), frozenset(), ())
    with pytest.raises(ValueError):
        thread_next(t, 4, [], reg)


def test_equivocation_n3_both_decide_empty(hkeys3):
    pairs, reg = hkeys3
    a = thread_init(1, 0, (), rounds=2)
    b = thread_init(2, 0, (), rounds=2)
    a = thread_next(a, 1, [msg(0, 1, 0, vote(pairs, X, 0, [0]))], reg)
    b = thread_next(b, 1, [msg(0, 1, 0, vote(pairs, Y, 0, [0]))], reg)
    to_b = thread_send(a, 2, pairs[1], range(3))[2]
    to_a = thread_send(b, 2, pairs[2], range(3))[1]
    a = thread_next(a, 2, [to_a], reg)
    b = thread_next(b, 2, [to_b], reg)
    assert thread_decide(a) == thread_decide(b) == ()


def test_early_return_variant_exits(hkeys5):
    pairs, reg = hkeys5
    early = Variant(early_return=True)
    t = thread_init(1, 0, (), rounds=3)
    t = thread_next(t, 1, [msg(0, 1, 0, vote(pairs, X, 0, [0]))], reg, early)
    t = thread_next(t, 2, [], reg, early)
    assert t.exited and thread_decide(t) == X
    assert not CORRECT.early_return
