"""Acceptance criteria. Each test carries a ``criterion`` marker; the terminal
summary prints one PASS/FAIL line per criterion."""

import filecmp
import itertools
import random
import time
from dataclasses import replace
from datetime import timedelta

import pytest

import gen
from oracles import brute_force_grant, expected_outcome, nested_loop_policy_records
from provgate.capsule import seal, verify
from provgate.dsl import ALL_OPERATIONS, Comparison, Obligation, PolicyDoc, Target, parse_policy, serialize_policy
from provgate.evaluator import MISBEHAVIOR_HISTORY, AccessRequest, Outcome, applicable, build_env, decide
from provgate.generator import FLAGGED_DESCRIPTION, ViolationEvent, build_policy_records
from provgate.records import ActorRecord, ContextRecord, OperationRecord, canonical_serialize, parse_record
from provgate.service import GateService, ServiceConfig
from provgate.store import StoreSnapshot
from provgate.timefmt import utc
from scenario import START, run_scenario

criterion = pytest.mark.criterion
T0 = utc(2024, 3, 1, 12)
NOW = T0 + timedelta(days=7)


@criterion(1, "sample-policy fidelity")
def test_sample_policy_fidelity(sample_policy_text):
    started = time.perf_counter()
    doc = parse_policy(sample_policy_text, default_issued_at=T0)
    assert doc.id == "1"
    assert doc.target.subject == "Actor.ID"
    assert doc.target.record == frozenset({ALL_OPERATIONS})
    assert doc.target.restriction == Comparison("Actor.role", "==", "AuthorizedUser")
    assert doc.condition == Comparison("system.machineid", "==", "192.168.2.35")
    assert doc.effect == "Permit"
    assert doc.obligations == (Obligation(10),)
    canonical = serialize_policy(doc)
    assert serialize_policy(parse_policy(canonical)) == canonical
    assert parse_policy(canonical) == doc
    assert time.perf_counter() - started < 1.0


@criterion(2, "round-trip suite")
def test_round_trip_suite():
    started = time.perf_counter()
    rng = random.Random(2)
    for _ in range(500):
        doc = gen.policy_doc(rng)
        assert parse_policy(serialize_policy(doc)) == doc
    for _ in range(500):
        rec = gen.record(rng)
        line = canonical_serialize(rec)
        assert parse_record(line) == rec
        assert canonical_serialize(parse_record(line)) == line
    assert time.perf_counter() - started < 10.0


@criterion(3, "join oracle")
def test_join_oracle():
    started = time.perf_counter()
    rng = random.Random(3)
    for _ in range(200):
        snap = gen.store_snapshot(rng, 1000)
        got = [
            (p.actor_id, p.role, p.context_id, p.resource_id, p.timestamp, p.operation_descriptions)
            for p in build_policy_records(snap)
        ]
        assert got == nested_loop_policy_records(snap.records)
    assert time.perf_counter() - started < 30.0


# -- evaluator fixtures shared by criteria 4 and 5 ------------------------------------

ACTORS = {"a": ActorRecord("a", "Alice", "AuthorizedUser"), "b": ActorRecord("b", "Bob", "AuthorizedUser")}
CONTEXTS = {
    "c1": ContextRecord("c1", "office", {"system.machineid": "m1"}),
    "c2": ContextRecord("c2", "home", {"system.machineid": "m1"}),
}
SNAP = StoreSnapshot(tuple(ACTORS.values()) + tuple(CONTEXTS.values()))
ACTIONS = ("read", "write")
SCOPES = {"read": frozenset({"read"}), "write": frozenset({"write"}), "any": frozenset({ALL_OPERATIONS})}
MODES = ("ok", "restriction-false", "condition-indeterminate", "expired")
VIOLATION_POOL = (("a", "c1"), ("a", "c2"), ("b", "c1"), ("z", "c9"))


def pool_policy(effect, scope_name, mode, n):
    restriction = Comparison("Actor.role", "==", "Auditor" if mode == "restriction-false" else "AuthorizedUser")
    condition = Comparison("system.unset" if mode == "condition-indeterminate" else "system.machineid", "==", "m1")
    obligations = (Obligation(5),) if mode == "expired" else (Obligation(30),)
    doc = PolicyDoc(f"p{n}", Target("Actor.ID", SCOPES[scope_name], restriction), condition, effect, obligations, T0)
    covered = frozenset(ACTIONS) if scope_name == "any" else SCOPES[scope_name]
    return doc, (effect, covered, mode == "ok")


POOL = [
    pool_policy(effect, scope, mode, n)
    for n, (effect, scope, mode) in enumerate(itertools.product(("Permit", "Deny"), SCOPES, MODES))
]


def events(pairs):
    return [ViolationEvent(f"op{i}", actor, ctx, "r1", FLAGGED_DESCRIPTION, T0) for i, (actor, ctx) in enumerate(pairs)]


def oracle_tainted(actor, context, pairs):
    return any(pa == actor and pc == context for pa, pc in pairs)


@criterion(4, "evaluator oracle (exhaustive)")
def test_evaluator_oracle_exhaustive():
    action_sets = [frozenset(c) for k in (1, 2) for c in itertools.combinations(ACTIONS, k)]
    violation_sets = [c for k in (0, 1, 2) for c in itertools.combinations(VIOLATION_POOL, k)]
    policy_sets = [c for k in (0, 1, 2, 3) for c in itertools.combinations_with_replacement(POOL, k)]
    cases = discrepancies = 0
    for chosen in policy_sets:
        docs = [d for d, _ in chosen]
        flags = [f for _, f in chosen]
        for actions in action_sets:
            for pairs in violation_sets:
                req = AccessRequest("a", "AuthorizedUser", "c1", "r1", actions, NOW)
                got = decide(req, docs, SNAP, events(pairs), NOW)
                want = brute_force_grant(actions, flags, oracle_tainted("a", "c1", pairs))
                cases += 1
                if got.granted_actions != want or got.outcome.value != expected_outcome(actions, want):
                    discrepancies += 1
    print(f"criterion 4: {cases} cases, {discrepancies} discrepancies")
    assert cases > 5000
    assert discrepancies == 0


# -- criterion 5 -----------------------------------------------------------------------

CASES = 1000


def random_case(rng):
    chosen = [rng.choice(POOL) for _ in range(rng.randint(0, 5))]
    actions = frozenset(rng.sample(ACTIONS, rng.randint(1, 2)))
    actor = rng.choice("ab")
    context = rng.choice(["c1", "c2"])
    pairs = rng.sample(VIOLATION_POOL, rng.randint(0, 2))
    req = AccessRequest(actor, "AuthorizedUser", context, "r1", actions, NOW)
    return chosen, req, pairs


@criterion(5, "combining-algorithm axioms")
def test_combining_axioms():
    rng = random.Random(5)
    for _ in range(CASES):
        chosen, req, pairs = random_case(rng)
        docs = [d for d, _ in chosen]
        d = decide(req, docs, SNAP, events(pairs), NOW)

        # default-deny: nothing is granted without an applicable covering Permit
        for action in d.granted_actions:
            assert any(e == "Permit" and ok and action in cov for e, cov, ok in (f for _, f in chosen))
        assert decide(req, [], SNAP, events(pairs), NOW).outcome is Outcome.DENY

        # deny-overrides: an applicable Deny on an action removes it, and nothing else changes
        target = rng.choice(sorted(req.requested_actions))
        blocker, _ = pool_policy("Deny", target, "ok", 99)
        blocked = decide(req, docs + [blocker], SNAP, events(pairs), NOW)
        assert blocked.granted_actions == d.granted_actions - {target}

        # taint-monotonicity: more violations never grant more; a tainted request gets nothing
        extra = rng.sample(VIOLATION_POOL, rng.randint(1, 2))
        worse = decide(req, docs, SNAP, events(pairs + extra), NOW)
        assert worse.granted_actions <= d.granted_actions
        tainted = decide(req, docs, SNAP, events(pairs + [(req.actor_id, req.context_id)]), NOW)
        assert tainted.outcome is Outcome.DENY and tainted.reasons[0][0] == MISBEHAVIOR_HISTORY

        # outcome consistency
        for dec in (d, blocked, worse, tainted):
            assert dec.granted_actions <= req.requested_actions
            assert dec.outcome.value == expected_outcome(req.requested_actions, dec.granted_actions)
            assert dec.reasons


# -- criterion 6 -----------------------------------------------------------------------


def _mutate_ascii_text(rng, text):
    raw = bytearray(text.encode("utf-8"))
    positions = [i for i, b in enumerate(raw) if b < 0x80]
    i = rng.choice(positions)
    new = raw[i]
    while new == raw[i]:
        new = rng.randrange(0x80)
    raw[i] = new
    return raw.decode("utf-8")


@criterion(6, "tamper completeness")
def test_tamper_completeness():
    rng = random.Random(6)
    false_negatives = 0
    for n in range(1000):
        payload = rng.randbytes(rng.randint(1, 256))
        cap = seal(gen.ident(rng), payload, [gen.policy_doc(rng) for _ in range(rng.randint(1, 3))], T0)
        assert verify(cap, payload).intact
        if n % 2 == 0:
            mutated = bytearray(payload)
            i = rng.randrange(len(mutated))
            mutated[i] ^= rng.randint(1, 255)
            result = verify(cap, bytes(mutated))
        else:
            texts = list(cap.policy_texts)
            k = rng.randrange(len(texts))
            texts[k] = _mutate_ascii_text(rng, texts[k])
            result = verify(replace(cap, policy_texts=tuple(texts)), payload)
        false_negatives += result.intact
    assert false_negatives == 0


# -- criteria 7, 8 and 9 -------------------------------------------------------------


@criterion(7, "end-to-end cure loop")
def test_cure_loop(tmp_path):
    run = run_scenario(tmp_path)
    r = {label: res.decision for label, res in run.results.items()}
    assert r["a-c1-read"].outcome is Outcome.FULL_PERMIT
    assert r["b-c1-read"].outcome is Outcome.FULL_PERMIT
    assert r["a-c1-corrupt"].outcome is Outcome.FULL_PERMIT
    assert run.attached > 0

    after = r["a-c1-after"]
    assert after.outcome is Outcome.DENY
    assert after.reasons[0][0] == MISBEHAVIOR_HISTORY
    # same actor, another context: judged on that context's own clean history
    assert r["a-c2-after"].outcome is Outcome.FULL_PERMIT
    assert r["a-c2-after"].outcome == r["a-c2-read"].outcome
    assert (r["b-c1-after"].outcome, r["b-c1-after"].granted_actions) == (
        r["b-c1-read"].outcome,
        r["b-c1-read"].granted_actions,
    )

    trail = run.service.get_audit_trail("r1")
    issued = [res.operation.id for res in run.results.values()]
    logged = [op.id for op in trail.operations if op.description != "upload"]
    assert len(trail.operations) == run.requests + 1  # plus the upload itself
    assert sorted(logged) == sorted(issued)
    assert len(set(logged)) == len(logged)
    assert all(isinstance(op, OperationRecord) for op in trail.operations)


@criterion(8, "temporal expiry")
def test_temporal_expiry(tmp_path):
    doc = PolicyDoc("p", Target("Actor.ID", frozenset({ALL_OPERATIONS}), Comparison("Actor.role", "==", "AuthorizedUser")),
                    Comparison("Actor.ID", "!=", ""), "Permit", (Obligation(10),), T0)
    for days, expected in ((9, True), (10, False)):
        at = T0 + timedelta(days=days)
        req = AccessRequest("a", "AuthorizedUser", "c1", "r1", frozenset({"read"}), at)
        assert applicable(doc, req, build_env(req, ACTORS["a"], CONTEXTS["c1"], "read"), at) is expected

    svc = GateService(ServiceConfig(tmp_path, fixed_clock=START))
    svc.add_actor("owner", "Olivia", "Owner")
    svc.add_actor("a", "Alice", "AuthorizedUser")
    svc.add_context("c1", "office")
    svc.add_preference("p1", "Actor.ID", 'Actor.role == "AuthorizedUser"', "Permit", ("10 days",))
    svc.upload_resource("r1", b"data", "owner")
    outcomes = []
    for step in (9, 1):
        svc.clock.advance(timedelta(days=step))
        req = AccessRequest("a", "AuthorizedUser", "c1", "r1", frozenset({"read"}), svc.clock.now())
        outcomes.append(svc.request_access(req).decision.outcome)
    assert outcomes == [Outcome.FULL_PERMIT, Outcome.DENY]


@criterion(9, "fixed-clock replay")
def test_fixed_clock_replay(tmp_path):
    first = run_scenario(tmp_path / "one")
    second = run_scenario(tmp_path / "two")
    one, two = tmp_path / "one", tmp_path / "two"
    assert (one / "provenance.jsonl").read_bytes() == (two / "provenance.jsonl").read_bytes()
    assert first.service.get_audit_trail("r1").render() == second.service.get_audit_trail("r1").render()
    for sub in ("capsules", "seals"):
        cmp = filecmp.dircmp(one / sub, two / sub)
        assert not cmp.left_only and not cmp.right_only
        _, mismatch, errors = filecmp.cmpfiles(one / sub, two / sub, cmp.common_files, shallow=False)
        assert not mismatch and not errors
