"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` or
``python3 tests/test_acceptance.py``.
"""

import io
import json
import random
import sys
import time
from dataclasses import replace
from fractions import Fraction

import pytest

from cloudalloc import errors
from cloudalloc.cli import InteractiveSession, main
from cloudalloc.core import Allocated, AllocatedOutcome, Migrating, VmRequest, VmSpec
from cloudalloc.engine import Engine, run_scenario
from cloudalloc.policies import PolicyKind, PolicyState, allocate
from cloudalloc.scenario import BUNDLED, load_scenario, write_report
from cloudalloc.telemetry import summarize

from conftest import make_cluster, random_scenario, random_spec


@pytest.fixture
def report(capsys):
    started = time.perf_counter()

    def _report(number, ok, detail):
        elapsed = time.perf_counter() - started
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({elapsed:.2f}s)")
        assert ok, detail
        assert elapsed < 10, f"criterion {number} took {elapsed:.1f}s"

    return _report


def arrivals(log):
    out = []
    for line in log.splitlines():
        if line.startswith("#"):
            continue
        t, _, kind, payload = line.split("\t")
        if kind == "RequestArrival":
            out.append(json.loads(payload))
    return out


def test_case1_suggests_without_allocating(report):
    log = run_scenario(load_scenario("case1")).log
    (arrival,) = arrivals(log)
    m = summarize(log)
    ok = arrival["outcome"] == "Suggested" and len(arrival["candidates"]) >= 1 and m.counters["allocations"] == 0
    report(1, ok, f"case1 -> {arrival['outcome']} with {len(arrival.get('candidates', []))} candidates, "
                  f"{m.counters['allocations']} allocations")


def test_case2_ranks_dominating_vm_first(report):
    scenario = load_scenario("case2")
    cluster = scenario.build_cluster()
    (arrival,) = arrivals(run_scenario(scenario).log)
    demand = scenario.requests[0].required
    first = arrival["candidates"][0][0] if arrival.get("candidates") else None
    dominates = first is not None and all(
        o >= d for o, d in zip(cluster.vms[first].spec.components(), demand.components())
    )
    ok = arrival["outcome"] == "Suggested" and dominates
    report(2, ok, f"case2 -> {arrival['outcome']}, ranking {[c[0] for c in arrival.get('candidates', [])]}, "
                  f"first dominates: {dominates}")


def test_case3_allocates_matching_vm(report):
    (arrival,) = arrivals(run_scenario(load_scenario("case3")).log)
    ok = arrival["outcome"] == "Allocated" and arrival["vm"] == 2
    report(3, ok, f"case3 -> {arrival['outcome']} vm {arrival.get('vm')}")


def test_reallocation_merges_two_vms(report):
    scenario = load_scenario("reallocation")
    engine = Engine(scenario)
    log = engine.run().log
    merged_id = served_by = None
    at_merge = None
    for line in log.splitlines()[1:]:
        t, _, kind, payload = line.split("\t")
        p = json.loads(payload)
        if kind == "MoveComplete" and "merged" in p:
            merged_id = p["merged"]
        if kind == "QueueRetry":
            for request_id, vm_id in p["allocated"]:
                if request_id == scenario.requests[0].request_id:
                    served_by = vm_id
    # replay to the merge instant to inspect the merged VM while still Free
    replay = Engine(scenario)
    while True:
        line = replay.step()
        if "MoveComplete" in line and '"merged"' in line:
            break
    merged = replay.cluster.vms.get(merged_id)
    free = replay.cluster.free_vms()
    if merged is not None:
        at_merge = (str(merged.spec.cpu_ghz), merged.host_id, merged.is_free)
    ok = (
        merged is not None
        and [vm.vm_id for vm in free] == [merged_id]
        and merged.spec.cpu_ghz == Fraction(2)
        and served_by == merged_id
    )
    report(4, ok, f"merged vm {merged_id} (ghz, host, free) = {at_merge}, request served by vm {served_by}")


def pool_oracle(cluster, demand):
    return [
        v for v in sorted(cluster.vms)
        if cluster.vms[v].state.kind == "Free"
        and all(o >= d for o, d in zip(cluster.vms[v].spec.components(), demand.components()))
    ]


def oracle_choice(kind, pool, cluster, state_flags, cursor):
    if not pool:
        return None
    if kind is PolicyKind.ROUND_ROBIN:
        return pool[cursor % len(pool)]
    if kind is PolicyKind.EQUAL_SPREAD:
        loads = [cluster.vms[v].pending_load for v in pool]
        return pool[loads.index(min(loads))]
    if kind is PolicyKind.ACTIVE_MONITORING:
        counts = [cluster.vms[v].active_request_count for v in pool]
        return pool[counts.index(min(counts))]
    for v in pool:
        if state_flags.get(v, True):
            return v
    return None


def test_policy_oracle_equivalence(report):
    rng = random.Random(2024)
    kinds = (PolicyKind.ROUND_ROBIN, PolicyKind.EQUAL_SPREAD, PolicyKind.ACTIVE_MONITORING, PolicyKind.THROTTLED)
    mismatches = checks = 0
    for pool_no in range(1000):
        n = rng.randint(0, 20)
        specs = [random_spec(rng, small=True) for _ in range(n)]
        states = [rng.random() for _ in range(n)]
        loads = [(Fraction(rng.randint(0, 6)), rng.randint(0, 3)) for _ in range(n)]
        demand = random_spec(rng, small=True)
        flags = {v + 1: rng.random() < 0.7 for v in range(n)}
        for kind in kinds:
            cluster = make_cluster({1: VmSpec(10**6, 1000, 1000, 10**7)}, [(i + 1, 1, s) for i, s in enumerate(specs)])
            for vm, roll, (load, count) in zip(cluster.vms.values(), states, loads):
                if roll < 0.2:
                    vm.state = Allocated(None, Fraction(99))
                elif roll < 0.3:
                    vm.state = Migrating(1)
                vm.pending_load, vm.active_request_count = load, count
            state = PolicyState(kind=kind, rng_seed=pool_no)
            if kind is PolicyKind.THROTTLED:
                state.availability_index = dict(flags)
            oracle_flags = dict(flags)
            cursor = 0
            for step in range(3):
                pool = pool_oracle(cluster, demand)
                expected = oracle_choice(kind, pool, cluster, oracle_flags, cursor)
                out = allocate(cluster, VmRequest(step, 0, demand, 5), state, 0)
                got = out.vm_id if isinstance(out, AllocatedOutcome) else None
                checks += 1
                if got != expected:
                    mismatches += 1
                if pool:
                    cursor += 1
                if expected is not None:
                    oracle_flags[expected] = False
    report(5, mismatches == 0, f"{mismatches} mismatches over {checks} selections on 1000 pools x 4 policies")


def test_reservation_safety(report):
    rng = random.Random(606)
    failed = started = refused = 0
    refusal_kinds = set()
    late_refusals = 0
    for _ in range(500):
        scenario = random_scenario(rng, reservation=True)
        log = run_scenario(scenario).log
        m = summarize(log)
        failed += m.counters["migrations_failed"]
        started += m.counters["migrations_started"]
        refused += m.counters["migrations_refused"]
        for line in log.splitlines()[1:]:
            _, _, kind, payload = line.split("\t")
            p = json.loads(payload)
            if kind == "RequestArrival" and p.get("migration", {}).get("status") == "infeasible":
                refusal_kinds.add(p["migration"]["error"])
            elif kind != "RequestArrival" and "error" in p:
                late_refusals += 1
    adversarial = summarize(run_scenario(load_scenario("adversarial")).log)
    guarded = load_scenario("adversarial")
    guarded = replace(guarded, migration=replace(guarded.migration, reservation=True))
    guarded_failed = summarize(run_scenario(guarded).log).counters["migrations_failed"]
    ok = (
        failed == 0
        and late_refusals == 0
        and all(issubclass(getattr(errors, k), errors.MigrationInfeasible) for k in refusal_kinds)
        and started > 100
        and adversarial.counters["migrations_failed"] >= 1
        and guarded_failed == 0
    )
    report(6, ok, f"500 runs with reservation: {started} started, {refused} refused at reservation time "
                  f"{sorted(refusal_kinds)}, {failed} failed; adversarial without reservation: "
                  f"{adversarial.counters['migrations_failed']} failed, with reservation: {guarded_failed}")


def test_capacity_conservation(report):
    rng = random.Random(707)
    violations = []
    events = 0
    policies = [k.value for k in PolicyKind]
    for i in range(500):
        scenario = random_scenario(rng, reservation=i % 4 != 0, policy=rng.choice(policies))
        result = Engine(scenario, check_invariants=True).run()
        violations += result.engine.violations
        events += len(result.log.splitlines()) - 1
    report(7, not violations, f"{len(violations)} violations over 500 runs, {events} event boundaries")


def test_determinism(report):
    diffs = []
    for name in BUNDLED:
        a, b = run_scenario(load_scenario(name)).log, run_scenario(load_scenario(name)).log
        reports = [write_report(summarize(log), fmt) for log in (a, b) for fmt in ("doc", "table")]
        if a != b or reports[0] != reports[2] or reports[1] != reports[3]:
            diffs.append(name)
    report(8, not diffs, f"{len(BUNDLED)} bundled scenarios, non-identical: {diffs or 'none'}")


def test_throttled_not_slower_than_random_round_robin(report):
    base = load_scenario("heterogeneous")
    throttled = summarize(run_scenario(base.with_overrides(seed=0, policy="Throttled")).log)
    rr = summarize(run_scenario(base.with_overrides(seed=0, policy="RoundRobin", rr_mode="random")).log)
    ok = throttled.avg_response <= rr.avg_response
    report(9, ok, f"heterogeneous seed 0: Throttled {throttled.avg_response:.4f} vs "
                  f"RoundRobin(random) {rr.avg_response:.4f} mean response ticks")


def test_session_batch_equivalence(report):
    mismatched = []
    for name in ("case1", "case2", "case3"):
        scenario = load_scenario(name)
        batch = arrivals(run_scenario(scenario).log)
        (req,) = scenario.requests
        session = InteractiveSession(scenario, lease=req.lease_duration, on_suggestion=req.on_suggestion)
        transcript = f"{req.required.ram_mb}\n{req.required.cpu_count}\n{req.required.disk_gb}\n"
        session.loop(io.StringIO(transcript), io.StringIO())
        expected = {k: v for k, v in batch[0].items() if k != "util"}
        if session.outcomes != [expected]:
            mismatched.append(name)
        out = io.StringIO()
        main(["interactive", name, "--lease", str(req.lease_duration),
              "--on-suggestion", req.on_suggestion.value], stdin=io.StringIO(transcript), stdout=out)
        marker = "Allocated VM ID" if expected["outcome"] == "Allocated" else "Suggested VMs"
        if marker not in out.getvalue():
            mismatched.append(f"{name} (console)")
    report(10, not mismatched, f"case1-3 session vs batch mismatches: {mismatched or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
