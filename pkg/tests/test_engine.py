import json
import random
from fractions import Fraction

import pytest

from cloudalloc.engine import Engine, run_scenario
from cloudalloc.errors import TimeTravel
from cloudalloc.scenario import load_scenario, parse_scenario

from conftest import random_scenario


def idle_engine(horizon=10**6):
    return Engine(parse_scenario({"name": "idle", "hosts": [], "policy": {"kind": "Throttled"}, "horizon": horizon}))


def events(log):
    out = []
    for line in log.splitlines():
        if line.startswith("#"):
            continue
        t, seq, kind, payload = line.split("\t")
        out.append((Fraction(t), int(seq), kind, json.loads(payload)))
    return out


def test_schedule_orders_by_time():
    e = idle_engine()
    e.schedule(5, "QueueRetry")
    e.schedule(3, "QueueRetry")
    e.run()
    assert [t for t, *_ in events(e.log_text())] == [3, 5]


def test_equal_times_keep_insertion_order():
    e = idle_engine()
    for _ in range(5):
        e.schedule(7, "QueueRetry")
    e.run()
    assert [s for _, s, *_ in events(e.log_text())] == [0, 1, 2, 3, 4]


def test_random_schedules_match_sort_oracle():
    rng = random.Random(10000)
    e = idle_engine()
    expected = []
    for seq in range(10000):
        t = Fraction(rng.randint(0, 500), rng.choice([1, 2, 3]))
        e.schedule(t, "QueueRetry")
        expected.append((t, seq))
    e.run()
    assert [(t, s) for t, s, *_ in events(e.log_text())] == sorted(expected)


def test_schedule_into_the_past():
    e = idle_engine()
    e.schedule(4, "QueueRetry")
    e.step()
    with pytest.raises(TimeTravel):
        e.schedule(3, "QueueRetry")


def test_unknown_event_kind():
    with pytest.raises(ValueError):
        idle_engine().schedule(1, "Reboot")


def test_empty_scenario():
    e = idle_engine(horizon=0)
    result = e.run()
    assert events(result.log) == []
    assert e.clock == 0
    assert result.log.startswith("# scenario=")


def test_horizon_stops_dispatch():
    e = idle_engine(horizon=10)
    e.schedule(10, "QueueRetry")
    e.schedule(11, "QueueRetry")
    e.run()
    assert [t for t, *_ in events(e.log_text())] == [10]


def test_case3_allocates_and_expires():
    log = run_scenario(load_scenario("case3")).log
    (t0, _, k0, p0), (t1, _, k1, p1) = events(log)
    assert (t0, k0, p0["outcome"], p0["vm"]) == (0, "RequestArrival", "Allocated", 2)
    assert (t1, k1, p1["vm"]) == (720, "LeaseExpiry", 2)


def test_reallocation_merges_then_serves():
    evs = events(run_scenario(load_scenario("reallocation")).log)
    kinds = [k for _, _, k, _ in evs]
    assert kinds == ["RequestArrival", "MoveComplete", "QueueRetry", "LeaseExpiry"]
    assert evs[1][0] == Fraction(3, 2)
    assert evs[2][3]["allocated"] == [[1, evs[1][3]["merged"]]]


@pytest.mark.parametrize("seed", range(20))
def test_runs_are_byte_identical(seed):
    doc_rng = random.Random(seed)
    a = run_scenario(random_scenario(doc_rng)).log
    b = run_scenario(random_scenario(random.Random(seed))).log
    assert a == b


def test_invariants_hold_on_random_runs():
    rng = random.Random(77)
    for _ in range(100):
        result = Engine(random_scenario(rng), check_invariants=True).run()
        assert result.engine.violations == []


def test_every_lease_is_released():
    rng = random.Random(5)
    for _ in range(100):
        scenario = random_scenario(rng)
        engine = Engine(scenario)
        evs = events(engine.run().log)
        leases = {r.request_id: r.lease_duration for r in scenario.requests}
        expiries = {(t, p["vm"]) for t, _, k, p in evs if k == "LeaseExpiry"}
        starts = []
        for t, _, k, p in evs:
            if k == "RequestArrival" and p.get("outcome") == "Allocated":
                starts.append((t, p["request"], p["vm"]))
            elif k == "RequestArrival" and "accepted" in p:
                starts.append((t, p["request"], p["accepted"]))
            elif k == "QueueRetry":
                starts.extend((t, r, v) for r, v in p["allocated"])
        for t, request_id, vm_id in starts:
            end = t + leases[request_id]
            if end <= engine.horizon:
                assert (end, vm_id) in expiries


def test_queue_drains_or_stays_consistent():
    rng = random.Random(6)
    for _ in range(100):
        engine = Engine(random_scenario(rng))
        engine.run()
        for request_id in engine.pending:
            assert request_id in engine.requests
        assert len(set(engine.pending)) == len(engine.pending)
