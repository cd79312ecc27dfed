"""Deterministic discrete-event simulation engine.

Events dispatch in ``(time, seq)`` order where ``seq`` is the order of the
``schedule`` calls. Every dispatched event becomes one log line::

    time<TAB>seq<TAB>kind<TAB>payload-json

The log starts with a ``#`` header naming the scenario digest, policy and
seed. Payloads are JSON with sorted keys, so equal runs give equal bytes.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .core import (
    Allocated,
    AllocatedOutcome,
    Cluster,
    OnSuggestion,
    RejectedOutcome,
    SuggestedOutcome,
    VmRequest,
    format_quantity,
    to_fraction,
)
from .errors import (
    CloudAllocError,
    DuplicateRequest,
    MigrationInfeasible,
    ReservationInfeasible,
    ReservationViolation,
    TimeTravel,
)
from .migration import MigrationController, ResourceMonitor, decide_migration, host_utilization
from .policies import PolicyKind, PolicyState, allocate, allocate_vm, deallocate, try_allocate

log = logging.getLogger(__name__)

EVENT_KINDS = ("RequestArrival", "LeaseExpiry", "MoveComplete", "ReservationTimeout", "QueueRetry")


@dataclass(order=True)
class Event:
    time: Fraction
    seq: int
    kind: str = field(compare=False)
    data: dict = field(compare=False, default_factory=dict)
    cancelled: bool = field(compare=False, default=False)


def _json(payload) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def _score(score: Fraction) -> float:
    return round(float(score), 6)


class Engine:
    """One simulation run over a :class:`~cloudalloc.scenario.Scenario`.

    Pass ``check_invariants=True`` to verify capacity conservation and pool
    purity after every event; violations are collected in
    :attr:`violations` rather than raised.
    """

    def __init__(self, scenario, *, check_invariants: bool = False):
        self.scenario = scenario
        self.clock = Fraction(0)
        self.horizon = scenario.effective_horizon()
        self.queue: list[Event] = []
        self._seq = 0
        self.log_lines: list[str] = []
        self.pending: list[int] = []  # FIFO of queued request ids
        self.requests: dict[int, VmRequest] = {}
        self.check_invariants = check_invariants
        self.violations: list[str] = []
        self._plan_ids = 0
        self._last_util: dict[int, tuple] = {}
        self._timeouts: dict[int, Event] = {}

        self.cluster = scenario.build_cluster()
        pol = scenario.policy
        self.policy_state = PolicyState(
            kind=pol.kind, rr_mode=pol.rr_mode, rng_seed=scenario.seed, k=pol.k, match=pol.match
        )
        self.policy_state.sync(self.cluster)
        mig = scenario.migration
        self.migration = MigrationController(
            self.cluster,
            reservation=mig.reservation,
            reserve_fraction=mig.reserve_fraction,
            base_cost=mig.base_cost,
            per_mib_cost=mig.per_mib_cost,
            reservation_timeout=mig.reservation_timeout,
        )
        self.monitor = ResourceMonitor(window=mig.window, threshold=mig.stability_threshold)
        self.monitor.sample(self.cluster, self.clock)

        self.log_lines.append(
            f"# scenario={scenario.digest()} policy={pol.kind.value} seed={scenario.seed}"
        )
        for vm in self.cluster.real_vms():
            if isinstance(vm.state, Allocated):
                self.schedule(vm.state.lease_end, "LeaseExpiry", {"vm": vm.vm_id})
        for req in scenario.requests:
            self.submit(req)

    # scheduling

    def schedule(self, time, kind: str, data: Optional[dict] = None) -> Event:
        time = to_fraction(time)
        if time < self.clock:
            raise TimeTravel(f"cannot schedule {kind} at {time} < clock {self.clock}")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = Event(time, self._seq, kind, dict(data or {}))
        self._seq += 1
        heapq.heappush(self.queue, event)
        return event

    def submit(self, request: VmRequest) -> Event:
        """Register a request and schedule its arrival."""
        self.requests.setdefault(request.request_id, request)
        return self.schedule(request.arrival_time, "RequestArrival", {"request": request.request_id, "_req": request})

    # running

    def step(self) -> Optional[str]:
        """Dispatch one event; returns its log line, or ``None`` when done."""
        while self.queue and self.queue[0].cancelled:
            heapq.heappop(self.queue)
        if not self.queue or self.queue[0].time > self.horizon:
            return None
        event = heapq.heappop(self.queue)
        self.clock = event.time
        payload = self._dispatch(event)
        self.monitor.sample(self.cluster, self.clock)
        util = self._util_changes()
        if util:
            payload["util"] = util
        if self.check_invariants:
            self._check(event)
        line = f"{format_quantity(event.time)}\t{event.seq}\t{event.kind}\t{_json(payload)}"
        self.log_lines.append(line)
        return line

    def run(self) -> RunResult:
        while self.step() is not None:
            pass
        return RunResult(self, self.log_text())

    def run_until(self, time) -> list:
        """Dispatch every event at or before ``time``; returns the new log lines."""
        time = to_fraction(time)
        lines = []
        while self.queue and self.queue[0].time <= min(time, self.horizon):
            line = self.step()
            if line is not None:
                lines.append(line)
        return lines

    def log_text(self) -> str:
        return "\n".join(self.log_lines) + "\n"

    # handlers

    def _dispatch(self, event: Event) -> dict:
        handler = {
            "RequestArrival": self._on_arrival,
            "LeaseExpiry": self._on_lease_expiry,
            "MoveComplete": self._on_move_complete,
            "ReservationTimeout": self._on_reservation_timeout,
            "QueueRetry": self._on_queue_retry,
        }[event.kind]
        try:
            return handler(event)
        except ReservationViolation:
            raise
        except CloudAllocError as e:
            # recorded, not fatal
            log.debug("handler error at %s: %s", self.clock, e)
            return {**{k: v for k, v in event.data.items() if not k.startswith("_")},
                    "error": type(e).__name__, "message": str(e)}

    def _on_arrival(self, event: Event) -> dict:
        req: VmRequest = event.data["_req"]
        payload = {"request": req.request_id}
        try:
            outcome = allocate(self.cluster, req, self.policy_state, self.clock)
        except DuplicateRequest:
            payload.update(outcome="Rejected", reason="DuplicateRequest")
            return payload
        if isinstance(outcome, AllocatedOutcome):
            payload.update(outcome="Allocated", vm=outcome.vm_id)
            self._lease_started(outcome.vm_id)
            return payload

        waits = req.on_suggestion is OnSuggestion.STAY_QUEUED
        if isinstance(outcome, SuggestedOutcome):
            payload.update(
                outcome="Suggested",
                candidates=[[vm_id, _score(s)] for vm_id, s in outcome.candidates],
                decision=req.on_suggestion.value,
            )
            if req.on_suggestion is OnSuggestion.ACCEPT_BEST:
                vm_id = outcome.candidates[0][0]
                allocate_vm(self.cluster, vm_id, req, self.clock, self.policy_state)
                payload["accepted"] = vm_id
                self._lease_started(vm_id)
        elif isinstance(outcome, RejectedOutcome):
            if waits:
                payload.update(outcome="Queued")
            else:
                payload.update(outcome="Rejected", reason=outcome.reason)
        if waits:
            self.pending.append(req.request_id)
            if self.policy_state.kind is PolicyKind.MODIFIED_THROTTLED and self.scenario.migration.enabled:
                payload["migration"] = self._try_migration(req)
        return payload

    def _try_migration(self, req: VmRequest) -> dict:
        mig = self.scenario.migration
        unstable = self.monitor.unstable_hosts()
        self._plan_ids += 1
        plan = decide_migration(
            self.cluster,
            req.required,
            plan_id=self._plan_ids,
            strategy=mig.strategy,
            now=self.clock,
            monitor=self.monitor,
        )
        info = {"for": req.request_id}
        if unstable:
            info["unstable"] = unstable
        if plan is None:
            info["status"] = "none"
            return info
        info.update(plan=plan.plan_id, moves=[[m.vm_id, m.source, m.target] for m in plan.moves])
        try:
            active = self.migration.reserve(plan, self.clock)
        except (ReservationInfeasible, MigrationInfeasible) as e:
            info.update(status="infeasible", error=type(e).__name__)
            return info
        self.policy_state.sync(self.cluster)
        self.migration.execute_plan(self, plan)
        self._timeouts[plan.plan_id] = self.schedule(active.expires_at, "ReservationTimeout", {"plan": plan.plan_id})
        info["status"] = "started"
        return info

    def _lease_started(self, vm_id: int) -> None:
        self.schedule(self.cluster.vms[vm_id].state.lease_end, "LeaseExpiry", {"vm": vm_id})

    def _on_lease_expiry(self, event: Event) -> dict:
        vm_id = event.data["vm"]
        vm = self.cluster.vms[vm_id]
        request_id = vm.state.request_id if isinstance(vm.state, Allocated) else None
        deallocate(self.cluster, vm_id, self.policy_state)
        self._retry_soon()
        return {"vm": vm_id, "request": request_id}

    def _on_move_complete(self, event: Event) -> dict:
        plan_id, vm_id = event.data["plan"], event.data["vm"]
        if plan_id not in self.migration.active:
            return {"plan": plan_id, "vm": vm_id, "stale": True}
        result = self.migration.complete_move(plan_id, vm_id, scheduler=self)
        if plan_id not in self.migration.active:
            self._timeouts.pop(plan_id).cancelled = True
        self.policy_state.sync(self.cluster)
        self._retry_soon()
        return result

    def _on_reservation_timeout(self, event: Event) -> dict:
        plan_id = event.data["plan"]
        self._timeouts.pop(plan_id, None)
        expired = self.migration.expire(plan_id)
        if expired:
            self.policy_state.sync(self.cluster)
            self._retry_soon()
        return {"plan": plan_id, "expired": expired}

    def _on_queue_retry(self, event: Event) -> dict:
        allocated = []
        still = []
        for request_id in self.pending:
            req = self.requests[request_id]
            vm_id = try_allocate(self.cluster, req, self.policy_state, self.clock)
            if vm_id is None:
                still.append(request_id)
            else:
                allocated.append([request_id, vm_id])
                self._lease_started(vm_id)
        self.pending = still
        return {"allocated": allocated, "waiting": len(still)}

    def _retry_soon(self) -> None:
        if self.pending and not any(e.kind == "QueueRetry" and e.time == self.clock for e in self.queue):
            self.schedule(self.clock, "QueueRetry")

    # telemetry and checks

    def _util_changes(self) -> dict:
        changed = {}
        for host_id in sorted(self.cluster.hosts):
            u = host_utilization(self.cluster, host_id)
            if self._last_util.get(host_id) != u:
                self._last_util[host_id] = u
                changed[str(host_id)] = [round(x, 6) for x in u]
        return changed

    def _check(self, event: Event) -> None:
        for host_id in self.cluster.conservation_violations():
            self.violations.append(f"t={event.time} seq={event.seq}: host {host_id} over capacity")
        for vm_id, flag in self.policy_state.availability_index.items():
            vm = self.cluster.vms.get(vm_id)
            if vm is not None and flag and not vm.is_free:
                self.violations.append(f"t={event.time}: vm {vm_id} flagged available while {vm.state.kind}")


@dataclass
class RunResult:
    engine: Engine
    log: str

    @property
    def cluster(self) -> Cluster:
        return self.engine.cluster


def run_scenario(scenario, **kwargs) -> RunResult:
    return Engine(scenario, **kwargs).run()
