"""Live migration with resource reservation.

The pieces mirror a classic live-migration framework:

* :func:`decide_migration` plans which free VMs to co-locate (and merge) so
  that an unmet demand becomes satisfiable,
* :func:`select_target` picks the destination host,
* :func:`reserve_source` / :func:`reserve_target` hold capacity on both ends,
* :class:`MigrationController` executes plans under a strategy and completes
  moves,
* :class:`ResourceMonitor` keeps utilisation windows and flags unstable hosts
  so that plans never touch them.
"""

from __future__ import annotations

import enum
import statistics
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .core import (
    Allocated,
    Cluster,
    FREE,
    Migrating,
    Placeholder,
    VmSpec,
    ZERO_SPEC,
    spec_add,
    spec_satisfies,
    spec_sum,
    to_fraction,
)
from .errors import (
    CapacityExceeded,
    InsufficientHistory,
    InvalidPlan,
    MigrationInfeasible,
    NoFeasibleTarget,
    ReservationInfeasible,
    ReservationViolation,
)

DEFAULT_RESERVE_FRACTION = Fraction(1, 10)
DEFAULT_BASE_COST = Fraction(1)
DEFAULT_PER_MIB_COST = Fraction(1, 1024)
DEFAULT_RESERVATION_TIMEOUT = Fraction(100)
DEFAULT_STABILITY_THRESHOLD = 0.5
DEFAULT_WINDOW = 8


class MigrationStrategy(str, enum.Enum):
    SEQUENTIAL = "Sequential"
    PARALLEL = "Parallel"
    WORKLOAD_AWARE = "WorkloadAware"

    @classmethod
    def parse(cls, name) -> MigrationStrategy:
        key = str(name).replace("_", "").replace("-", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown migration strategy {name!r}")


@dataclass(frozen=True)
class Move:
    vm_id: int
    source: int
    target: int


@dataclass(frozen=True)
class Merge:
    vm_ids: tuple
    spec: VmSpec


@dataclass
class MigrationPlan:
    plan_id: int
    moves: tuple
    merge: Optional[Merge] = None
    strategy: MigrationStrategy = MigrationStrategy.SEQUENTIAL
    created_at: Fraction = Fraction(0)

    def __post_init__(self):
        self.moves = tuple(self.moves)
        ids = [m.vm_id for m in self.moves]
        if len(ids) != len(set(ids)):
            raise InvalidPlan(f"plan {self.plan_id}: a VM appears twice in moves")
        for m in self.moves:
            if m.source == m.target:
                raise InvalidPlan(f"plan {self.plan_id}: vm {m.vm_id} moves onto its own host")

    def hosts(self) -> set:
        touched = {m.source for m in self.moves} | {m.target for m in self.moves}
        return touched

    def target(self) -> Optional[int]:
        return self.moves[0].target if self.moves else None


@dataclass
class ReservationRecord:
    plan_id: int
    vm_id: int
    source_host: int
    source_held: Optional[VmSpec]
    target_placeholder_vm: Optional[int]
    expires_at: Fraction


# Resource monitor


@dataclass
class UtilizationWindow:
    host_id: int
    size: int = DEFAULT_WINDOW
    samples: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("window size must be >= 2")
        self.samples = deque(self.samples, maxlen=self.size)

    def add(self, time, utilization: Sequence[float]) -> None:
        time = to_fraction(time)
        if self.samples and self.samples[-1][0] > time:
            raise ValueError("samples must be time-ordered")
        if self.samples and self.samples[-1][0] == time:
            self.samples.pop()
        self.samples.append((time, tuple(utilization)))


def coefficient_of_variation(values: Sequence[float]) -> float:
    """Population std / mean; a flat series (including all zeros) gives 0."""
    mean = statistics.fmean(values)
    if mean == 0:
        return 0.0
    return statistics.pstdev(values) / mean


def stability_check(window: UtilizationWindow, threshold: float) -> bool:
    """True when every resource's utilisation CV stays within ``threshold``."""
    if len(window.samples) < 2:
        raise InsufficientHistory(f"host {window.host_id}: {len(window.samples)} sample(s)")
    per_resource = zip(*(u for _, u in window.samples))
    return all(coefficient_of_variation(series) <= threshold for series in per_resource)


def host_utilization(cluster: Cluster, host_id: int) -> tuple:
    """Busy fraction per resource: non-free VMs plus source holds over capacity."""
    host = cluster.hosts[host_id]
    busy = spec_sum(vm.spec for vm in cluster.vms_on(host_id) if not vm.is_free)
    busy = spec_add(busy, host.reserved())
    out = []
    for used, cap in zip(busy.components(), host.capacity.components()):
        out.append(0.0 if cap == 0 else min(1.0, float(Fraction(used) / cap)))
    return tuple(out)


class ResourceMonitor:
    """Utilisation windows for every host."""

    def __init__(self, window: int = DEFAULT_WINDOW, threshold: float = DEFAULT_STABILITY_THRESHOLD):
        self.window = window
        self.threshold = threshold
        self.windows: dict[int, UtilizationWindow] = {}

    def sample(self, cluster: Cluster, now) -> None:
        for host_id in sorted(cluster.hosts):
            w = self.windows.get(host_id)
            if w is None:
                w = self.windows[host_id] = UtilizationWindow(host_id, self.window)
            w.add(now, host_utilization(cluster, host_id))

    def is_stable(self, host_id: int, threshold: Optional[float] = None) -> bool:
        # too little history is no evidence of thrashing
        w = self.windows.get(host_id)
        if w is None or len(w.samples) < 2:
            return True
        return stability_check(w, self.threshold if threshold is None else threshold)

    def unstable_hosts(self, threshold: Optional[float] = None) -> list:
        return [h for h in sorted(self.windows) if not self.is_stable(h, threshold)]


# Decision maker and target choice


def headroom_score(cluster: Cluster, host_id: int, need: VmSpec):
    """Smallest ratio of free headroom to need over the needed resources."""
    free = cluster.headroom(host_id).components()
    ratios = [Fraction(f) / n for f, n in zip(free, need.components()) if n > 0]
    return min(ratios) if ratios else float("inf")


def select_target(candidates: Sequence[int], plan_need: VmSpec, cluster: Cluster) -> int:
    if not candidates:
        raise NoFeasibleTarget("empty candidate list")
    feasible = [h for h in candidates if spec_satisfies(cluster.headroom(h), plan_need)]
    if not feasible:
        raise NoFeasibleTarget(f"no candidate in {sorted(candidates)} has room for {plan_need}")
    return max(sorted(feasible), key=lambda h: (headroom_score(cluster, h, plan_need), -h))


def _relative_size(spec: VmSpec, demand: VmSpec) -> Fraction:
    return sum((Fraction(c) / max(d, 1) for c, d in zip(spec.components(), demand.components())), Fraction(0))


def decide_migration(
    cluster: Cluster,
    unmet_demand: VmSpec,
    *,
    plan_id: int = 0,
    strategy: MigrationStrategy = MigrationStrategy.SEQUENTIAL,
    now=0,
    monitor: Optional[ResourceMonitor] = None,
    stability_threshold: Optional[float] = None,
) -> Optional[MigrationPlan]:
    """Plan a co-location of free VMs whose merged spec meets ``unmet_demand``.

    For every stable candidate target the greedy takes the target's own free
    VMs, then relocates free VMs from other stable hosts, largest first,
    skipping any that would not fit. The target needing the fewest moves
    wins; ties go to the roomiest target, then the lowest host id. Returns
    ``None`` when a single free VM already satisfies the demand or when no
    target works.
    """
    free = cluster.free_vms()
    if any(spec_satisfies(vm.spec, unmet_demand) for vm in free):
        return None
    if not spec_satisfies(spec_sum(vm.spec for vm in free), unmet_demand):
        return None

    def stable(h):
        return monitor is None or monitor.is_stable(h, stability_threshold)

    free = [vm for vm in free if stable(vm.host_id)]
    free.sort(key=lambda vm: (-_relative_size(vm.spec, unmet_demand), vm.vm_id))

    options = []
    for target in sorted(cluster.hosts):
        if not stable(target):
            continue
        acc, chosen, moves, incoming = ZERO_SPEC, [], [], ZERO_SPEC
        for vm in free:
            if vm.host_id == target and not spec_satisfies(acc, unmet_demand):
                acc = spec_add(acc, vm.spec)
                chosen.append(vm.vm_id)
        headroom = cluster.headroom(target)
        for vm in free:
            if spec_satisfies(acc, unmet_demand):
                break
            if vm.host_id == target:
                continue
            if not spec_satisfies(headroom, spec_add(incoming, vm.spec)):
                continue
            incoming = spec_add(incoming, vm.spec)
            acc = spec_add(acc, vm.spec)
            chosen.append(vm.vm_id)
            moves.append(Move(vm.vm_id, vm.host_id, target))
        if spec_satisfies(acc, unmet_demand) and len(chosen) >= 2:
            options.append((len(moves), target, chosen, moves, incoming))
    if not options:
        return None

    fewest = min(o[0] for o in options)
    best = max(
        (o for o in options if o[0] == fewest),
        key=lambda o: (headroom_score(cluster, o[1], o[4]), -o[1]),
    )
    _, _, chosen, moves, _ = best
    merged = spec_sum(cluster.vms[v].spec for v in chosen)
    return MigrationPlan(
        plan_id=plan_id,
        moves=tuple(moves),
        merge=Merge(tuple(sorted(chosen)), merged),
        strategy=MigrationStrategy(strategy),
        created_at=to_fraction(now),
    )


# Reservation


def reserve_source(cluster: Cluster, host_id: int, vm_id: int, plan_id: int,
                   fraction=DEFAULT_RESERVE_FRACTION) -> VmSpec:
    """Hold ``fraction`` of the VM's memory and GHz on its source host.

    The VM enters ``Migrating``. Returns the held spec.
    """
    vm = cluster.vms.get(vm_id)
    if vm is None or vm.host_id != host_id:
        raise InvalidPlan(f"vm {vm_id} is not hosted on {host_id}")
    if not (vm.is_free or isinstance(vm.state, Allocated)):
        raise InvalidPlan(f"vm {vm_id} is {vm.state.kind}; only Free or Allocated VMs migrate")
    held = vm.spec.scaled_down(fraction)
    try:
        cluster.add_source_reservation(host_id, plan_id, held)
    except CapacityExceeded as e:
        raise ReservationInfeasible(str(e)) from None
    vm.state = Migrating(plan_id)
    return held


def reserve_target(cluster: Cluster, host_id: int, incoming: VmSpec, plan_id: int) -> int:
    """Create a placeholder VM on ``host_id`` occupying ``incoming``."""
    if host_id not in cluster.hosts:
        raise InvalidPlan(f"unknown host {host_id}")
    try:
        return cluster.add_vm(incoming, host_id, Placeholder(plan_id)).vm_id
    except CapacityExceeded as e:
        raise MigrationInfeasible(str(e)) from None


# Execution


def move_duration(spec: VmSpec, base_cost=DEFAULT_BASE_COST, per_mib_cost=DEFAULT_PER_MIB_COST) -> Fraction:
    return to_fraction(base_cost) + spec.ram_mb * to_fraction(per_mib_cost)


def execution_order(plan: MigrationPlan, cluster: Cluster) -> list:
    if plan.strategy is MigrationStrategy.WORKLOAD_AWARE:
        return sorted(plan.moves, key=lambda m: (cluster.vms[m.vm_id].spec.ram_mb, m.vm_id))
    return list(plan.moves)


@dataclass
class _ActivePlan:
    plan: MigrationPlan
    records: dict  # vm_id -> ReservationRecord
    prior: dict  # vm_id -> state before the plan locked it
    pending: deque  # moves not yet started (serial strategies)
    remaining: set  # vm_ids of moves not yet completed
    expires_at: Fraction = Fraction(0)


class MigrationController:
    """Reserves, executes and completes migration plans on one cluster.

    ``scheduler`` is anything with a ``clock`` attribute and a
    ``schedule(time, kind, data)`` method, normally the simulation engine.
    """

    def __init__(
        self,
        cluster: Cluster,
        *,
        reservation: bool = True,
        reserve_fraction=DEFAULT_RESERVE_FRACTION,
        base_cost=DEFAULT_BASE_COST,
        per_mib_cost=DEFAULT_PER_MIB_COST,
        reservation_timeout=DEFAULT_RESERVATION_TIMEOUT,
    ):
        self.cluster = cluster
        self.reservation = reservation
        self.reserve_fraction = to_fraction(reserve_fraction)
        self.base_cost = to_fraction(base_cost)
        self.per_mib_cost = to_fraction(per_mib_cost)
        self.reservation_timeout = to_fraction(reservation_timeout)
        self.active: dict[int, _ActivePlan] = {}

    def duration(self, vm_id: int) -> Fraction:
        return move_duration(self.cluster.vms[vm_id].spec, self.base_cost, self.per_mib_cost)

    def makespan(self, plan: MigrationPlan) -> Fraction:
        durations = [self.duration(m.vm_id) for m in plan.moves]
        if not durations:
            return Fraction(0)
        if plan.strategy is MigrationStrategy.PARALLEL:
            return max(durations)
        return sum(durations, Fraction(0))

    def reserve(self, plan: MigrationPlan, now=0) -> _ActivePlan:
        """Lock the plan's VMs and take its reservations, all or nothing."""
        cluster = self.cluster
        for m in plan.moves:
            vm = cluster.vms.get(m.vm_id)
            if vm is None or vm.host_id != m.source or m.target not in cluster.hosts:
                raise InvalidPlan(f"plan {plan.plan_id}: bad move {m}")
        expires_at = to_fraction(now) + self.makespan(plan) + self.reservation_timeout
        active = _ActivePlan(plan, {}, {}, deque(), {m.vm_id for m in plan.moves}, expires_at)
        try:
            for m in plan.moves:
                vm = cluster.vms[m.vm_id]
                active.prior[m.vm_id] = vm.state
                held = placeholder = None
                if self.reservation:
                    held = reserve_source(cluster, m.source, m.vm_id, plan.plan_id, self.reserve_fraction)
                else:
                    vm.state = Migrating(plan.plan_id)
                active.records[m.vm_id] = ReservationRecord(plan.plan_id, m.vm_id, m.source, held, None, expires_at)
                if self.reservation:
                    placeholder = reserve_target(cluster, m.target, vm.spec, plan.plan_id)
                    active.records[m.vm_id].target_placeholder_vm = placeholder
            if plan.merge is not None:
                for vm_id in plan.merge.vm_ids:
                    vm = cluster.vms.get(vm_id)
                    if vm is None:
                        raise InvalidPlan(f"plan {plan.plan_id}: unknown merge vm {vm_id}")
                    if vm_id not in active.prior:
                        if not vm.is_free:
                            raise InvalidPlan(f"plan {plan.plan_id}: merge vm {vm_id} is not Free")
                        active.prior[vm_id] = vm.state
                        vm.state = Migrating(plan.plan_id)
        except Exception:
            self._rollback(active)
            raise
        self.active[plan.plan_id] = active
        return active

    def _rollback(self, active: _ActivePlan) -> None:
        cluster = self.cluster
        for vm_id, rec in active.records.items():
            if vm_id not in active.remaining:
                continue
            if rec.source_held is not None:
                cluster.release_source_reservation(rec.source_host, rec.plan_id, rec.source_held)
            if rec.target_placeholder_vm is not None and rec.target_placeholder_vm in cluster.vms:
                cluster.remove_vm(rec.target_placeholder_vm)
        for vm_id, state in active.prior.items():
            if vm_id in cluster.vms:
                cluster.vms[vm_id].state = state

    def execute_plan(self, scheduler, plan: MigrationPlan) -> list:
        """Schedule the plan's completion events; serial strategies chain lazily."""
        active = self.active.get(plan.plan_id)
        if active is None:
            raise InvalidPlan(f"plan {plan.plan_id} has no reservations")
        now = scheduler.clock
        if not plan.moves:
            return [scheduler.schedule(now, "MoveComplete", {"plan": plan.plan_id, "vm": None})]
        order = execution_order(plan, self.cluster)
        if plan.strategy is MigrationStrategy.PARALLEL:
            return [
                scheduler.schedule(now + self.duration(m.vm_id), "MoveComplete", {"plan": plan.plan_id, "vm": m.vm_id})
                for m in order
            ]
        active.pending.extend(order)
        return [self._start_next(scheduler, active)]

    def _start_next(self, scheduler, active: _ActivePlan):
        m = active.pending.popleft()
        return scheduler.schedule(
            scheduler.clock + self.duration(m.vm_id), "MoveComplete", {"plan": active.plan.plan_id, "vm": m.vm_id}
        )

    def complete_move(self, plan_id: int, vm_id: Optional[int], scheduler=None) -> dict:
        """Land one VM on its target.

        Returns a summary dict. ``{"failed": True}`` means the move could not
        land (possible only with reservation disabled) and the plan was
        aborted. With reservation on, a missing placeholder is a logic error
        and raises :class:`ReservationViolation`.
        """
        cluster = self.cluster
        active = self.active.get(plan_id)
        if active is None:
            raise ReservationViolation(f"plan {plan_id} is not active")
        plan = active.plan
        result = {"plan": plan_id, "vm": vm_id}
        if vm_id is not None:
            if vm_id not in active.remaining:
                raise ReservationViolation(f"plan {plan_id}: vm {vm_id} is not an outstanding move")
            move = next(m for m in plan.moves if m.vm_id == vm_id)
            rec = active.records[vm_id]
            vm = cluster.vms[vm_id]
            if self.reservation:
                ph = rec.target_placeholder_vm
                if ph is None or ph not in cluster.vms or not cluster.vms[ph].is_placeholder:
                    raise ReservationViolation(f"plan {plan_id}: placeholder for vm {vm_id} missing")
                cluster.remove_vm(ph)
                rec.target_placeholder_vm = None
                cluster.release_source_reservation(rec.source_host, plan_id, rec.source_held)
                rec.source_held = None
                cluster.unplace(vm)
                cluster.place(vm, move.target)
            else:
                if not spec_satisfies(cluster.headroom(move.target), vm.spec):
                    self.abort(plan_id)
                    result["failed"] = True
                    return result
                cluster.unplace(vm)
                cluster.place(vm, move.target)
            active.remaining.discard(vm_id)
            if plan.merge is None or vm_id not in plan.merge.vm_ids:
                vm.state = active.prior.pop(vm_id)
            if active.pending and scheduler is not None:
                self._start_next(scheduler, active)
        if not active.remaining:
            if plan.merge is not None:
                result["merged"] = self._merge(plan)
            del self.active[plan_id]
            result["done"] = True
        return result

    def _merge(self, plan: MigrationPlan) -> int:
        cluster = self.cluster
        target = plan.target()
        if target is None:
            target = cluster.vms[plan.merge.vm_ids[0]].host_id
        parts = [cluster.remove_vm(v) for v in plan.merge.vm_ids]
        merged = spec_sum(vm.spec for vm in parts)
        if merged != plan.merge.spec:
            raise ReservationViolation(f"plan {plan.plan_id}: merged spec {merged} != {plan.merge.spec}")
        return cluster.add_vm(merged, target, FREE).vm_id

    def abort(self, plan_id: int) -> None:
        """Release everything still held by ``plan_id``; landed moves stay put."""
        active = self.active.pop(plan_id, None)
        if active is not None:
            self._rollback(active)

    def expire(self, plan_id: int) -> bool:
        """Timeout handler. True when the plan was still running and got cancelled."""
        if plan_id not in self.active:
            return False
        self.abort(plan_id)
        return True
