"""VM selection policies.

Four classic load balancers (round robin, equally spread current execution,
active monitoring, throttled) plus the modified throttled allocator, which
allocates the tightest-fitting free VM and otherwise answers with a ranked
list of related VMs.

Selectors take an *eligible pool*, the ascending-id list of free VMs that
match the demand, and return one of its members or ``None``.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .core import (
    Allocated,
    AllocatedOutcome,
    AllocationOutcome,
    Cluster,
    FREE,
    RejectedOutcome,
    SuggestedOutcome,
    VmRequest,
    VmSpec,
    spec_matches_exactly,
    spec_satisfies,
    to_fraction,
)
from .errors import DuplicateRequest, InvalidDeallocation, UnknownPolicy

DEFAULT_SUGGESTIONS = 3


class PolicyKind(str, enum.Enum):
    ROUND_ROBIN = "RoundRobin"
    EQUAL_SPREAD = "EqualSpread"
    ACTIVE_MONITORING = "ActiveMonitoring"
    THROTTLED = "Throttled"
    MODIFIED_THROTTLED = "ModifiedThrottled"

    @classmethod
    def parse(cls, name: str) -> PolicyKind:
        key = str(name).replace("_", "").replace("-", "").lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise UnknownPolicy(f"unknown policy {name!r}; expected one of {[k.value for k in cls]}")


class MatchMode(str, enum.Enum):
    DOMINATE = "dominate"  # offer >= demand on every component
    EXACT = "exact"  # identical configuration, zero cpu_ghz demand is a wildcard


@dataclass
class PolicyState:
    """Mutable per-run state of the selected policy."""

    kind: PolicyKind = PolicyKind.MODIFIED_THROTTLED
    rr_mode: str = "cyclic"
    rng_seed: int = 0
    k: int = DEFAULT_SUGGESTIONS
    match: MatchMode = MatchMode.DOMINATE
    rr_cursor: int = 0
    availability_index: dict = field(default_factory=dict)
    seen_requests: set = field(default_factory=set)

    def __post_init__(self):
        if self.rr_mode not in ("cyclic", "random"):
            raise ValueError(f"rr_mode must be 'cyclic' or 'random', got {self.rr_mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        self.match = MatchMode(self.match)
        self.rng = random.Random(self.rng_seed)

    def sync(self, cluster: Cluster) -> None:
        """Rebuild the availability index from VM states."""
        self.availability_index = {
            vm_id: vm.is_free for vm_id, vm in cluster.vms.items() if not vm.is_placeholder
        }


def matches(offer: VmSpec, demand: VmSpec, mode: MatchMode = MatchMode.DOMINATE) -> bool:
    if mode is MatchMode.EXACT:
        return spec_matches_exactly(offer, demand)
    return spec_satisfies(offer, demand)


def eligible_pool(cluster: Cluster, demand: VmSpec, match: MatchMode = MatchMode.DOMINATE) -> list:
    """Ids of free VMs matching ``demand``, ascending."""
    return [vm.vm_id for vm in cluster.free_vms() if matches(vm.spec, demand, match)]


def round_robin_select(pool: Sequence[int], state: PolicyState) -> Optional[int]:
    if not pool:
        return None
    if state.rr_mode == "random":
        return pool[state.rng.randrange(len(pool))]
    choice = pool[state.rr_cursor % len(pool)]
    state.rr_cursor += 1
    return choice


def equal_spread_select(pool: Sequence[int], cluster: Cluster) -> Optional[int]:
    """Least ``pending_load``, lowest id on ties."""
    if not pool:
        return None
    return min(pool, key=lambda v: (cluster.vms[v].pending_load, v))


def active_monitoring_select(pool: Sequence[int], cluster: Cluster) -> Optional[int]:
    """Fewest active requests; the first identified wins a tie."""
    best = None
    best_count = None
    for vm_id in pool:
        count = cluster.vms[vm_id].active_request_count
        if best is None or count < best_count:
            best, best_count = vm_id, count
    return best


def throttled_select(pool: Sequence[int], state: PolicyState) -> Optional[int]:
    """First pool member flagged available. The flag drops until de-allocation."""
    for vm_id in pool:
        if state.availability_index.get(vm_id, False):
            state.availability_index[vm_id] = False
            return vm_id
    return None


def suggestion_score(offer: VmSpec, demand: VmSpec) -> Fraction:
    """Normalised L1 distance between two specs."""
    return sum(
        (Fraction(abs(o - d)) / max(d, 1) for o, d in zip(offer.components(), demand.components())),
        Fraction(0),
    )


def suggest_vms(cluster: Cluster, demand: VmSpec, k: int = DEFAULT_SUGGESTIONS) -> list:
    """Up to ``k`` free VMs as ``(vm_id, score)``, dominating offers first."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(
        (not spec_satisfies(vm.spec, demand), suggestion_score(vm.spec, demand), vm.vm_id)
        for vm in cluster.free_vms()
    )
    return [(vm_id, score) for _, score, vm_id in ranked[:k]]


def allocate_vm(cluster: Cluster, vm_id: int, request: VmRequest, now: Fraction, state: PolicyState) -> None:
    """Bind ``vm_id`` to ``request`` for its lease."""
    vm = cluster.vms[vm_id]
    if not vm.is_free:
        raise ValueError(f"vm {vm_id} is {vm.state.kind}, not Free")
    vm.state = Allocated(request.request_id, to_fraction(now) + request.lease_duration)
    vm.active_request_count += 1
    vm.pending_load += request.lease_duration
    state.availability_index[vm_id] = False


def deallocate(cluster: Cluster, vm_id: int, state: PolicyState) -> None:
    vm = cluster.vms.get(vm_id)
    if vm is None or not isinstance(vm.state, Allocated):
        current = "missing" if vm is None else vm.state.kind
        raise InvalidDeallocation(f"vm {vm_id} is {current}, not Allocated")
    vm.state = FREE
    vm.active_request_count = 0
    vm.pending_load = Fraction(0)
    state.availability_index[vm_id] = True


def _index_pool(pool, state):
    # pool members are Free, so an unseen id is available
    for vm_id in pool:
        state.availability_index.setdefault(vm_id, True)


def _tightest_first(pool, cluster, demand):
    return sorted(pool, key=lambda v: (suggestion_score(cluster.vms[v].spec, demand), v))


def select(pool: Sequence[int], cluster: Cluster, state: PolicyState, demand: VmSpec) -> Optional[int]:
    """Dispatch to the configured selector."""
    kind = state.kind
    if kind is PolicyKind.ROUND_ROBIN:
        return round_robin_select(pool, state)
    if kind is PolicyKind.EQUAL_SPREAD:
        return equal_spread_select(pool, cluster)
    if kind is PolicyKind.ACTIVE_MONITORING:
        return active_monitoring_select(pool, cluster)
    _index_pool(pool, state)
    if kind is PolicyKind.THROTTLED:
        return throttled_select(pool, state)
    return throttled_select(_tightest_first(pool, cluster, demand), state)


def try_allocate(cluster: Cluster, request: VmRequest, state: PolicyState, now) -> Optional[int]:
    """Allocate a matching VM if one is free; used for arrivals and queue retries."""
    pool = eligible_pool(cluster, request.required, state.match)
    vm_id = select(pool, cluster, state, request.required)
    if vm_id is None:
        return None
    allocate_vm(cluster, vm_id, request, now, state)
    return vm_id


def modified_throttled_allocate(cluster: Cluster, request: VmRequest, state: PolicyState, now=None) -> AllocationOutcome:
    """Allocate the tightest free fit, else suggest related free VMs.

    Returns ``Rejected("NoCapacity")`` only when no VM in the cluster is free.
    """
    _register(request, state)
    if now is None:
        now = request.arrival_time
    pool = eligible_pool(cluster, request.required, state.match)
    if pool:
        _index_pool(pool, state)
        vm_id = throttled_select(_tightest_first(pool, cluster, request.required), state)
        allocate_vm(cluster, vm_id, request, now, state)
        return AllocatedOutcome(vm_id)
    suggestions = suggest_vms(cluster, request.required, state.k)
    if suggestions:
        return SuggestedOutcome(tuple(suggestions))
    return RejectedOutcome("NoCapacity")


def allocate(cluster: Cluster, request: VmRequest, state: PolicyState, now=None) -> AllocationOutcome:
    """Handle a fresh request with whichever policy ``state`` selects.

    The four classic balancers never suggest: without a matching VM they
    reject with ``NoMatch`` (or ``NoCapacity`` when nothing is free at all).
    """
    if state.kind is PolicyKind.MODIFIED_THROTTLED:
        return modified_throttled_allocate(cluster, request, state, now)
    _register(request, state)
    if now is None:
        now = request.arrival_time
    vm_id = try_allocate(cluster, request, state, now)
    if vm_id is not None:
        return AllocatedOutcome(vm_id)
    return RejectedOutcome("NoMatch" if cluster.free_vms() else "NoCapacity")


def _register(request: VmRequest, state: PolicyState) -> None:
    if request.request_id in state.seen_requests:
        raise DuplicateRequest(f"request {request.request_id} already handled")
    state.seen_requests.add(request.request_id)
