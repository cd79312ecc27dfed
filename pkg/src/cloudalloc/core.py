"""Domain model: resource specs, VMs, hosts, requests and allocation outcomes.

Quantities are exact. Counts and sizes are ints, processor speed and
simulation time are :class:`fractions.Fraction`, so capacity arithmetic never
drifts and runs stay reproducible bit for bit.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Union

from .errors import ArithmeticOverflow, CapacityExceeded

Number = Union[int, float, str, Fraction]

#: Largest value any spec component may take.
MAX_COMPONENT = 2**63 - 1

#: One tick is one hour, so a 60-day lease is 1440 ticks.
TICKS_PER_DAY = 24


def to_fraction(value: Number) -> Fraction:
    """Convert ``value`` exactly, reading floats through their shortest repr.

    ``to_fraction(0.1)`` is ``1/10`` rather than the binary expansion.
    Strings such as ``"1/1024"`` are accepted too.
    """
    if isinstance(value, bool):
        raise TypeError("booleans are not quantities")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite quantity {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a quantity")


def format_quantity(value: Fraction) -> str:
    """Canonical text for an exact quantity: ``3`` or ``3/2``."""
    return str(value)


@dataclass(frozen=True, order=True)
class VmSpec:
    """A resource quadruple: memory (MiB), vCPUs, aggregate GHz, disk (GiB)."""

    ram_mb: int = 0
    cpu_count: int = 0
    cpu_ghz: Fraction = Fraction(0)
    disk_gb: int = 0

    def __post_init__(self):
        for name in ("ram_mb", "cpu_count", "disk_gb"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError(f"{name} must be an int, got {value!r}")
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")
            if value > MAX_COMPONENT:
                raise ArithmeticOverflow(f"{name}={value} exceeds {MAX_COMPONENT}")
        ghz = to_fraction(self.cpu_ghz)
        if ghz < 0:
            raise ValueError(f"cpu_ghz must be >= 0, got {ghz}")
        if ghz > MAX_COMPONENT:
            raise ArithmeticOverflow(f"cpu_ghz={ghz} exceeds {MAX_COMPONENT}")
        object.__setattr__(self, "cpu_ghz", ghz)

    def components(self) -> tuple:
        return (self.ram_mb, self.cpu_count, self.cpu_ghz, self.disk_gb)

    def __add__(self, other: VmSpec) -> VmSpec:
        return spec_add(self, other)

    def __sub__(self, other: VmSpec) -> VmSpec:
        """Component-wise difference; raises ``ValueError`` if it goes negative."""
        return VmSpec(
            self.ram_mb - other.ram_mb,
            self.cpu_count - other.cpu_count,
            self.cpu_ghz - other.cpu_ghz,
            self.disk_gb - other.disk_gb,
        )

    def scaled_down(self, fraction: Number, fields=("ram_mb", "cpu_ghz")) -> VmSpec:
        """``fraction`` of the named components, integers truncated toward zero."""
        f = to_fraction(fraction)
        values = {}
        for name in ("ram_mb", "cpu_count", "cpu_ghz", "disk_gb"):
            if name not in fields:
                values[name] = 0
            elif name == "cpu_ghz":
                values[name] = self.cpu_ghz * f
            else:
                values[name] = math.floor(getattr(self, name) * f)
        return VmSpec(**values)

    def as_dict(self) -> dict:
        ghz = self.cpu_ghz
        return {
            "ram_mb": self.ram_mb,
            "cpu_count": self.cpu_count,
            "cpu_ghz": int(ghz) if ghz.denominator == 1 else float(ghz),
            "disk_gb": self.disk_gb,
        }

    def __str__(self):
        return f"{self.ram_mb}MB/{self.cpu_count}cpu/{float(self.cpu_ghz):g}GHz/{self.disk_gb}GB"


ZERO_SPEC = VmSpec()


def spec_add(a: VmSpec, b: VmSpec) -> VmSpec:
    """Component-wise sum. Raises :class:`ArithmeticOverflow` past ``MAX_COMPONENT``."""
    return VmSpec(
        a.ram_mb + b.ram_mb,
        a.cpu_count + b.cpu_count,
        a.cpu_ghz + b.cpu_ghz,
        a.disk_gb + b.disk_gb,
    )


def spec_sum(specs: Iterable[VmSpec]) -> VmSpec:
    total = ZERO_SPEC
    for s in specs:
        total = spec_add(total, s)
    return total


def spec_satisfies(offer: VmSpec, demand: VmSpec) -> bool:
    """True iff ``offer`` is at least ``demand`` on every component."""
    return all(o >= d for o, d in zip(offer.components(), demand.components()))


def spec_matches_exactly(offer: VmSpec, demand: VmSpec) -> bool:
    """Exact configuration match; a zero ``cpu_ghz`` demand means "don't care"."""
    return (
        offer.ram_mb == demand.ram_mb
        and offer.cpu_count == demand.cpu_count
        and offer.disk_gb == demand.disk_gb
        and (demand.cpu_ghz == 0 or offer.cpu_ghz == demand.cpu_ghz)
    )


# VM lifecycle states


@dataclass(frozen=True)
class Free:
    kind = "Free"


@dataclass(frozen=True)
class Allocated:
    request_id: Optional[int]
    lease_end: Fraction
    kind = "Allocated"


@dataclass(frozen=True)
class Migrating:
    plan_id: int
    kind = "Migrating"


@dataclass(frozen=True)
class Placeholder:
    plan_id: int
    kind = "Placeholder"


VmState = Union[Free, Allocated, Migrating, Placeholder]
FREE = Free()


@dataclass
class VmInstance:
    vm_id: int
    spec: VmSpec
    host_id: int
    state: VmState = FREE
    active_request_count: int = 0
    pending_load: Fraction = Fraction(0)

    @property
    def is_free(self) -> bool:
        return isinstance(self.state, Free)

    @property
    def is_placeholder(self) -> bool:
        return isinstance(self.state, Placeholder)


@dataclass
class PhysicalHost:
    host_id: int
    capacity: VmSpec
    source_reservations: list = field(default_factory=list)  # (plan_id, VmSpec)
    hosted: set = field(default_factory=set)
    provider: str = "local"

    def reserved(self) -> VmSpec:
        return spec_sum(spec for _, spec in self.source_reservations)


class OnSuggestion(str, enum.Enum):
    """What the requester does when offered suggestions instead of a VM."""

    ACCEPT_BEST = "AcceptBest"
    STAY_QUEUED = "StayQueued"
    ABANDON = "Abandon"


@dataclass(frozen=True)
class VmRequest:
    request_id: int
    arrival_time: Fraction
    required: VmSpec
    lease_duration: Fraction
    on_suggestion: OnSuggestion = OnSuggestion.ABANDON

    def __post_init__(self):
        object.__setattr__(self, "arrival_time", to_fraction(self.arrival_time))
        object.__setattr__(self, "lease_duration", to_fraction(self.lease_duration))
        object.__setattr__(self, "on_suggestion", OnSuggestion(self.on_suggestion))
        if self.lease_duration <= 0:
            raise ValueError(f"request {self.request_id}: lease_duration must be > 0")
        if self.arrival_time < 0:
            raise ValueError(f"request {self.request_id}: arrival_time must be >= 0")


# Allocation outcomes


@dataclass(frozen=True)
class AllocatedOutcome:
    vm_id: int
    kind = "Allocated"


@dataclass(frozen=True)
class SuggestedOutcome:
    candidates: tuple  # ((vm_id, score), ...) best first
    kind = "Suggested"


@dataclass(frozen=True)
class QueuedOutcome:
    kind = "Queued"


@dataclass(frozen=True)
class RejectedOutcome:
    reason: str
    kind = "Rejected"


AllocationOutcome = Union[AllocatedOutcome, SuggestedOutcome, QueuedOutcome, RejectedOutcome]


class Cluster:
    """Hosts and the VMs placed on them.

    Every mutation that adds resources to a host goes through
    :meth:`place` or :meth:`add_source_reservation`, both of which refuse to
    break capacity conservation.
    """

    def __init__(self):
        self.hosts: dict[int, PhysicalHost] = {}
        self.vms: dict[int, VmInstance] = {}
        self._next_vm_id = 1
        self._used_ids: set[int] = set()  # vm ids are never reused

    def add_host(self, host_id: int, capacity: VmSpec, provider: str = "local") -> PhysicalHost:
        if host_id in self.hosts:
            raise ValueError(f"duplicate host id {host_id}")
        host = PhysicalHost(host_id, capacity, provider=provider)
        self.hosts[host_id] = host
        return host

    def new_vm_id(self) -> int:
        while self._next_vm_id in self._used_ids:
            self._next_vm_id += 1
        return self._next_vm_id

    def add_vm(self, spec: VmSpec, host_id: int, state: VmState = FREE, vm_id: Optional[int] = None) -> VmInstance:
        if vm_id is None:
            vm_id = self.new_vm_id()
        elif vm_id in self._used_ids:
            raise ValueError(f"vm id {vm_id} already used")
        vm = VmInstance(vm_id, spec, host_id, state)
        if isinstance(state, Allocated):
            vm.active_request_count = 1
        self.place(vm, host_id)
        self._used_ids.add(vm_id)
        self._next_vm_id = max(self._next_vm_id, vm_id + 1)
        self.vms[vm_id] = vm
        return vm

    def place(self, vm: VmInstance, host_id: int) -> None:
        """Put ``vm`` on ``host_id``; raises :class:`CapacityExceeded` if it does not fit."""
        host = self.hosts[host_id]
        if not spec_satisfies(self.headroom(host_id), vm.spec):
            raise CapacityExceeded(f"vm {vm.vm_id} ({vm.spec}) does not fit on host {host_id}")
        host.hosted.add(vm.vm_id)
        vm.host_id = host_id

    def unplace(self, vm: VmInstance) -> None:
        self.hosts[vm.host_id].hosted.discard(vm.vm_id)

    def remove_vm(self, vm_id: int) -> VmInstance:
        vm = self.vms.pop(vm_id)
        self.unplace(vm)
        return vm

    def add_source_reservation(self, host_id: int, plan_id: int, spec: VmSpec) -> None:
        host = self.hosts[host_id]
        if not spec_satisfies(self.headroom(host_id), spec):
            raise CapacityExceeded(f"hold {spec} does not fit on host {host_id}")
        host.source_reservations.append((plan_id, spec))

    def release_source_reservation(self, host_id: int, plan_id: int, spec: VmSpec) -> None:
        self.hosts[host_id].source_reservations.remove((plan_id, spec))

    def used(self, host_id: int) -> VmSpec:
        host = self.hosts[host_id]
        return spec_add(spec_sum(self.vms[v].spec for v in host.hosted), host.reserved())

    def headroom(self, host_id: int) -> VmSpec:
        """Free capacity, clamped at zero per component."""
        cap = self.hosts[host_id].capacity.components()
        used = self.used(host_id).components()
        return VmSpec(*(max(c - u, 0) for c, u in zip(cap, used)))

    def conservation_violations(self) -> list:
        """Host ids where hosted + reserved exceeds capacity on some component."""
        return [
            h for h, host in sorted(self.hosts.items())
            if not spec_satisfies(host.capacity, self.used(h))
        ]

    def free_vms(self) -> list:
        return [vm for _, vm in sorted(self.vms.items()) if vm.is_free]

    def real_vms(self) -> list:
        return [vm for _, vm in sorted(self.vms.items()) if not vm.is_placeholder]

    def vms_on(self, host_id: int) -> list:
        return [self.vms[v] for v in sorted(self.hosts[host_id].hosted)]
