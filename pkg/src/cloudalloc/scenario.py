"""Scenario files (YAML) and report serialisation.

A scenario document looks like::

    name: case3
    seed: 0
    horizon: 2000
    hosts:
      - {id: 1, ram_mb: 8192, cpu_count: 16, cpu_ghz: 16, disk_gb: 16384}
    vms:
      - {id: 1, host: 1, ram_mb: 1024, cpu_count: 5, cpu_ghz: 5, disk_gb: 4096}
      - {id: 2, host: 1, ram_mb: 512, cpu_count: 1, disk_gb: 1024,
         state: allocated, lease_end: 1440}
    requests:
      - {id: 1, at: 0, ram_mb: 1024, cpu_count: 5, disk_gb: 4096, lease: 720,
         on_suggestion: Abandon}
    policy: {kind: ModifiedThrottled, k: 3, match: exact}
    migration: {enabled: false}

Quantities that may be fractional (``cpu_ghz``, times, costs) also accept
strings such as ``"1/1024"``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Any, Mapping, Optional, Union

import yaml

from .core import Allocated, Cluster, FREE, OnSuggestion, VmRequest, VmSpec, to_fraction
from .errors import CapacityExceeded, InvalidPlacement, SchemaError, UnknownFormat, UnknownPolicy
from .migration import (
    DEFAULT_BASE_COST,
    DEFAULT_PER_MIB_COST,
    DEFAULT_RESERVATION_TIMEOUT,
    DEFAULT_RESERVE_FRACTION,
    DEFAULT_STABILITY_THRESHOLD,
    DEFAULT_WINDOW,
    MigrationStrategy,
)
from .policies import DEFAULT_SUGGESTIONS, MatchMode, PolicyKind
from .telemetry import COUNTERS, RequestRecord, RunMetrics

BUNDLED = ("case1", "case2", "case3", "reallocation", "heterogeneous", "adversarial")

_SPEC_KEYS = ("ram_mb", "cpu_count", "cpu_ghz", "disk_gb")


@dataclass(frozen=True)
class HostDef:
    host_id: int
    capacity: VmSpec
    provider: str = "local"


@dataclass(frozen=True)
class VmDef:
    vm_id: int
    host_id: int
    spec: VmSpec
    state: str = "free"
    lease_end: Optional[Fraction] = None


@dataclass(frozen=True)
class PolicyConfig:
    kind: PolicyKind = PolicyKind.MODIFIED_THROTTLED
    rr_mode: str = "cyclic"
    k: int = DEFAULT_SUGGESTIONS
    match: MatchMode = MatchMode.DOMINATE


@dataclass(frozen=True)
class MigrationConfig:
    enabled: bool = False
    strategy: MigrationStrategy = MigrationStrategy.SEQUENTIAL
    reservation: bool = True
    reserve_fraction: Fraction = DEFAULT_RESERVE_FRACTION
    stability_threshold: float = DEFAULT_STABILITY_THRESHOLD
    window: int = DEFAULT_WINDOW
    base_cost: Fraction = DEFAULT_BASE_COST
    per_mib_cost: Fraction = DEFAULT_PER_MIB_COST
    reservation_timeout: Fraction = DEFAULT_RESERVATION_TIMEOUT


@dataclass(frozen=True)
class Scenario:
    name: str
    hosts: tuple
    vms: tuple
    requests: tuple
    seed: int = 0
    horizon: Optional[Fraction] = None
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    migration: MigrationConfig = field(default_factory=MigrationConfig)

    def build_cluster(self) -> Cluster:
        cluster = Cluster()
        for h in self.hosts:
            cluster.add_host(h.host_id, h.capacity, h.provider)
        for v in self.vms:
            state = FREE if v.state == "free" else Allocated(None, v.lease_end)
            try:
                cluster.add_vm(v.spec, v.host_id, state, vm_id=v.vm_id)
            except CapacityExceeded:
                raise InvalidPlacement(v.host_id) from None
        return cluster

    def effective_horizon(self) -> Fraction:
        """Explicit horizon, else ten times the last arrival.

        The default never cuts a run shorter than the longest lease, so a
        workload arriving at t=0 still sees its leases expire.
        """
        if self.horizon is not None:
            return self.horizon
        last = max((r.arrival_time for r in self.requests), default=Fraction(0))
        longest = max(
            [r.arrival_time + r.lease_duration for r in self.requests]
            + [v.lease_end for v in self.vms if v.lease_end is not None],
            default=Fraction(0),
        )
        return max(10 * last, longest)

    def with_overrides(self, *, seed: Optional[int] = None, policy: Optional[str] = None, **policy_kw) -> Scenario:
        from dataclasses import replace

        pol = self.policy
        if policy is not None:
            pol = replace(pol, kind=PolicyKind.parse(policy))
        if policy_kw:
            pol = replace(pol, **policy_kw)
        return replace(self, seed=self.seed if seed is None else seed, policy=pol)

    def digest(self) -> str:
        """Hash of the workload: hosts, inventory, requests and migration setup.

        Policy and seed are left out so that runs of different policies on
        one workload stay comparable.
        """
        doc = {
            "hosts": [[h.host_id, _spec_doc(h.capacity), h.provider] for h in self.hosts],
            "vms": [[v.vm_id, v.host_id, _spec_doc(v.spec), v.state, _q(v.lease_end)] for v in self.vms],
            "requests": [
                [r.request_id, _q(r.arrival_time), _spec_doc(r.required), _q(r.lease_duration), r.on_suggestion.value]
                for r in self.requests
            ],
            "migration": {
                k: (v.value if hasattr(v, "value") else _q(v) if isinstance(v, Fraction) else v)
                for k, v in vars(self.migration).items()
            },
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _q(value):
    return None if value is None else str(value)


def _spec_doc(spec: VmSpec) -> list:
    return [spec.ram_mb, spec.cpu_count, str(spec.cpu_ghz), spec.disk_gb]


# parsing helpers


def _require(doc: Mapping, key: str, path: str):
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "required field missing")
    return doc[key]


def _int(value, path: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(path, f"expected an integer, got {value!r}")
    if value < minimum:
        raise SchemaError(path, f"must be >= {minimum}, got {value}")
    return value


def _quantity(value, path: str, minimum=0) -> Fraction:
    try:
        q = to_fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise SchemaError(path, f"expected a number, got {value!r}") from None
    if q < minimum:
        raise SchemaError(path, f"must be >= {minimum}, got {value!r}")
    return q


def _float(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {value!r}")
    if not value >= 0:
        raise SchemaError(path, f"must be >= 0, got {value!r}")
    return float(value)


def _mapping(value, path: str) -> Mapping:
    if not isinstance(value, Mapping):
        raise SchemaError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _list(value, path: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected a list, got {type(value).__name__}")
    return value


def _spec(doc: Mapping, path: str, ghz_required: bool = False) -> VmSpec:
    values = {}
    for key in _SPEC_KEYS:
        if key == "cpu_ghz":
            raw = _require(doc, key, path) if ghz_required else doc.get(key, 0)
            values[key] = _quantity(raw, f"{path}.{key}")
        else:
            values[key] = _int(_require(doc, key, path), f"{path}.{key}")
    try:
        return VmSpec(**values)
    except (ValueError, TypeError, ArithmeticError) as e:
        raise SchemaError(path, str(e)) from None


def _enum(enum_cls, value, path: str):
    try:
        return enum_cls.parse(value) if hasattr(enum_cls, "parse") else enum_cls(value)
    except (ValueError, KeyError):
        raise SchemaError(path, f"unknown value {value!r}") from None


def parse_scenario(document: Union[str, bytes, Mapping]) -> Scenario:
    """Validate a scenario document (YAML text or an already-loaded mapping)."""
    if isinstance(document, bytes):
        try:
            document = document.decode("utf-8")
        except UnicodeDecodeError as e:
            raise SchemaError("$", f"not UTF-8 text: {e}") from None
    if isinstance(document, str):
        try:
            document = yaml.safe_load(document)
        except yaml.YAMLError as e:
            raise SchemaError("$", f"not valid YAML: {e}") from None
        except (ValueError, TypeError, RecursionError) as e:
            raise SchemaError("$", f"unreadable document: {e}") from None
    doc = _mapping(document, "$")

    name = _require(doc, "name", "$")
    if not isinstance(name, str) or not name:
        raise SchemaError("$.name", "expected a non-empty string")
    seed = _int(doc.get("seed", 0), "$.seed")
    if seed >= 2**64:
        raise SchemaError("$.seed", "must fit in 64 bits")
    horizon = doc.get("horizon")
    if horizon is not None:
        horizon = _quantity(horizon, "$.horizon")

    hosts = []
    seen_hosts = set()
    for i, h in enumerate(_list(_require(doc, "hosts", "$"), "$.hosts")):
        path = f"$.hosts[{i}]"
        h = _mapping(h, path)
        host_id = _int(_require(h, "id", path), f"{path}.id")
        if host_id in seen_hosts:
            raise SchemaError(f"{path}.id", f"duplicate host id {host_id}")
        seen_hosts.add(host_id)
        provider = h.get("provider", "local")
        if not isinstance(provider, str):
            raise SchemaError(f"{path}.provider", "expected a string")
        hosts.append(HostDef(host_id, _spec(h, path, ghz_required=True), provider))

    vms = []
    seen_vms = set()
    for i, v in enumerate(_list(doc.get("vms", []), "$.vms")):
        path = f"$.vms[{i}]"
        v = _mapping(v, path)
        vm_id = _int(_require(v, "id", path), f"{path}.id", minimum=1)
        if vm_id in seen_vms:
            raise SchemaError(f"{path}.id", f"duplicate vm id {vm_id}")
        seen_vms.add(vm_id)
        host_id = _int(_require(v, "host", path), f"{path}.host")
        if host_id not in seen_hosts:
            raise SchemaError(f"{path}.host", f"unknown host {host_id}")
        state = str(v.get("state", "free")).lower()
        lease_end = None
        if state == "allocated":
            lease_end = _quantity(_require(v, "lease_end", path), f"{path}.lease_end")
        elif state != "free":
            raise SchemaError(f"{path}.state", f"expected 'free' or 'allocated', got {state!r}")
        vms.append(VmDef(vm_id, host_id, _spec(v, path), state, lease_end))

    requests = []
    seen_requests = set()
    for i, r in enumerate(_list(doc.get("requests", []), "$.requests")):
        path = f"$.requests[{i}]"
        r = _mapping(r, path)
        request_id = _int(_require(r, "id", path), f"{path}.id")
        if request_id in seen_requests:
            raise SchemaError(f"{path}.id", f"duplicate request id {request_id}")
        seen_requests.add(request_id)
        at = _quantity(r.get("at", 0), f"{path}.at")
        lease = _quantity(_require(r, "lease", path), f"{path}.lease")
        if lease <= 0:
            raise SchemaError(f"{path}.lease", "must be > 0")
        on_suggestion = _enum(OnSuggestion, r.get("on_suggestion", "Abandon"), f"{path}.on_suggestion")
        requests.append(VmRequest(request_id, at, _spec(r, path), lease, on_suggestion))
    requests.sort(key=lambda r: r.arrival_time)

    p = _mapping(_require(doc, "policy", "$"), "$.policy")
    try:
        kind = PolicyKind.parse(_require(p, "kind", "$.policy"))
    except UnknownPolicy:
        raise
    rr_mode = p.get("rr_mode", "cyclic")
    if rr_mode not in ("cyclic", "random"):
        raise SchemaError("$.policy.rr_mode", f"expected 'cyclic' or 'random', got {rr_mode!r}")
    k = _int(p.get("k", DEFAULT_SUGGESTIONS), "$.policy.k", minimum=1)
    match = _enum(MatchMode, p.get("match", "dominate"), "$.policy.match")
    policy = PolicyConfig(kind, rr_mode, k, match)

    m = _mapping(doc.get("migration", {}) or {}, "$.migration")
    enabled = m.get("enabled", False)
    reservation = m.get("reservation", True)
    for key, flag in (("enabled", enabled), ("reservation", reservation)):
        if not isinstance(flag, bool):
            raise SchemaError(f"$.migration.{key}", "expected true or false")
    fraction = _quantity(m.get("reserve_fraction", DEFAULT_RESERVE_FRACTION), "$.migration.reserve_fraction")
    if fraction > 1:
        raise SchemaError("$.migration.reserve_fraction", "must be <= 1")
    migration = MigrationConfig(
        enabled=enabled,
        strategy=_enum(MigrationStrategy, m.get("strategy", "Sequential"), "$.migration.strategy"),
        reservation=reservation,
        reserve_fraction=fraction,
        stability_threshold=_float(m.get("stability_threshold", DEFAULT_STABILITY_THRESHOLD),
                                   "$.migration.stability_threshold"),
        window=_int(m.get("window", DEFAULT_WINDOW), "$.migration.window", minimum=2),
        base_cost=_quantity(m.get("base_cost", DEFAULT_BASE_COST), "$.migration.base_cost"),
        per_mib_cost=_quantity(m.get("per_mib_cost", DEFAULT_PER_MIB_COST), "$.migration.per_mib_cost"),
        reservation_timeout=_quantity(m.get("reservation_timeout", DEFAULT_RESERVATION_TIMEOUT),
                                      "$.migration.reservation_timeout"),
    )

    scenario = Scenario(str(name), tuple(hosts), tuple(vms), tuple(requests), seed, horizon, policy, migration)
    scenario.build_cluster()  # raises InvalidPlacement
    return scenario


def load_scenario(source: Union[str, os.PathLike]) -> Scenario:
    """Load a scenario from a path, or by bundled name such as ``"case1"``."""
    text = str(source)
    if text in BUNDLED and not os.path.exists(text):
        return parse_scenario(bundled_text(text))
    with open(source, "rb") as fh:
        return parse_scenario(fh.read())


def bundled_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"no bundled scenario {name!r}; have {BUNDLED}")
    return resources.files("cloudalloc.scenarios").joinpath(f"{name}.yaml").read_text()


# reports

REPORT_FORMATS = ("doc", "table")


def _time_doc(t: Fraction):
    return t.numerator if t.denominator == 1 else str(t)


def _time_parse(value, path) -> Fraction:
    return _quantity(value, path)


def metrics_to_doc(metrics: RunMetrics) -> dict:
    return {
        "scenario": metrics.scenario,
        "policy": metrics.policy,
        "seed": metrics.seed,
        "end_time": _time_doc(metrics.end_time),
        "counters": {k: metrics.counters.get(k, 0) for k in COUNTERS},
        "summary": {
            "avg_response": metrics.avg_response,
            "mean_utilization": metrics.mean_utilization,
            "rejection_rate": metrics.rejection_rate,
        },
        "requests": [
            {
                "id": r.request_id,
                "arrival": _time_doc(r.arrival),
                "outcome": r.outcome,
                "vm": r.vm_id,
                "response_ticks": None if r.response_ticks is None else _time_doc(r.response_ticks),
            }
            for r in metrics.requests
        ],
        "hosts": {
            str(h): [[_time_doc(t), list(u)] for t, u in series]
            for h, series in sorted(metrics.host_utilization.items())
        },
    }


def write_report(metrics: RunMetrics, format: str = "doc") -> str:
    """Serialise metrics as a JSON document (``doc``) or CSV (``table``)."""
    if format == "doc":
        return json.dumps(metrics_to_doc(metrics), indent=2) + "\n"
    if format == "table":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["scenario", metrics.scenario])
        writer.writerow(["policy", metrics.policy])
        writer.writerow(["seed", metrics.seed])
        for k in COUNTERS:
            writer.writerow([k, metrics.counters.get(k, 0)])
        writer.writerow(["avg_response", f"{metrics.avg_response:.6f}"])
        writer.writerow(["mean_utilization", f"{metrics.mean_utilization:.6f}"])
        writer.writerow(["rejection_rate", f"{metrics.rejection_rate:.6f}"])
        writer.writerow([])
        writer.writerow(["request", "arrival", "outcome", "vm", "response_ticks"])
        for r in metrics.requests:
            writer.writerow([
                r.request_id, r.arrival, r.outcome,
                "" if r.vm_id is None else r.vm_id,
                "" if r.response_ticks is None else r.response_ticks,
            ])
        return buf.getvalue()
    raise UnknownFormat(f"unknown report format {format!r}; expected one of {REPORT_FORMATS}")


def parse_report(document: Union[str, Mapping]) -> RunMetrics:
    """Inverse of ``write_report(..., "doc")``."""
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as e:
            raise SchemaError("$", f"not valid JSON: {e}") from None
    doc = _mapping(document, "$")
    try:
        counters = {k: _int(doc["counters"][k], f"$.counters.{k}") for k in COUNTERS}
        requests = [
            RequestRecord(
                request_id=r["id"],
                arrival=_time_parse(r["arrival"], "$.requests.arrival"),
                outcome=r["outcome"],
                vm_id=r["vm"],
                response_ticks=None if r["response_ticks"] is None
                else _time_parse(r["response_ticks"], "$.requests.response_ticks"),
            )
            for r in doc["requests"]
        ]
        hosts = {
            int(h): [(_time_parse(t, f"$.hosts.{h}"), tuple(float(x) for x in u)) for t, u in series]
            for h, series in doc["hosts"].items()
        }
        return RunMetrics(
            scenario=doc["scenario"],
            policy=doc["policy"],
            seed=doc["seed"],
            end_time=_time_parse(doc["end_time"], "$.end_time"),
            counters=counters,
            requests=requests,
            host_utilization=hosts,
        )
    except (KeyError, TypeError, AttributeError) as e:
        raise SchemaError("$", f"missing or malformed field: {e}") from None
