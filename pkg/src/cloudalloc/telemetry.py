"""Run metrics computed from an engine event log."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Union

from .errors import MalformedLog, ScenarioMismatch

COUNTERS = (
    "allocations",
    "suggestions_issued",
    "suggestions_accepted",
    "queued",
    "rejections",
    "deferred_allocations",
    "migrations_started",
    "migrations_refused",
    "migrations_failed",
    "merges",
)

_KINDS = {"RequestArrival", "LeaseExpiry", "MoveComplete", "ReservationTimeout", "QueueRetry"}
_TERMINAL = {"Allocated": "allocations", "Suggested": "suggestions_issued", "Queued": "queued", "Rejected": "rejections"}


@dataclass
class RequestRecord:
    request_id: int
    arrival: Fraction
    outcome: str
    vm_id: Optional[int] = None
    response_ticks: Optional[Fraction] = None


@dataclass
class RunMetrics:
    scenario: str = ""
    policy: str = ""
    seed: int = 0
    end_time: Fraction = Fraction(0)
    counters: dict = field(default_factory=lambda: dict.fromkeys(COUNTERS, 0))
    requests: list = field(default_factory=list)
    host_utilization: dict = field(default_factory=dict)  # host_id -> [(time, (ram, cpus, ghz, disk))]

    @property
    def avg_response(self) -> float:
        """Mean ticks from arrival to allocation, over requests that got a VM."""
        served = [r.response_ticks for r in self.requests if r.response_ticks is not None]
        return float(sum(served, Fraction(0)) / len(served)) if served else 0.0

    @property
    def rejection_rate(self) -> float:
        """Fraction of requests that never received a VM."""
        if not self.requests:
            return 0.0
        unserved = sum(1 for r in self.requests if r.response_ticks is None)
        return unserved / len(self.requests)

    @property
    def mean_utilization(self) -> float:
        """Time-weighted busy fraction averaged over resources and hosts."""
        if not self.host_utilization:
            return 0.0
        per_host = []
        for series in self.host_utilization.values():
            if not series:
                continue
            start = series[0][0]
            span = self.end_time - start
            if span <= 0:
                per_host.append(sum(series[-1][1]) / len(series[-1][1]))
                continue
            area = 0.0
            for (t0, u), nxt in zip(series, list(series[1:]) + [(self.end_time, None)]):
                area += float(nxt[0] - t0) * (sum(u) / len(u))
            per_host.append(area / float(span))
        return sum(per_host) / len(per_host) if per_host else 0.0

    def terminal_count(self) -> int:
        c = self.counters
        return c["allocations"] + c["suggestions_issued"] + c["queued"] + c["rejections"]


def _parse_header(line: str, metrics: RunMetrics) -> None:
    for token in line.lstrip("#").split():
        key, _, value = token.partition("=")
        if key == "scenario":
            metrics.scenario = value
        elif key == "policy":
            metrics.policy = value
        elif key == "seed":
            try:
                metrics.seed = int(value)
            except ValueError:
                pass


def parse_log_line(line: str, line_no: int) -> tuple:
    parts = line.split("\t")
    if len(parts) != 4:
        raise MalformedLog(line_no, f"expected 4 tab-separated fields, got {len(parts)}")
    time_s, seq_s, kind, payload_s = parts
    try:
        time = Fraction(time_s)
        seq = int(seq_s)
    except (ValueError, ZeroDivisionError):
        raise MalformedLog(line_no, f"bad time/seq {time_s!r} {seq_s!r}") from None
    if kind not in _KINDS:
        raise MalformedLog(line_no, f"unknown event kind {kind!r}")
    try:
        payload = json.loads(payload_s)
    except json.JSONDecodeError as e:
        raise MalformedLog(line_no, f"payload is not JSON: {e}") from None
    if not isinstance(payload, dict):
        raise MalformedLog(line_no, "payload is not an object")
    return time, seq, kind, payload


def summarize(log: Union[str, Iterable[str]]) -> RunMetrics:
    """One pass over an event log."""
    lines = log.splitlines() if isinstance(log, str) else log
    m = RunMetrics()
    c = m.counters
    by_id: dict[int, RequestRecord] = {}
    for line_no, raw in enumerate(lines, 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            _parse_header(line, m)
            continue
        time, _, kind, p = parse_log_line(line, line_no)
        m.end_time = time
        try:
            if kind == "RequestArrival" and "outcome" in p:
                outcome = p["outcome"]
                if outcome not in _TERMINAL:
                    raise MalformedLog(line_no, f"unknown outcome {outcome!r}")
                c[_TERMINAL[outcome]] += 1
                rec = RequestRecord(p["request"], time, outcome)
                if outcome == "Allocated":
                    rec.vm_id, rec.response_ticks = p["vm"], Fraction(0)
                elif "accepted" in p:
                    c["suggestions_accepted"] += 1
                    rec.vm_id, rec.response_ticks = p["accepted"], Fraction(0)
                if p["request"] not in by_id:
                    by_id[p["request"]] = rec
                    m.requests.append(rec)
                mig = p.get("migration")
                if mig:
                    status = mig.get("status")
                    if status == "started":
                        c["migrations_started"] += 1
                    elif status == "infeasible":
                        c["migrations_refused"] += 1
            elif kind == "QueueRetry":
                for request_id, vm_id in p.get("allocated", []):
                    c["deferred_allocations"] += 1
                    rec = by_id.get(request_id)
                    if rec is not None and rec.response_ticks is None:
                        rec.vm_id, rec.response_ticks = vm_id, time - rec.arrival
            elif kind == "MoveComplete":
                if p.get("failed"):
                    c["migrations_failed"] += 1
                if "merged" in p:
                    c["merges"] += 1
            elif kind == "ReservationTimeout":
                if p.get("expired"):
                    c["migrations_failed"] += 1
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedLog(line_no, f"payload missing or bad field: {e}") from None
        for host, u in p.get("util", {}).items():
            m.host_utilization.setdefault(int(host), []).append((time, tuple(u)))
    return m


METRIC_FIELDS = ("avg_response", "mean_utilization", "rejection_rate")


def compare(metrics_a: RunMetrics, metrics_b: RunMetrics) -> dict:
    """Side-by-side values and ``b - a`` deltas for the headline metrics."""
    if metrics_a.scenario != metrics_b.scenario:
        raise ScenarioMismatch(f"{metrics_a.scenario!r} != {metrics_b.scenario!r}")
    report = {}
    for name in METRIC_FIELDS:
        a, b = getattr(metrics_a, name), getattr(metrics_b, name)
        report[name] = {"a": a, "b": b, "delta": b - a}
    return report
