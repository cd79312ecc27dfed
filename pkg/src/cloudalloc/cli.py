"""Command-line front end.

    cloudalloc run SCENARIO [--report table|doc] [--log PATH] [--seed N] [--policy NAME]
    cloudalloc compare SCENARIO POLICY POLICY [...]
    cloudalloc interactive SCENARIO
    cloudalloc validate SCENARIO

SCENARIO is a YAML path or a bundled name (case1, case2, case3,
reallocation, heterogeneous, adversarial). In ``compare`` a policy may carry
a round-robin mode, e.g. ``RoundRobin:random``.

Exit codes: 0 ok, 2 usage or parse error, 3 internal invariant abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from typing import Optional, TextIO

from .core import OnSuggestion, VmRequest, VmSpec
from .engine import Engine
from .errors import CloudAllocError, ReservationViolation, UnknownPolicy
from .scenario import REPORT_FORMATS, Scenario, load_scenario, write_report
from .telemetry import METRIC_FIELDS, compare, summarize

EXIT_OK, EXIT_USAGE, EXIT_ABORT = 0, 2, 3

DEFAULT_INTERACTIVE_LEASE = 720


def _load(path: str, err: TextIO) -> Optional[Scenario]:
    try:
        return load_scenario(path)
    except OSError as e:
        print(f"error: cannot read scenario {path!r}: {e.strerror or e}", file=err)
    except CloudAllocError as e:
        print(f"error: {type(e).__name__}: {e}", file=err)
    return None


def _policy_override(spec: str) -> dict:
    name, _, mode = spec.partition(":")
    kw = {"policy": name}
    if mode:
        if mode not in ("cyclic", "random"):
            raise UnknownPolicy(f"unknown round-robin mode {mode!r}")
        kw["rr_mode"] = mode
    return kw


def cmd_run(args, out: TextIO, err: TextIO) -> int:
    scenario = _load(args.scenario, err)
    if scenario is None:
        return EXIT_USAGE
    try:
        kw = _policy_override(args.policy) if args.policy else {}
        scenario = scenario.with_overrides(seed=args.seed, **kw)
    except (CloudAllocError, ValueError) as e:
        print(f"error: {e}", file=err)
        return EXIT_USAGE
    try:
        result = Engine(scenario).run()
    except ReservationViolation as e:
        print(f"aborted: ReservationViolation: {e}", file=err)
        return EXIT_ABORT
    if args.log:
        with open(args.log, "w") as fh:
            fh.write(result.log)
    out.write(write_report(summarize(result.log), args.report))
    return EXIT_OK


def cmd_compare(args, out: TextIO, err: TextIO) -> int:
    if len(args.policies) < 2:
        print("error: compare needs at least two policies", file=err)
        return EXIT_USAGE
    scenario = _load(args.scenario, err)
    if scenario is None:
        return EXIT_USAGE
    try:
        variants = [scenario.with_overrides(seed=args.seed, **_policy_override(p)) for p in args.policies]
    except (CloudAllocError, ValueError) as e:
        print(f"error: {e}", file=err)
        return EXIT_USAGE
    try:
        runs = [summarize(Engine(v).run().log) for v in variants]
    except ReservationViolation as e:
        print(f"aborted: ReservationViolation: {e}", file=err)
        return EXIT_ABORT
    base = runs[0]
    header = ["policy", *METRIC_FIELDS, *(f"delta_{f}" for f in METRIC_FIELDS)]
    out.write(",".join(header) + "\n")
    for name, m in zip(args.policies, runs):
        deltas = compare(base, m)
        row = [name]
        row += [f"{getattr(m, f):.6f}" for f in METRIC_FIELDS]
        row += [f"{deltas[f]['delta']:.6f}" for f in METRIC_FIELDS]
        out.write(",".join(row) + "\n")
    return EXIT_OK


def cmd_validate(args, out: TextIO, err: TextIO) -> int:
    scenario = _load(args.scenario, err)
    if scenario is None:
        return EXIT_USAGE
    out.write(
        f"ok: {scenario.name}: {len(scenario.hosts)} hosts, {len(scenario.vms)} vms, "
        f"{len(scenario.requests)} requests, policy {scenario.policy.kind.value}, digest {scenario.digest()}\n"
    )
    return EXIT_OK


class InteractiveSession:
    """Console over a scenario's inventory; each answer becomes a request.

    The scenario's own request list is dropped. Requests arrive at the
    engine's current tick.
    """

    FIELDS = (("ram_mb", "Required RAM (MB)"), ("cpu_count", "No. of CPUs"), ("disk_gb", "Hard disk space (GB)"))

    def __init__(self, scenario: Scenario, *, lease=DEFAULT_INTERACTIVE_LEASE,
                 on_suggestion: OnSuggestion = OnSuggestion.ABANDON):
        self.engine = Engine(replace(scenario, requests=()))
        self.lease = lease
        self.on_suggestion = OnSuggestion(on_suggestion)
        self.next_id = 1
        self.outcomes: list[dict] = []

    def request(self, ram_mb: int, cpu_count: int, disk_gb: int) -> dict:
        req = VmRequest(self.next_id, self.engine.clock, VmSpec(ram_mb, cpu_count, 0, disk_gb),
                        self.lease, self.on_suggestion)
        self.next_id += 1
        self.engine.submit(req)
        outcome = None
        for line in self.engine.run_until(self.engine.clock):
            _, _, kind, payload = line.split("\t")
            payload = json.loads(payload)
            if kind == "RequestArrival" and payload.get("request") == req.request_id:
                payload.pop("util", None)
                outcome = payload
        self.outcomes.append(outcome)
        return outcome

    def describe(self, outcome: dict) -> str:
        kind = outcome["outcome"]
        if kind == "Allocated":
            vm = self.engine.cluster.vms[outcome["vm"]]
            return f"Allocated VM ID: {vm.vm_id} ({vm.spec})"
        if kind == "Suggested":
            rows = ["No VM is available with the required configuration. Suggested VMs:",
                    f"  {'vm':>4}  {'ram_mb':>7}  {'cpus':>4}  {'ghz':>5}  {'disk_gb':>7}  {'score':>8}"]
            for vm_id, score in outcome["candidates"]:
                s = self.engine.cluster.vms[vm_id].spec
                rows.append(f"  {vm_id:>4}  {s.ram_mb:>7}  {s.cpu_count:>4}  {float(s.cpu_ghz):>5g}"
                            f"  {s.disk_gb:>7}  {score:>8.4f}")
            if "accepted" in outcome:
                rows.append(f"Accepted VM ID: {outcome['accepted']}")
            return "\n".join(rows)
        if kind == "Queued":
            return "No VM is available; request queued."
        return f"Rejected: {outcome.get('reason', 'unknown')}"

    def loop(self, inp: TextIO, out: TextIO) -> None:
        while True:
            values = {}
            for key, prompt in self.FIELDS:
                while key not in values:
                    out.write(f"{prompt}: ")
                    out.flush()
                    line = inp.readline()
                    if not line:
                        out.write("\n")
                        return
                    try:
                        value = int(line.strip())
                        if value < 0:
                            raise ValueError
                    except ValueError:
                        out.write(f"invalid number {line.strip()!r}, try again\n")
                        continue
                    values[key] = value
            out.write(self.describe(self.request(**values)) + "\n")


def cmd_interactive(args, out: TextIO, err: TextIO, inp: TextIO = None) -> int:
    scenario = _load(args.scenario, err)
    if scenario is None:
        return EXIT_USAGE
    try:
        session = InteractiveSession(scenario, lease=args.lease, on_suggestion=args.on_suggestion)
        session.loop(inp or sys.stdin, out)
    except ReservationViolation as e:
        print(f"aborted: ReservationViolation: {e}", file=err)
        return EXIT_ABORT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudalloc", description="IaaS VM allocation and migration simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and print a report")
    run.add_argument("scenario")
    run.add_argument("--report", choices=REPORT_FORMATS, default="table")
    run.add_argument("--log", help="write the event log to this path")
    run.add_argument("--seed", type=int)
    run.add_argument("--policy", help="override the scenario policy, e.g. Throttled or RoundRobin:random")

    cmp_ = sub.add_parser("compare", help="run one scenario under several policies")
    cmp_.add_argument("scenario")
    cmp_.add_argument("policies", nargs="+")
    cmp_.add_argument("--seed", type=int)

    inter = sub.add_parser("interactive", help="request VMs from a console")
    inter.add_argument("scenario")
    inter.add_argument("--lease", type=int, default=DEFAULT_INTERACTIVE_LEASE)
    inter.add_argument("--on-suggestion", choices=[o.value for o in OnSuggestion], default="Abandon")

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("scenario")
    return parser


def main(argv=None, *, stdin: TextIO = None, stdout: TextIO = None, stderr: TextIO = None) -> int:
    out, err = stdout or sys.stdout, stderr or sys.stderr
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args, out, err)
    if args.command == "compare":
        return cmd_compare(args, out, err)
    if args.command == "interactive":
        return cmd_interactive(args, out, err, stdin)
    return cmd_validate(args, out, err)


if __name__ == "__main__":
    sys.exit(main())
