"""
Comparing load balancers
========================

Runs the bundled heterogeneous workload under every policy and tabulates
mean response time, utilisation and rejection rate.
"""

from cloudalloc import compare, load_scenario, run_scenario, summarize

base = load_scenario("heterogeneous")
print(f"workload: {len(base.hosts)} hosts, {len(base.vms)} VMs, {len(base.requests)} requests")

variants = [
    ("RoundRobin (cyclic)", base.with_overrides(policy="RoundRobin", rr_mode="cyclic")),
    ("RoundRobin (random)", base.with_overrides(policy="RoundRobin", rr_mode="random")),
    ("EqualSpread", base.with_overrides(policy="EqualSpread")),
    ("ActiveMonitoring", base.with_overrides(policy="ActiveMonitoring")),
    ("Throttled", base.with_overrides(policy="Throttled")),
    ("ModifiedThrottled", base.with_overrides(policy="ModifiedThrottled")),
]

# Same workload, same seed: only the policy changes, so the scenario
# digests agree and ``compare`` accepts every pair.
runs = [(label, summarize(run_scenario(s).log)) for label, s in variants]
reference = dict(runs)["Throttled"]

print(f"{'policy':<22}{'avg resp':>10}{'util':>8}{'rejected':>10}{'vs Throttled':>14}")
for label, m in runs:
    delta = compare(reference, m)["avg_response"]["delta"]
    print(f"{label:<22}{m.avg_response:>10.3f}{m.mean_utilization:>8.3f}{m.rejection_rate:>10.3f}{delta:>+14.3f}")

# Throttled hands each request to the first available VM, so it rarely
# collides with a busy one. Random round robin does collide, and queued
# requests wait for a lease to end.
