"""
Three allocation cases
======================

Runs the three bundled request cases through the modified throttled
allocator and prints what a user at the console would see.
"""

from cloudalloc import load_scenario
from cloudalloc.cli import InteractiveSession

# Each bundled case carries one request. We replay it through the console
# session so the output matches what ``cloudalloc interactive`` prints.
for name in ("case1", "case2", "case3"):
    scenario = load_scenario(name)
    (req,) = scenario.requests
    print(f"--- {name}: request {req.required}")

    session = InteractiveSession(scenario, lease=req.lease_duration, on_suggestion=req.on_suggestion)
    outcome = session.request(req.required.ram_mb, req.required.cpu_count, req.required.disk_gb)
    print(session.describe(outcome))
    print()

# case1: the only matching VM is leased, so the user gets ranked alternatives.
# case2: nothing matches exactly; the larger VM that dominates the request
#        ranks first.
# case3: an exact match is free and is allocated at once.
