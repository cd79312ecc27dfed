"""
Merging VMs through live migration
==================================

Two hosts each hold one free 1 GHz VM. A request needs 2 GHz, so no single
VM fits. The migration planner moves one VM next to the other and merges
them into a VM that does fit.
"""

import json

from cloudalloc import Engine, load_scenario

scenario = load_scenario("reallocation")
engine = Engine(scenario)

print("before:")
for vm in engine.cluster.real_vms():
    print(f"  vm {vm.vm_id} on host {vm.host_id}: {vm.spec} {vm.state.kind}")

# Step through the event log. The arrival starts a migration plan, the
# move completes after base_cost + ram * per_mib_cost ticks, and a queue
# retry hands the merged VM to the waiting request.
while (line := engine.step()) is not None:
    time, seq, kind, payload = line.split("\t")
    payload = json.loads(payload)
    payload.pop("util", None)
    print(f"t={time:<5} {kind:<15} {payload}")

print("after:")
for vm in engine.cluster.real_vms():
    print(f"  vm {vm.vm_id} on host {vm.host_id}: {vm.spec} {vm.state.kind}")
