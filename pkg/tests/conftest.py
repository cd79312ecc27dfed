import random
from fractions import Fraction

import pytest

from cloudalloc.core import Cluster, VmSpec
from cloudalloc.scenario import parse_scenario

UNIT = VmSpec(512, 1, 1, 1024)


def make_cluster(hosts, vms):
    """hosts: {host_id: capacity}; vms: [(vm_id, host_id, spec)]."""
    cluster = Cluster()
    for host_id, cap in sorted(hosts.items()):
        cluster.add_host(host_id, cap)
    for vm_id, host_id, spec in vms:
        cluster.add_vm(spec, host_id, vm_id=vm_id)
    return cluster


def random_spec(rng, small=False):
    ram = rng.choice([256, 512, 1024] if small else [256, 512, 1024, 2048])
    cpus = rng.randint(1, 2 if small else 4)
    ghz = Fraction(rng.randint(1, 4 if small else 8), 2)
    disk = rng.choice([512, 1024, 2048])
    return VmSpec(ram, cpus, ghz, disk)


def random_scenario_doc(rng, *, reservation=True, policy="ModifiedThrottled", migration=True):
    """A small random workload that tends to need merges to serve its requests."""
    hosts, vms = [], []
    vm_id = 1
    for host_id in range(1, rng.randint(2, 5) + 1):
        cap = VmSpec(rng.choice([2048, 4096, 8192]), rng.randint(4, 12), rng.randint(4, 12), rng.choice([4096, 8192]))
        hosts.append({"id": host_id, "ram_mb": cap.ram_mb, "cpu_count": cap.cpu_count,
                      "cpu_ghz": str(cap.cpu_ghz), "disk_gb": cap.disk_gb})
        used = VmSpec()
        fill = rng.choice([Fraction(9, 10), Fraction(1)])
        for _ in range(rng.randint(0, 6)):
            spec = random_spec(rng, small=True)
            # hosts filled to the brim cannot take source-side holds
            if not all(u <= c * fill for u, c in zip((used + spec).components(), cap.components())):
                continue
            used = used + spec
            doc = {"id": vm_id, "host": host_id, **spec.as_dict()}
            doc["cpu_ghz"] = str(spec.cpu_ghz)
            if rng.random() < 0.2:
                doc.update(state="allocated", lease_end=rng.randint(1, 30))
            vms.append(doc)
            vm_id += 1
    requests = []
    t = 0
    for rid in range(1, rng.randint(1, 12) + 1):
        t += rng.randint(0, 4)
        spec = random_spec(rng)
        requests.append({
            "id": rid, "at": t, "ram_mb": spec.ram_mb, "cpu_count": spec.cpu_count,
            "cpu_ghz": str(spec.cpu_ghz), "disk_gb": spec.disk_gb, "lease": rng.randint(1, 20),
            "on_suggestion": rng.choice(["StayQueued", "StayQueued", "AcceptBest", "Abandon"]),
        })
    return {
        "name": "fuzz",
        "seed": rng.randrange(2**32),
        "hosts": hosts,
        "vms": vms,
        "requests": requests,
        "policy": {"kind": policy, "rr_mode": rng.choice(["cyclic", "random"])},
        "migration": {
            "enabled": migration,
            "reservation": reservation,
            "strategy": rng.choice(["Sequential", "Parallel", "WorkloadAware"]),
            "reserve_fraction": rng.choice([0, 0.05, 0.1, 0.2]),
            "stability_threshold": rng.choice([0.3, 0.5, 1.0, 10.0]),
        },
    }


def random_scenario(rng, **kw):
    return parse_scenario(random_scenario_doc(rng, **kw))


@pytest.fixture
def rng():
    return random.Random(1234)
