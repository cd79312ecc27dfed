"""Discrete-event simulator for VM allocation and live migration in an IaaS cloud."""

from .core import (
    AllocatedOutcome,
    Cluster,
    OnSuggestion,
    QueuedOutcome,
    RejectedOutcome,
    SuggestedOutcome,
    VmInstance,
    VmRequest,
    VmSpec,
    spec_add,
    spec_satisfies,
)
from .engine import Engine, run_scenario
from .migration import MigrationController, MigrationPlan, MigrationStrategy, decide_migration
from .policies import PolicyKind, PolicyState, modified_throttled_allocate, suggest_vms
from .scenario import Scenario, load_scenario, parse_scenario, write_report
from .telemetry import RunMetrics, compare, summarize

__version__ = "0.1.0"
