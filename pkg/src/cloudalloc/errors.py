"""Exception hierarchy shared by every part of the simulator."""


class CloudAllocError(Exception):
    """Base class for all simulator errors."""


class ArithmeticOverflow(CloudAllocError, ArithmeticError):
    pass


class CapacityExceeded(CloudAllocError):
    pass


class DuplicateRequest(CloudAllocError):
    pass


class InvalidDeallocation(CloudAllocError):
    pass


class NoFeasibleTarget(CloudAllocError):
    pass


class MigrationInfeasible(CloudAllocError):
    """The target host cannot absorb the incoming VM."""


class ReservationInfeasible(MigrationInfeasible):
    """A source-side hold would break capacity conservation."""


class InvalidPlan(CloudAllocError):
    pass


class ReservationViolation(CloudAllocError):
    """A reservation that must exist is missing. Aborts the run."""


class InsufficientHistory(CloudAllocError):
    pass


class TimeTravel(CloudAllocError):
    pass


class MalformedLog(CloudAllocError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ScenarioMismatch(CloudAllocError):
    pass


class SchemaError(CloudAllocError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class InvalidPlacement(CloudAllocError):
    def __init__(self, host_id, message="initial placement exceeds capacity"):
        super().__init__(f"host {host_id}: {message}")
        self.host_id = host_id


class UnknownPolicy(CloudAllocError):
    pass


class UnknownFormat(CloudAllocError):
    pass
