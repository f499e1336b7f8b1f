"""Exception hierarchy shared by the loaders, the engines and the CLI."""


class ItergraphError(Exception):
    """Base class for every error raised by this package."""


class GraphFormatError(ItergraphError, ValueError):
    """Malformed edge-list or seed-label input."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ItergraphError, ValueError):
    """Invalid run configuration (bad parameters, unknown source vertex, ...)."""


class CapacityError(ItergraphError):
    """The graph does not fit into the BSP workers' memory budget."""

    def __init__(self, estimate, budget):
        self.estimate = estimate
        self.budget = budget
        super().__init__(
            f"estimated resident size {estimate} bytes exceeds memory budget {budget} bytes"
        )


class EngineFault(ItergraphError):
    """An engine invariant was violated (lost structure, unsorted run, ...)."""


class WorkerFailure(EngineFault):
    """A task raised inside the worker pool; the run is aborted."""

    def __init__(self, task_index, cause):
        self.task_index = task_index
        self.cause = cause
        super().__init__(f"task {task_index} failed: {cause!r}")


class DfsError(ItergraphError, OSError):
    """Simulated DFS failure: missing file, corrupt block, conflicting writers."""
