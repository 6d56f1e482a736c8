"""Error types shared across the package.

Every failure mode that callers may want to distinguish gets its own class:
bad arguments or configuration (usage), violated internal contracts,
weight collapse inside a filter, numerical blow-up during propagation, and
an under-resolved benchmark reference.  The command line maps these onto
exit codes and one-line diagnostics.
"""


class AmlpfError(Exception):
    """Base class for all package errors."""

    code = "error"


class UsageError(AmlpfError, ValueError):
    """Invalid user input: unknown names, malformed configs, bad parameter ranges."""

    code = "usage"


class ContractError(AmlpfError, ValueError):
    """An internal precondition or invariant was violated."""

    code = "contract"


class FilterCollapseError(AmlpfError, RuntimeError):
    """All particle weights vanished at some observation time."""

    code = "filter.collapse"

    def __init__(self, time, marginal="single"):
        self.time = time
        self.marginal = marginal
        super().__init__(
            f"all particle weights are zero at time {time} (marginal={marginal})"
        )


class PropagationError(AmlpfError, RuntimeError):
    """A discretized path left the finite range during propagation."""

    code = "scheme.propagation"

    def __init__(self, step, path="single"):
        self.step = step
        self.path = path
        super().__init__(
            f"non-finite state after discretization step {step} (path={path})"
        )


class ReferencePrecisionError(AmlpfError, RuntimeError):
    """The benchmark reference is too noisy relative to the methods under test."""

    code = "bench.reference_precision"
