"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid schedule, budget, policy or experiment configuration."""


class ProtocolError(RuntimeError):
    """A caller broke the stepping protocol (order, missing inputs)."""


class InvariantViolation(AssertionError):
    """A cache invariant failed at runtime. ``invariant`` names which one."""

    def __init__(self, invariant, detail=""):
        self.invariant = invariant
        super().__init__(f"invariant '{invariant}' violated" + (f": {detail}" if detail else ""))


class CoverageError(ValueError):
    """Attention slices do not cover every context scale."""
