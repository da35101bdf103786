"""Error types shared by the engines and the CLI.

Exit-code mapping used by the CLI: ScenarioError -> 1, InvariantViolation -> 2,
HorizonExhausted -> 3.
"""


class ScenarioError(ValueError):
    """Malformed scenario, table, script, or argument."""


class InvariantViolation(AssertionError):
    """A structural invariant or a verified combinatorial bound failed.

    Raised when an engine detects a state its supporting lemmas rule out;
    in a healthy build this only fires on genuine engine bugs.
    """


class HorizonExhausted(RuntimeError):
    """A finite run ended before a required completion was reached."""
