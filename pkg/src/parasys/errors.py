"""Exception types shared across the toolkit.

Every error carries a short machine-readable ``reason`` so that batch
drivers can report failures without parsing messages.
"""


class ParasysError(Exception):
    reason = "error"

    def __init__(self, message, reason=None, **context):
        super().__init__(message)
        if reason is not None:
            self.reason = reason
        self.context = context

    def to_dict(self):
        out = {"reason": self.reason, "message": str(self)}
        out.update({k: _plain(v) for k, v in self.context.items()})
        return out


class ValidationError(ParasysError, ValueError):
    """Bad input: malformed mesh, tensor, config or parameter range."""

    reason = "validation"


class SolverError(ParasysError, RuntimeError):
    """A numerical procedure failed (singular system, no convergence)."""

    reason = "solver"


def _plain(value):
    if hasattr(value, "item"):
        try:
            return value.item()
        except (ValueError, AttributeError):
            pass
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value
