"""Exception hierarchy shared across the package.

Every error carries a short machine-readable ``code`` so callers (and the CLI
exit-code mapping) can distinguish failure classes without parsing messages.
"""


class DeconfError(Exception):
    """Base class for all package errors."""

    code = "error"


class ValidationError(DeconfError, ValueError):
    """Inputs violate a documented contract (bad config, shape, index, mode)."""

    code = "validation"


class UnreachableEvidenceError(DeconfError):
    """Conditioning on an input value with zero marginal probability."""

    code = "unreachable_evidence"


class FormatVersionError(DeconfError):
    """Serialized artifact declares an unsupported format version."""

    code = "version_mismatch"


class TruncatedPayloadError(DeconfError):
    """Binary payload is shorter than its manifest declares."""

    code = "truncated"


class ShapeMismatchError(DeconfError):
    """Manifest and payload (or manifest and config) disagree about shapes."""

    code = "shape_mismatch"


class NonFiniteLossError(DeconfError):
    """Training produced a NaN or infinite loss."""

    code = "non_finite_loss"
