"""Exception types shared across the package.

Everything derives from FreqdetError so the CLI can map any contract
violation to a single non-zero exit code.
"""


class FreqdetError(Exception):
    pass


class DimensionError(FreqdetError, ValueError):
    """Tensor extents do not satisfy an operation's preconditions."""


class ContractError(FreqdetError, ValueError):
    """A value-level precondition was violated (range, sign, scalar-ness)."""


class UnsupportedSizeError(FreqdetError, ValueError):
    """FFT extents must be powers of two at desk scale."""


class ManifestError(FreqdetError, ValueError):
    """Malformed dataset manifest; message carries the offending line number."""


class MetricError(FreqdetError, ValueError):
    """A metric is undefined for the given inputs (e.g. AP with no positives)."""


class ConfigError(FreqdetError, ValueError):
    """Invalid training or model configuration."""


class TrainingDiverged(FreqdetError, RuntimeError):
    """Loss became non-finite; message carries epoch and batch index."""
