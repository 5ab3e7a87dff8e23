"""
Domain errors raised by the interaction services.

Management commands turn any HOIError into a CommandError so the process exits
nonzero with a one-line diagnostic.
"""


class HOIError(Exception):
    """Base class for every error raised by the interaction pipeline"""


class InvalidBoxError(HOIError, ValueError):
    """Box with non-finite, negative or degenerate coordinates"""


class DimensionMismatchError(HOIError, ValueError):
    """Tensor whose trailing size does not match the configured width"""

    def __init__(self, what, expected, got):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected size {expected}, got {got}")


class ConfigurationError(HOIError, ValueError):
    """Parameter outside its allowed range"""


class VocabularyError(HOIError, ValueError):
    """Token, verb or object unknown to the configured vocabularies"""


class AnnotationError(HOIError, ValueError):
    """Malformed dataset record"""

    def __init__(self, index, message):
        self.index = index
        super().__init__(f"record {index}: {message}")


class RulebookGapError(HOIError):
    """Synthetic geometry that no verb rule (and not the disjoint rule) covers"""


class SplitError(HOIError, ValueError):
    """Held-out set inconsistent with the split mode"""


class NonFiniteLossError(HOIError, FloatingPointError):
    """A loss component evaluated to NaN or infinity"""

    def __init__(self, component, value=None):
        self.component = component
        super().__init__(f"loss component '{component}' is not finite ({value})")


class CheckpointMismatchError(HOIError):
    """Checkpoint incompatible with the run configuration"""


class FrozenParameterError(HOIError):
    """A frozen module's parameters changed during training"""
