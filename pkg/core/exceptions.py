class EstimationError(Exception):
    """Base class of every error raised by the estimation stack."""


class InvalidArgumentError(EstimationError, ValueError):
    pass


class SingularConfigurationError(EstimationError):
    pass


class NumericalFailureError(EstimationError):
    def __init__(self, message, frame_index=None):
        if frame_index is not None:
            message = 'frame %d: %s' % (frame_index, message)
        super(NumericalFailureError, self).__init__(message)
        self.frame_index = frame_index


class PropagationOverflowError(NumericalFailureError):
    pass


class SequencingError(EstimationError):
    pass


class ScenarioError(EstimationError):
    pass


class PreconditionError(EstimationError):
    pass


class ConfigError(EstimationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = 'line %d: %s' % (line, message)
        super(ConfigError, self).__init__(message)
        self.line = line


class SchemaError(EstimationError):
    pass


class AlignmentError(EstimationError):
    pass


class UndefinedMetricError(EstimationError):
    pass
