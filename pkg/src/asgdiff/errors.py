"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shape or dimension precondition violated."""


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending field."""


class PredictorError(RuntimeError):
    """A noise-prediction backend failed."""


class RemoteProtocolError(PredictorError):
    """Wire-protocol violation talking to a remote predictor."""


class RemoteTimeoutError(RemoteProtocolError):
    """Remote predictor did not answer within the deadline."""


class VersionMismatchError(RemoteProtocolError):
    """Remote predictor advertises an unsupported protocol version."""


class RemoteShapeError(RemoteProtocolError):
    """Response tensor shape disagrees with the request."""


class RunError(RuntimeError):
    """Pipeline run aborted; message names the worker and iteration."""
