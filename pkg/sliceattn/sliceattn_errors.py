"""
Sliceattn specific exceptions

Every exception carries the process exit status the CLI reports for it in the code attribute
"""

EXIT_SUCCESS = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

class SliceattnError(Exception):
    """
    Base class for all Sliceattn specific exceptions
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnError, self).__init__(msg)
        self.code = code

class SliceattnUsageError(SliceattnError):
    """
    Signals that the tool was invoked with invalid arguments
    """

    def __init__(self, msg=None, code=EXIT_USAGE):
        super(SliceattnUsageError, self).__init__(msg, code)

class SliceattnConfigError(SliceattnUsageError):
    """
    Signals an unknown or invalid configuration section, key or value
    """

    def __init__(self, msg=None, code=EXIT_USAGE):
        super(SliceattnConfigError, self).__init__(msg, code)

class SliceattnSpecError(SliceattnUsageError):
    """
    Signals a phantom specification that can't be rendered, e.g. a lesion larger than the image
    """

    def __init__(self, msg=None, code=EXIT_USAGE):
        super(SliceattnSpecError, self).__init__(msg, code)

class SliceattnInputError(SliceattnUsageError):
    """
    Signals invalid input data, e.g. an empty slice deck or a key slice outside the volume
    """

    def __init__(self, msg=None, code=EXIT_USAGE):
        super(SliceattnInputError, self).__init__(msg, code)

class SliceattnIOError(SliceattnError):
    """
    Signals that a file or directory could not be read or written
    """

    def __init__(self, msg=None, code=EXIT_IO):
        super(SliceattnIOError, self).__init__(msg, code)

class SliceattnFileFormatError(SliceattnIOError):
    """
    Signals a volume, checkpoint or annotation file with unexpected content
    """

    def __init__(self, msg=None, code=EXIT_IO):
        super(SliceattnFileFormatError, self).__init__(msg, code)

class SliceattnNumericError(SliceattnError):
    """
    Signals a numeric failure, e.g. a non-finite value produced by a forward pass
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnNumericError, self).__init__(msg, code)

class SliceattnDimensionError(SliceattnNumericError):
    """
    Signals incompatible tensor shapes or an axis out of range
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnDimensionError, self).__init__(msg, code)

class SliceattnContractError(SliceattnNumericError):
    """
    Signals a violated precondition of the autodiff engine, e.g. backward on a non-scalar
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnContractError, self).__init__(msg, code)

class SliceattnDegenerateNormalizationError(SliceattnNumericError):
    """
    Signals a max-normalization along an axis slice that is all zero
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnDegenerateNormalizationError, self).__init__(msg, code)

class SliceattnTrainingDivergedError(SliceattnNumericError):
    """
    Signals NaN/Inf in a loss or gradient during training.  The last good checkpoint is kept.
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnTrainingDivergedError, self).__init__(msg, code)

class SliceattnEvaluationError(SliceattnNumericError):
    """
    Signals a report that can't be computed, e.g. sensitivity with no ground truth at all
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnEvaluationError, self).__init__(msg, code)

class SliceattnGradcheckError(SliceattnNumericError):
    """
    Signals analytic gradients that disagree with finite differences
    """

    def __init__(self, msg=None, code=EXIT_NUMERIC):
        super(SliceattnGradcheckError, self).__init__(msg, code)
