"Exceptions raised by degkit."


class DegkitError(Exception):
    def __init__(self, msg):
        Exception.__init__(self, msg)
        self.message = msg


class ParseError(DegkitError):
    "A dataset line could not be decoded."

    def __init__(self, msg, line=None):
        if line is not None:
            msg = f"line {line}: {msg}"
        DegkitError.__init__(self, msg)
        self.line = line


class ValidationError(DegkitError):
    "A record violates the dataset schema; 'field' names the offending field."

    def __init__(self, field, detail, line=None):
        msg = f"invalid '{field}': {detail}"
        if line is not None:
            msg = f"line {line}: {msg}"
        DegkitError.__init__(self, msg)
        self.field = field
        self.detail = detail
        self.line = line


class MissingBppError(DegkitError, FileNotFoundError):
    pass


class BppFormatError(DegkitError):
    pass


class StructureError(DegkitError):
    pass


class UnbalancedStructureError(StructureError):
    def __init__(self, msg, position=None):
        StructureError.__init__(self, msg)
        self.position = position


class UnsupportedNotationError(StructureError):
    def __init__(self, msg, position=None):
        StructureError.__init__(self, msg)
        self.position = position


class RankDeficientError(DegkitError):
    pass


class UndefinedValueError(DegkitError, ValueError):
    "A statistic or physical quantity is undefined for the given input."


class MissingPredictionError(DegkitError, KeyError):
    def __init__(self, construct_id, position, column):
        DegkitError.__init__(
            self,
            f"no prediction for construct '{construct_id}', position {position}, column '{column}'",
        )
        self.construct_id = construct_id
        self.position = position
        self.column = column

    def __str__(self):
        return self.message


class CoverageMismatchError(DegkitError):
    pass


class InfeasibleSplitError(DegkitError):
    def __init__(self, msg, max_private=None):
        DegkitError.__init__(self, msg)
        self.max_private = max_private


class TrainingDivergedError(DegkitError, FloatingPointError):
    pass


class ModelFormatError(DegkitError):
    pass


class PositionError(DegkitError, IndexError):
    pass
