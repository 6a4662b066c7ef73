"""Exception hierarchy.

Every error carries a ``kind`` used by the command line front end to pick an
exit code: ``"assumption"`` errors mean a hypothesis of the construction
looks violated (exit 2), ``"numerical"`` errors mean a solver failed (exit 3).
"""


class ActionAngleError(Exception):
    kind = "numerical"


class InvalidInputError(ActionAngleError, ValueError):
    kind = "usage"


class EvaluationError(ActionAngleError):
    pass


class DegeneracyError(ActionAngleError):
    """Singular symplectic matrix or singular basis block."""

    kind = "assumption"


class NonRegularPointError(ActionAngleError):
    kind = "assumption"


class InvolutionError(ActionAngleError):
    kind = "assumption"


class IncompletenessError(ActionAngleError):
    """Step budget exhausted: the flow may not be complete."""

    kind = "assumption"


class BlowUpError(ActionAngleError):
    kind = "assumption"


class ConservationError(ActionAngleError):
    pass


class RefinementError(ActionAngleError):
    pass


class DegenerateFibreError(ActionAngleError):
    kind = "assumption"


class InconsistentLatticeError(ActionAngleError):
    pass


class ShrinkNeighbourhoodError(ActionAngleError):
    kind = "assumption"


class SectionError(ActionAngleError):
    pass


class OffFibreError(ActionAngleError):
    pass


class ChartError(ActionAngleError):
    pass


class NonExactnessError(ActionAngleError):
    kind = "assumption"


class ReparametrizationError(ActionAngleError, ValueError):
    kind = "usage"


class NonDiffeomorphicLeavesError(ActionAngleError):
    kind = "assumption"


class ParseError(ActionAngleError, ValueError):
    kind = "usage"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        super().__init__(message + where)


class UnknownIdentifierError(ParseError):
    pass


class UnknownSystemError(ActionAngleError, LookupError):
    kind = "usage"
