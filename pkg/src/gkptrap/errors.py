"""Exception and warning types shared across the package."""


class GkpTrapError(Exception):
    """Base class for errors raised by gkptrap."""


class InvalidDimension(GkpTrapError, ValueError):
    pass


class InvalidInput(GkpTrapError, ValueError):
    pass


class InvalidParameters(GkpTrapError, ValueError):
    pass


class DegeneratePostselection(GkpTrapError, ArithmeticError):
    """A postselected branch has (numerically) zero norm."""


class TruncationWarning(UserWarning):
    """Population reached the top of the truncated Fock space."""


class PhysicsWarning(UserWarning):
    """A model assumption (paraxial beam, far detuning) is only marginally met."""
