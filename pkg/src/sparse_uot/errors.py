"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed or inconsistent user input."""


class ParseError(InputError):
    """A data file could not be parsed.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericalError(ArithmeticError):
    """A numerical routine failed (non-finite values, factorization failure)."""


class InfeasiblePlanError(InputError):
    """A transport plan violates the per-column sparsity budget."""

    def __init__(self, column, count, budget):
        self.column = column
        self.count = count
        self.budget = budget
        super().__init__(
            f"column {column} has {count} non-sparse entries, exceeding the budget of {budget}"
        )


class CertificateUnavailable(InputError):
    """Dual certificates need a strictly positive quadratic regularizer."""
