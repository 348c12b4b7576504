class MisregError(Exception):
    """Base error; exit_code is what the command line returns for it"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InputError(MisregError, ValueError):
    """Malformed data, invalid parameters or unreadable files"""

    exit_code = 1


class NumericalError(MisregError, ArithmeticError):
    """Factorization, identification or design failures"""

    exit_code = 2
