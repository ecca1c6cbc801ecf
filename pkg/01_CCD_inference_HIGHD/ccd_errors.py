# ERRORS SHARED BY ALL CCD MODULES


class InvalidInputError(ValueError):
    """Input violates a documented precondition (bad track, unknown agent, infeasible spec...)."""


class ParseError(InvalidInputError):
    """
    Malformed recording file.

    :param path: file the problem was found in
    :param line: 1-based line number (header is line 1), None if unknown
    :param reason: what is wrong with the line
    """

    def __init__(self, path, line, reason):
        self.path = str(path)
        self.line = line
        self.reason = reason
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {reason}")
