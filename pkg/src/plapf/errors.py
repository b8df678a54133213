"""Exception hierarchy.

Everything raised on purpose derives from :class:`PlapfError` so the CLI can
map failures onto exit codes without catching unrelated bugs.
"""


class PlapfError(Exception):
    pass


class InvalidGraphError(PlapfError, ValueError):
    pass


class DatasetLoadError(PlapfError):
    """Malformed dataset directory. Message names the file and line."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class SplitError(PlapfError, ValueError):
    pass


class ConfigError(PlapfError, ValueError):
    pass


class ShapeError(PlapfError, ValueError):
    pass


class FitError(PlapfError, ValueError):
    pass


class DegenerateDegreeError(PlapfError, ValueError):
    pass


class DivergenceError(PlapfError, ArithmeticError):
    def __init__(self, iteration, message=None):
        super().__init__(message or f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


class EigenDecompositionError(PlapfError):
    pass


class SystemMismatchError(PlapfError, ValueError):
    pass


class TrainingError(PlapfError, ValueError):
    pass
