"""Exception hierarchy shared by every layer of the engine."""


class DESError(Exception):
    """Base class for errors reported to the user without ending a session."""


class ParseError(DESError):
    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class TypeConsistencyError(DESError):
    pass


class SafetyError(DESError):
    pass


class StratificationError(DESError):
    pass


class PersistenceError(DESError):
    pass


class CompileError(DESError):
    pass


class BackendError(DESError):
    def __init__(self, message, sql=None):
        text = message if sql is None else f"{message}\n  SQL: {sql}"
        super().__init__(text)
        self.sql = sql


class UnknownConnectionError(BackendError):
    pass


class CommandError(DESError):
    pass
