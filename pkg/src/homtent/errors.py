"""Exceptions mapped to CLI exit codes: ConfigError -> 2, SolverError -> 3."""


class ConfigError(Exception):
    pass


class ResolutionError(ConfigError):
    """Grid too coarse for the finest coefficient period."""


class SolverError(Exception):
    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
