"""Exception hierarchy. The CLI maps each class to an exit code."""


class MeshRefineError(Exception):
    exit_code = 1


class ConfigError(MeshRefineError, ValueError):
    """Bad user configuration or command-line arguments."""

    exit_code = 2


class DataError(MeshRefineError, ValueError):
    """Malformed or inconsistent input files (meshes, fixtures, manifests)."""

    exit_code = 3


class MeshError(DataError):
    pass


class NumericalError(MeshRefineError, ArithmeticError):
    """A non-finite value appeared during optimization."""

    exit_code = 4


class StageError(MeshRefineError):
    """Failure inside one pipeline stage; wraps the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
