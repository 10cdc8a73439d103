"""Exception hierarchy. The CLI maps each family to an exit code."""


class GridSynthError(Exception):
    exit_code = 1


class InputError(GridSynthError):
    """Malformed or inconsistent input data."""

    exit_code = 1


class NetworkError(InputError):
    pass


class SeriesError(InputError):
    pass


class TableError(InputError):
    pass


class SolverError(GridSynthError):
    """The QP solver failed or declared a subproblem infeasible."""

    exit_code = 2

    def __init__(self, message, stage=None, week=None):
        ctx = []
        if stage is not None:
            ctx.append(f"stage={stage}")
        if week is not None:
            ctx.append(f"week={week}")
        if ctx:
            message = f"{message} ({', '.join(ctx)})"
        super().__init__(message)
        self.stage = stage
        self.week = week


class ValidationError(GridSynthError):
    exit_code = 3
