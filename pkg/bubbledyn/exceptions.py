class BubbleDynError(Exception):
    pass


class TensorFormatError(BubbleDynError):
    """Tensor file does not follow the binary layout.

    Args:
        path (str): Path to the file that failed to parse.
        reason (str): What part of the layout is broken.

    """

    def __init__(self, path, reason):
        self.path = path
        self.reason = reason
        super(TensorFormatError, self).__init__(
            "Malformed tensor file \"{}\": {}".format(path, reason)
        )


class ShapeError(BubbleDynError):
    def __init__(self, expected, got, message=None):
        self.expected = tuple(expected) if expected is not None else None
        self.got = tuple(got)
        if not message:
            message = "Expected shape {} got {}".format(
                self.expected, self.got
            )
        super(ShapeError, self).__init__(message)


class SolverError(BubbleDynError):
    """Quasi-static equilibrium solve did not converge.

    Args:
        residual (float): Projected gradient norm at the last iterate.
        iterations (int): Number of iterations performed.

    """

    def __init__(self, residual, iterations):
        self.residual = residual
        self.iterations = iterations
        super(SolverError, self).__init__(
            "Equilibrium solver did not converge after {} iterations"
            " (residual {:.3e})".format(iterations, residual)
        )


class ObservationError(BubbleDynError):
    pass


class NoImprintError(ObservationError):
    def __init__(self, message=None):
        if not message:
            message = "No membrane pixel passed the imprint filter"
        super(NoImprintError, self).__init__(message)


class DegenerateImprintError(ObservationError):
    def __init__(self, rank, message=None):
        self.rank = rank
        if not message:
            message = (
                "Point spread has rank {} which is not enough for alignment"
            ).format(rank)
        super(DegenerateImprintError, self).__init__(message)


class TrainingError(BubbleDynError):
    def __init__(self, reason, epoch=None):
        self.reason = reason
        self.epoch = epoch
        message = reason
        if epoch is not None:
            message = "Training failed in epoch {}: {}".format(epoch, reason)
        super(TrainingError, self).__init__(message)


class ControllerError(BubbleDynError):
    pass


class InfeasibleActionError(BubbleDynError):
    def __init__(self, task, attempts):
        self.task = task
        self.attempts = attempts
        super(InfeasibleActionError, self).__init__(
            "No action satisfying the '{}' constraint found in {} attempts"
            .format(task, attempts)
        )


class ConfigError(BubbleDynError):
    pass


class CollectionError(BubbleDynError):
    def __init__(self, tool, attempts):
        self.tool = tool
        self.attempts = attempts
        super(CollectionError, self).__init__(
            "Tool \"{}\" kept failing, {} episodes discarded".format(
                tool, attempts
            )
        )
