""" Exceptions raised across the pipeline """

from typing import Optional, Sequence


class StonetError(Exception):
    pass


class ConfigError(StonetError):
    pass


class ShapeError(StonetError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        listed = ' vs '.join(str(s) for s in self.shapes)
        super().__init__(f'{op}: incompatible shapes {listed}')


class SolverError(StonetError):
    """
    A linear solve that did not reach its tolerance.

    :param residuals: relative residual after every iteration
    :param step: time step index when raised from a transient run
    """
    def __init__(self, message: str, residuals: Sequence[float] = (),
                 step: Optional[int] = None):
        self.residuals = list(residuals)
        self.step = step
        if step is not None:
            message = f'step {step}: {message}'
        if self.residuals:
            message += f' (last residual {self.residuals[-1]:.3e} after {len(self.residuals)} iterations)'
        super().__init__(message)


class DatasetFormatError(StonetError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f'{message} at byte offset {offset}'
        super().__init__(message)


class TrainingError(StonetError):
    def __init__(self, message: str, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f'{message} (epoch {epoch}, batch {batch})')


class StageError(StonetError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f'stage {stage!r} failed: {cause}')


class GradientError(StonetError):
    pass
