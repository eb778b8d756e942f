"""Exception types raised across the package.

Every error carries a short machine-readable ``code`` so that the command line
front-end can report failures uniformly.
"""


class LungmapError(Exception):
    code = "error"

    def __init__(self, message=None, **context):
        self.context = context
        super().__init__(message or self.code)


class PhantomTooSmall(LungmapError, ValueError):
    code = "phantom-too-small"


class SolverDiverged(LungmapError, FloatingPointError):
    code = "solver-diverged"

    def __init__(self, step, event=None):
        msg = f"solver-diverged at step {step}"
        if event is not None:
            msg += f" (event {event})"
        super().__init__(msg, step=step, event=event)
        self.step = step
        self.event = event


class AttenuationFitFailed(LungmapError, ValueError):
    code = "attenuation-fit-failed"


class CalibrationDegenerate(LungmapError, ValueError):
    code = "calibration-degenerate"


class BadTensorHeader(LungmapError, ValueError):
    code = "bad-tensor-header"


class CheckpointIncompatible(LungmapError, ValueError):
    code = "checkpoint-incompatible"


class ConfigError(LungmapError, ValueError):
    code = "config-invalid"
