"""Exception types shared across the package."""


class CheckpointError(Exception):
    """Checkpoint file is unreadable: bad magic, version, truncation, or
    a parameter table that disagrees with the stored configuration."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""

    def __init__(self, step, last_good_checkpoint):
        super().__init__(
            f"non-finite loss at step {step}; "
            f"last good parameters saved to {last_good_checkpoint}"
        )
        self.step = step
        self.last_good_checkpoint = last_good_checkpoint
