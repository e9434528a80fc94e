"""Exception types shared across the package."""


class DataError(Exception):
    """Bad or inconsistent input data (ingestion, labeling, placement)."""


class DivergenceError(Exception):
    """Training produced NaN or Inf parameters."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite parameters) at epoch {epoch}")
