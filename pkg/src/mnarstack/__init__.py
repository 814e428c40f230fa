"""Not-at-random sensitivity analysis by weighted stacked multiple imputation."""

__version__ = "0.1.0"
