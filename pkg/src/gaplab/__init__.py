"""gaplab: controlled augment-and-retrain filler-gap experiments on recurrent LMs."""

__version__ = "0.1.0"
