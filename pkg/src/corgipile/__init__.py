"""Out-of-core SGD with CorgiPile two-level shuffling."""

__version__ = "0.1.0"
