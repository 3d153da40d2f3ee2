"""Testing toolkit for small MNIST image classifiers."""

__version__ = "0.1.0"
