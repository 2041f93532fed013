"""Grid-based crime hot-spot forecasting, selection, trial simulation and evaluation."""

__version__ = "0.1.0"
