"""Online change point detection for Poisson point process time series."""
__version__ = "0.1.0"
