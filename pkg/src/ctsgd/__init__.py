"""Joint online parameter estimation and optimal sensor placement for
partially observed diffusions via continuous-time two-timescale stochastic
gradient descent."""

__version__ = "0.1.0"
