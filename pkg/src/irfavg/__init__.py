"""LP/VAR impulse-response estimator averaging."""
__version__ = "0.1.0"
