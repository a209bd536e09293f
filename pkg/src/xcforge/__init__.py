"""Meta-GGA exchange-correlation enhancement factors: evaluation, constraint
checks, parameter fitting and island-model evolutionary search."""

__version__ = "0.1.0"
