"""Mean-field-type game scenario toolkit.

Solvers and simulators for a family of games in which payoffs and dynamics
depend on distributions of states and controls: linear-quadratic Riccati
sweeps, imitative route learning, epidemic spread control, coupled oscillator
and thermal ensembles, power dispatch, delayed prosumer markets, cloud
pricing, bandwidth sharing, and spatial coordination.
"""

__version__ = "0.1.0"

from .core import Path, RandomStream, TimeGrid

__all__ = ["Path", "RandomStream", "TimeGrid", "__version__"]
