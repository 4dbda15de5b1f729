"""pulsemap: learn and analyze global state-preparation protocols.

A PPO-trained Gaussian policy produces piecewise-constant two-laser driving
protocols that prepare arbitrary Bloch-sphere superposition states in an
NV-center level model (closed 8-level / open 10-level) and a two-level toy;
the resulting protocol landscapes are compared against per-target
Nelder-Mead optimization.
"""

__version__ = "0.1.0"
