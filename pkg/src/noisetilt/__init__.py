"""Noise-space reward tilting for frozen generators: a residual noise
network trained with an L2-minus-reward objective, plus the numerical
oracles, baselines, and experiment runner around it."""

__version__ = "0.1.0"
