"""Desk-scale visuo-tactile imitation learning testbench.

Planar plug-insertion world with a synthetic bead tactile sensor, contrastive
vision-tactile encoder pretraining, diffusion and chunked-transformer policy
heads, and an evaluation harness with distribution-shift diagnostics.
"""

__version__ = "0.1.0"

from .config import EnvConfig

__all__ = ["EnvConfig", "__version__"]
