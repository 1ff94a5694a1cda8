"""Multi-UAV data collection with an Age-of-Information objective.

The package bundles a small reverse-mode autodiff engine (``aoi_marl.nn``),
the coverage environment (``aoi_marl.env``), graph-recurrent Q-policies
(``aoi_marl.encoder``), a monotonic mixing network (``aoi_marl.mixer``),
the centralized training loop (``aoi_marl.trainer``) and an experiment
CLI (``aoi_marl.cli``).
"""

__version__ = "0.1.0"
