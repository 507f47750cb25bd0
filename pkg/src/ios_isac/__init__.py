"""Omni-surface assisted integrated sensing and communication beamforming.

Library + CLI implementing the three-block coordinate-descent optimizer that
maximizes the minimum multi-target sensing SINR under per-user MIMO rate
constraints, for energy-splitting, mode-switching and time-switching surface
protocols, together with channel synthesis, benchmark schemes and a small
embedded cone solver.
"""

__version__ = "0.1.0"
