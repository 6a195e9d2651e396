"""Desk-scale simulator and analysis toolkit for a cold-atom four-wave-
mixing photon-pair source: synthetic time-tag streams, coincidence
correlation, noise-convolved coherence fits, and non-classicality metrics.
"""

__version__ = "0.1.0"
