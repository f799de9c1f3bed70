"""Gridless atomic-norm channel estimation and single-BS localization for mmWave MIMO-OFDM."""

__version__ = "0.1.0"
