"""Delay-Doppler channel estimation for OTFS with fractional delay and Doppler."""

__version__ = "0.1.0"
