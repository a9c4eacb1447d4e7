"""Numerical VT-harmonic map heat flow on embedded targets."""
