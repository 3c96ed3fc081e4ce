"""Numerical laboratory for curved Nikodym maximal functions."""
