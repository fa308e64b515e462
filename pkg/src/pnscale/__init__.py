"""Multiscale simulation of one-dimensional dislocation dynamics."""
