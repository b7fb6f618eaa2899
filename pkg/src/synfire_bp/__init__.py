"""Spiking backpropagation circuit simulator and binarized-backprop oracle."""

__version__ = "0.1.0"
