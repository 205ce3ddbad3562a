"""t-product tensor Kaczmarz solvers with Gearhart-Koshy acceleration."""

__version__ = "0.1.0"
