"""Numerical engine: tape autodiff, second-order jets, quadrature and sampling."""
