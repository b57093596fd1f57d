"""Coordinate descent orderings on structured convex quadratics."""
__version__ = "1.0.0"
