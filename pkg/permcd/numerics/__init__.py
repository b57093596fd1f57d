"""Numerical kernels: matrix families, coordinate descent, expectations, bounds and rates"""
