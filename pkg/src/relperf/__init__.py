"""Relative-performance CRRA games: lattice BSDE solvers and verification."""
