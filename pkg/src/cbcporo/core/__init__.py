"""Mesh, discretization, assembly, solvers and preconditioners."""
