"""cbcporo: cell-by-cell Biot poroelasticity solver and experiment harness."""

__version__ = "0.1.0"
