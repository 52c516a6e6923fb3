"""Exception hierarchy for cbcporo."""

from __future__ import annotations


class CbcPoroError(Exception):
    """Base class for every error raised by cbcporo."""


class MeshError(CbcPoroError, ValueError):
    """Mesh size or interface placement is invalid."""


class BoundaryConfigError(CbcPoroError, ValueError):
    """Boundary partition is invalid (unknown segment, empty Gamma_d)."""


class UnsupportedDegreeError(CbcPoroError, ValueError):
    """Requested polynomial degree is not implemented."""


class SubdomainMismatchError(CbcPoroError, ValueError):
    """Two spaces that must share a subdomain do not."""


class ConfigError(CbcPoroError, ValueError):
    """Experiment configuration is invalid."""


class NotSPDError(CbcPoroError, ArithmeticError):
    """A factorization met a non-positive pivot."""

    def __init__(self, pivot: int, block: str | None = None, value: float | None = None):
        self.pivot = int(pivot)
        self.block = block
        self.value = value
        where = f" in block '{block}'" if block else ""
        detail = f" (pivot value {value:.3e})" if value is not None else ""
        super().__init__(f"matrix is not SPD{where}: non-positive pivot at index {self.pivot}{detail}")

    def with_block(self, block: str) -> NotSPDError:
        return NotSPDError(self.pivot, block=block, value=self.value)


class SmwBreakdownError(CbcPoroError, ArithmeticError):
    """Sherman-Morrison denominator 1 - y^T A^-1 y vanished."""

    def __init__(self, denominator: float):
        self.denominator = float(denominator)
        super().__init__(f"SMW breakdown: |1 - y^T A^-1 y| = {abs(self.denominator):.3e} < 1e-12")
